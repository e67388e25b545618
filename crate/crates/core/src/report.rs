//! Report tables and their CSV/JSON forms.
//!
//! `halluc_metrics.csv` and `drift_metrics.csv` are wide tables with one row
//! per (model, round) and a `_rel` / `_irr` column pair per metric, in the
//! `Metric` declaration order. `series.csv` is the same
//! data in long form (`model,track,round,metric,value`) for plotting. Numbers
//! are written in shortest round-trip form and every file re-parses into the
//! table it was written from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::drift::{DriftPoint, DriftSeries};
use crate::error::{Error, Result};
use crate::trace::Track;

pub const HALLUC_FILE: &str = "halluc_metrics.csv";
pub const DRIFT_FILE: &str = "drift_metrics.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const LOCKING_FILE: &str = "locking.json";
pub const DYNAMICS_FILE: &str = "dynamics.json";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const DRIFT_SERIES_FILE: &str = "drift_series.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RougeL,
    Meteor,
    BertF1,
    QaHallucRate,
    IntraHallucRate,
    CosDrift,
    EntDrift,
    JsDrift,
    SpearmanDrift,
}

impl Metric {
    pub const HALLUC: [Metric; 5] = [
        Metric::RougeL,
        Metric::Meteor,
        Metric::BertF1,
        Metric::QaHallucRate,
        Metric::IntraHallucRate,
    ];
    pub const DRIFT: [Metric; 4] = [
        Metric::CosDrift,
        Metric::EntDrift,
        Metric::JsDrift,
        Metric::SpearmanDrift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::RougeL => "rouge_l",
            Metric::Meteor => "meteor",
            Metric::BertF1 => "bert_f1",
            Metric::QaHallucRate => "qa_halluc_rate",
            Metric::IntraHallucRate => "intra_halluc_rate",
            Metric::CosDrift => "cos_drift",
            Metric::EntDrift => "ent_drift",
            Metric::JsDrift => "js_drift",
            Metric::SpearmanDrift => "spearman_drift",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::HALLUC
            .into_iter()
            .chain(Metric::DRIFT)
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown metric `{s}`")))
    }
}

/// Round-level metrics of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelMetrics {
    pub model: String,
    pub partial: bool,
    pub values: BTreeMap<(Track, u32, Metric), f64>,
}

impl ModelMetrics {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, track: Track, round: u32, metric: Metric, value: f64) {
        self.values.insert((track, round, metric), value);
    }

    pub fn get(&self, track: Track, round: u32, metric: Metric) -> Option<f64> {
        self.values.get(&(track, round, metric)).copied()
    }

    /// Values of one metric ordered by round.
    pub fn series(&self, track: Track, metric: Metric) -> Vec<(u32, f64)> {
        self.values
            .iter()
            .filter(|((t, _, m), _)| *t == track && *m == metric)
            .map(|((_, r, _), v)| (*r, *v))
            .collect()
    }

    pub fn tracks(&self) -> Vec<Track> {
        let set: BTreeSet<Track> = self.values.keys().map(|k| k.0).collect();
        set.into_iter().collect()
    }

    /// The drift columns as a series, over rounds where all four are present.
    pub fn drift_series(&self, track: Track) -> Option<DriftSeries> {
        let rounds: BTreeSet<u32> = self
            .series(track, Metric::CosDrift)
            .into_iter()
            .map(|p| p.0)
            .collect();
        let points: Vec<DriftPoint> = rounds
            .into_iter()
            .filter_map(|r| {
                Some(DriftPoint {
                    round: r,
                    cos_drift: self.get(track, r, Metric::CosDrift)?,
                    ent_drift: self.get(track, r, Metric::EntDrift)?,
                    js_drift: self.get(track, r, Metric::JsDrift)?,
                    spearman: self.get(track, r, Metric::SpearmanDrift)?,
                })
            })
            .collect();
        (!points.is_empty()).then(|| DriftSeries {
            question_id: self.model.clone(),
            track,
            points,
        })
    }

    pub fn set_drift_series(&mut self, series: &DriftSeries) {
        for p in &series.points {
            self.set(series.track, p.round, Metric::CosDrift, p.cos_drift);
            self.set(series.track, p.round, Metric::EntDrift, p.ent_drift);
            self.set(series.track, p.round, Metric::JsDrift, p.js_drift);
            self.set(series.track, p.round, Metric::SpearmanDrift, p.spearman);
        }
    }

    fn rounds_with(&self, metrics: &[Metric]) -> BTreeSet<u32> {
        self.values
            .keys()
            .filter(|(_, _, m)| metrics.contains(m))
            .map(|(_, r, _)| *r)
            .collect()
    }

    fn merge(&mut self, other: ModelMetrics) {
        self.partial |= other.partial;
        self.values.extend(other.values);
    }
}

/// Metrics of several models, in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub models: Vec<ModelMetrics>,
}

impl MetricsTable {
    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.model == name)
    }

    pub fn model_mut(&mut self, name: &str) -> &mut ModelMetrics {
        if let Some(i) = self.models.iter().position(|m| m.model == name) {
            &mut self.models[i]
        } else {
            self.models.push(ModelMetrics::new(name));
            self.models.last_mut().expect("just pushed")
        }
    }

    pub fn merge(&mut self, other: MetricsTable) {
        for m in other.models {
            let name = m.model.clone();
            self.model_mut(&name).merge(m);
        }
    }

    fn has_metric(&self, metric: Metric) -> bool {
        self.models
            .iter()
            .any(|m| m.values.keys().any(|(_, _, x)| *x == metric))
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

fn wide_columns(table: &MetricsTable, metrics: &[Metric]) -> Vec<Metric> {
    metrics
        .iter()
        .copied()
        .filter(|&m| m != Metric::BertF1 || table.has_metric(Metric::BertF1))
        .collect()
}

fn write_wide(table: &MetricsTable, metrics: &[Metric]) -> Result<String> {
    let cols = wide_columns(table, metrics);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string(), "round".to_string()];
    for m in &cols {
        for t in Track::ALL {
            header.push(format!("{}_{}", m.name(), t.short()));
        }
    }
    header.push("partial".into());
    w.write_record(&header)?;
    for model in &table.models {
        for round in model.rounds_with(&cols) {
            let mut row = vec![model.model.clone(), round.to_string()];
            for &m in &cols {
                for t in Track::ALL {
                    row.push(model.get(t, round, m).map(format_value).unwrap_or_default());
                }
            }
            row.push(model.partial.to_string());
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn halluc_csv(table: &MetricsTable) -> Result<String> {
    write_wide(table, &Metric::HALLUC)
}

pub fn drift_csv(table: &MetricsTable) -> Result<String> {
    write_wide(table, &Metric::DRIFT)
}

pub fn series_csv(table: &MetricsTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "track", "round", "metric", "value"])?;
    for model in &table.models {
        for ((track, round, metric), v) in &model.values {
            w.write_record([
                model.model.as_str(),
                track.as_str(),
                &round.to_string(),
                metric.name(),
                &format_value(*v),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn parse_value(s: &str, path: &Path, line: u64) -> Result<f64> {
    s.trim().replace('−', "-").parse::<f64>().map_err(|e| {
        Error::parse(
            path,
            format!("line {line}"),
            format!("bad number `{s}`: {e}"),
        )
    })
}

/// Parses a wide table (either kind) from CSV text. `path` is used in
/// diagnostics only.
pub fn parse_wide_csv(text: &str, path: &Path) -> Result<MetricsTable> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    if headers.get(0) != Some("model") || headers.get(1) != Some("round") {
        return Err(Error::parse(
            path,
            "header",
            "expected `model,round,...` header",
        ));
    }
    let mut columns: Vec<Option<(Metric, Track)>> = Vec::new();
    let mut partial_col = None;
    for (i, h) in headers.iter().enumerate().skip(2) {
        if h == "partial" {
            partial_col = Some(i);
            columns.push(None);
            continue;
        }
        let (name, suffix) = h
            .rsplit_once('_')
            .ok_or_else(|| Error::parse(path, "header", format!("bad column `{h}`")))?;
        let metric: Metric = name
            .parse()
            .map_err(|_| Error::parse(path, "header", format!("bad column `{h}`")))?;
        let track: Track = suffix
            .parse()
            .map_err(|_| Error::parse(path, "header", format!("bad column `{h}`")))?;
        columns.push(Some((metric, track)));
    }
    let mut table = MetricsTable::default();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let model = rec.get(0).unwrap_or_default().to_string();
        let round: u32 =
            rec.get(1).unwrap_or_default().parse().map_err(|e| {
                Error::parse(path, format!("line {line}"), format!("bad round: {e}"))
            })?;
        let entry = table.model_mut(&model);
        if let Some(i) = partial_col {
            entry.partial |= rec.get(i) == Some("true");
        }
        for (i, col) in columns.iter().enumerate() {
            let (Some((metric, track)), Some(cell)) = (col, rec.get(i + 2)) else {
                continue;
            };
            if !cell.is_empty() {
                entry.set(*track, round, *metric, parse_value(cell, path, line)?);
            }
        }
    }
    Ok(table)
}

pub fn parse_series_csv(text: &str, path: &Path) -> Result<MetricsTable> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut table = MetricsTable::default();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let loc = format!("line {line}");
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| Error::parse(path, loc.as_str(), "short row"))
        };
        let track: Track = field(1)?.parse()?;
        let round: u32 = field(2)?
            .parse()
            .map_err(|e| Error::parse(path, loc.as_str(), format!("bad round: {e}")))?;
        let metric: Metric = field(3)?.parse()?;
        let value = parse_value(field(4)?, path, line)?;
        table.model_mut(field(0)?).set(track, round, metric, value);
    }
    Ok(table)
}

/// Loads a metrics directory: any of `halluc_metrics.csv`,
/// `drift_metrics.csv`, or failing both, `series.csv`.
pub fn load_metrics_dir(dir: impl AsRef<Path>) -> Result<MetricsTable> {
    let dir = dir.as_ref();
    let mut table = MetricsTable::default();
    let mut found = false;
    for name in [HALLUC_FILE, DRIFT_FILE] {
        let p = dir.join(name);
        if p.exists() {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            table.merge(parse_wide_csv(&text, &p)?);
            found = true;
        }
    }
    if !found {
        let p = dir.join(SERIES_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        table = parse_series_csv(&text, &p)?;
    }
    Ok(table)
}

#[derive(Serialize, Deserialize)]
struct JsonValue {
    track: Track,
    round: u32,
    metric: Metric,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonModel {
    model: String,
    partial: bool,
    values: Vec<JsonValue>,
}

/// JSON form of a table: one object per model with a flat value list.
pub fn metrics_json(table: &MetricsTable) -> Result<String> {
    let models: Vec<JsonModel> = table
        .models
        .iter()
        .map(|m| JsonModel {
            model: m.model.clone(),
            partial: m.partial,
            values: m
                .values
                .iter()
                .map(|(&(track, round, metric), &value)| JsonValue {
                    track,
                    round,
                    metric,
                    value,
                })
                .collect(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&models)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_metrics_json(text: &str) -> Result<MetricsTable> {
    let models: Vec<JsonModel> = serde_json::from_str(text)?;
    let mut table = MetricsTable::default();
    for jm in models {
        let m = table.model_mut(&jm.model);
        m.partial |= jm.partial;
        for v in jm.values {
            m.set(v.track, v.round, v.metric, v.value);
        }
    }
    Ok(table)
}

/// Per-question drift series, one row per (question, track, round).
pub fn drift_series_csv(series: &[DriftSeries]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "question_id",
        "track",
        "round",
        "cos_drift",
        "ent_drift",
        "js_drift",
        "spearman_drift",
    ])?;
    for s in series {
        for p in &s.points {
            w.write_record([
                s.question_id.as_str(),
                s.track.as_str(),
                &p.round.to_string(),
                &format_value(p.cos_drift),
                &format_value(p.ent_drift),
                &format_value(p.js_drift),
                &format_value(p.spearman),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Deserialize)]
struct DriftRow {
    question_id: String,
    track: Track,
    round: u32,
    cos_drift: f64,
    ent_drift: f64,
    js_drift: f64,
    spearman_drift: f64,
}

pub fn parse_drift_series_csv(text: &str, path: &Path) -> Result<Vec<DriftSeries>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let mut out: Vec<DriftSeries> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: DriftRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(path, format!("line {line}"), e.to_string()))?;
        let point = DriftPoint {
            round: row.round,
            cos_drift: row.cos_drift,
            ent_drift: row.ent_drift,
            js_drift: row.js_drift,
            spearman: row.spearman_drift,
        };
        match out.last_mut() {
            Some(s) if s.question_id == row.question_id && s.track == row.track => {
                s.points.push(point)
            }
            _ => out.push(DriftSeries {
                question_id: row.question_id,
                track: row.track,
                points: vec![point],
            }),
        }
    }
    Ok(out)
}
