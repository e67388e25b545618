//! End-to-end batch operations: trace or metrics in, report tables out.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    aggregate_mean, delta_cos, detect_series_locking, ent_slope, seesaw_correlation,
    variance_profile, CorrelationReport, DeltaCos, LockingParams, LockingReport, VarianceProfile,
};
use crate::detect::{
    detect, detect_sentences, meteor_lite, rouge_l, select_best_reference, sentence_fraction,
    DetectionVerdict, DetectorConfig, Flag, SemanticOrigin,
};
use crate::drift::{build_available_series, DriftSeries};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::report::{self, Metric, MetricsTable};
use crate::trace::{Question, RoundRecord, Trace, Track};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalyzeOptions {
    pub detector: DetectorConfig,
    pub locking: LockingParams,
    /// Tracks to report; empty means all.
    pub tracks: Vec<Track>,
    /// Also run locking on every per-question series.
    pub per_question: bool,
    pub execution: Execution,
}

impl AnalyzeOptions {
    fn wants(&self, track: Track) -> bool {
        self.tracks.is_empty() || self.tracks.contains(&track)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockingSummary {
    pub params: LockingParams,
    pub aggregate: Vec<LockingReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_question: Vec<LockingReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDynamics {
    pub model: String,
    pub delta_cos: Option<DeltaCos>,
    pub ent_slope: BTreeMap<Track, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub models: Vec<ModelDynamics>,
    /// Mean ΔCos against the relevant-track entropy slope across models.
    pub seesaw: Option<CorrelationReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub variance: Vec<VarianceProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub table: MetricsTable,
    pub locking: LockingSummary,
    pub dynamics: Dynamics,
    pub per_question: Vec<DriftSeries>,
    pub warnings: Vec<String>,
}

/// One detector verdict as written to `verdicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub question_id: String,
    pub track: Track,
    pub round: u32,
    pub h_sem: Flag,
    pub h_ext: Flag,
    pub h_nli: Flag,
    pub overall: bool,
    pub partial: bool,
    pub semantic_origin: Option<SemanticOrigin>,
    pub sentence_flags: Vec<bool>,
    /// Flagged-sentence fraction; absent for an answer with no sentences.
    pub intra_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub track: Track,
    pub round: u32,
    pub n: usize,
    pub qa_halluc_rate: f64,
    /// Absent when no answer in the group had a sentence.
    pub intra_halluc_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionRun {
    pub verdicts: Vec<VerdictRecord>,
    pub rates: Vec<RateRow>,
    /// Per-record failures such as undetectable verdicts.
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
}

struct Scored {
    verdict: VerdictRecord,
    rouge_l: f64,
    meteor: f64,
    bert_f1: Option<f64>,
}

fn question_index(questions: &[Question]) -> BTreeMap<&str, &Question> {
    questions.iter().map(|q| (q.id.as_str(), q)).collect()
}

fn score_record(rec: &RoundRecord, question: &Question, config: &DetectorConfig) -> Result<Scored> {
    let v: DetectionVerdict = detect(&rec.answer, question, &rec.scorers, config)?;
    let sentence_flags = detect_sentences(&rec.answer, question, &rec.scorers, config)?;
    let (_, bert_f1) = select_best_reference(question, rec.scorers.semantic_scores.as_ref());
    Ok(Scored {
        verdict: VerdictRecord {
            question_id: rec.question_id.clone(),
            track: rec.track,
            round: rec.round,
            h_sem: v.h_sem,
            h_ext: v.h_ext,
            h_nli: v.h_nli,
            overall: v.overall,
            partial: v.partial,
            semantic_origin: v.semantic_origin,
            intra_fraction: sentence_fraction(&sentence_flags),
            sentence_flags,
        },
        rouge_l: rouge_l(&rec.answer, &question.best_reference).f1,
        meteor: meteor_lite(&rec.answer, &question.best_reference),
        bert_f1,
    })
}

/// Scores every record of the selected tracks. Failures are collected as
/// diagnostics rather than aborting the batch.
fn score_trace(
    trace: &Trace,
    questions: &[Question],
    options: &AnalyzeOptions,
) -> Result<(Vec<Scored>, Vec<String>)> {
    options.detector.validate()?;
    let index = question_index(questions);
    let records: Vec<&RoundRecord> = trace
        .records
        .values()
        .filter(|r| options.wants(r.track))
        .collect();
    let results = options.execution.map(&records, |rec| {
        let q = index.get(rec.question_id.as_str()).ok_or_else(|| {
            Error::validation(
                rec.key(),
                format!("question `{}` not in dataset", rec.question_id),
            )
        })?;
        score_record(rec, q, &options.detector)
            .map_err(|e| Error::validation(rec.key(), e.to_string()))
    });
    let mut scored = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => scored.push(s),
            Err(e) => failures.push(e.to_string()),
        }
    }
    Ok((scored, failures))
}

fn group_by_round(scored: &[Scored]) -> BTreeMap<(Track, u32), Vec<&Scored>> {
    let mut out: BTreeMap<(Track, u32), Vec<&Scored>> = BTreeMap::new();
    for s in scored {
        out.entry((s.verdict.track, s.verdict.round))
            .or_default()
            .push(s);
    }
    out
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn rates_of(track: Track, round: u32, group: &[&Scored], warnings: &mut Vec<String>) -> RateRow {
    let n = group.len();
    let flagged = group.iter().filter(|s| s.verdict.overall).count();
    let empty = group
        .iter()
        .filter(|s| s.verdict.intra_fraction.is_none())
        .count();
    if empty > 0 {
        warnings.push(format!(
            "{track} round {round}: {empty} answer(s) without sentences excluded from the intra rate"
        ));
    }
    RateRow {
        track,
        round,
        n,
        qa_halluc_rate: flagged as f64 / n as f64,
        intra_halluc_rate: mean(group.iter().filter_map(|s| s.verdict.intra_fraction)),
    }
}

/// Runs the detector over every record of a trace.
pub fn detect_trace(
    trace: &Trace,
    questions: &[Question],
    options: &AnalyzeOptions,
) -> Result<DetectionRun> {
    let (scored, failures) = score_trace(trace, questions, options)?;
    let mut warnings = Vec::new();
    let rates = group_by_round(&scored)
        .into_iter()
        .map(|((track, round), g)| rates_of(track, round, &g, &mut warnings))
        .collect();
    Ok(DetectionRun {
        verdicts: scored.into_iter().map(|s| s.verdict).collect(),
        rates,
        failures,
        warnings,
    })
}

/// Per-question drift series for every selected (question, track) pair,
/// tolerating missing rounds.
pub fn drift_trace(
    trace: &Trace,
    tracks: &[Track],
    execution: Execution,
) -> Result<Vec<DriftSeries>> {
    let keys: Vec<(String, Track)> = trace
        .series_keys()
        .into_iter()
        .filter(|(_, t)| tracks.is_empty() || tracks.contains(t))
        .collect();
    let series = execution.try_map(&keys, |(q, t)| build_available_series(trace, q, *t))?;
    Ok(series.into_iter().flatten().collect())
}

fn locking_and_dynamics(
    table: &MetricsTable,
    options: &AnalyzeOptions,
) -> Result<(LockingSummary, Dynamics, Vec<String>)> {
    options.locking.validate()?;
    let mut warnings = Vec::new();
    let mut aggregate = Vec::new();
    let mut models = Vec::new();
    for m in &table.models {
        let mut slopes = BTreeMap::new();
        let mut by_track = BTreeMap::new();
        for track in Track::ALL.into_iter().filter(|&t| options.wants(t)) {
            let Some(s) = m.drift_series(track) else {
                continue;
            };
            match detect_series_locking(&s, options.locking) {
                Ok(r) => aggregate.push(r),
                Err(e) => warnings.push(format!("locking for {} {track}: {e}", m.model)),
            }
            match ent_slope(&s) {
                Ok(v) => {
                    slopes.insert(track, v);
                }
                Err(e) => warnings.push(format!("entropy slope for {} {track}: {e}", m.model)),
            }
            by_track.insert(track, s);
        }
        let gap = match (
            by_track.get(&Track::Relevant),
            by_track.get(&Track::Irrelevant),
        ) {
            (Some(rel), Some(irr)) => match delta_cos(rel, irr) {
                Ok(d) => Some(d),
                Err(e) => {
                    warnings.push(format!("cosine gap for {}: {e}", m.model));
                    None
                }
            },
            _ => None,
        };
        models.push(ModelDynamics {
            model: m.model.clone(),
            delta_cos: gap,
            ent_slope: slopes,
        });
    }
    let pairs: Vec<(String, f64, f64)> = models
        .iter()
        .filter_map(|d| {
            Some((
                d.model.clone(),
                d.delta_cos.as_ref()?.mean,
                *d.ent_slope.get(&Track::Relevant)?,
            ))
        })
        .collect();
    let seesaw = if pairs.len() >= 3 {
        match seesaw_correlation(&pairs) {
            Ok(r) => Some(r),
            Err(e) => {
                warnings.push(format!("seesaw correlation: {e}"));
                None
            }
        }
    } else {
        None
    };
    Ok((
        LockingSummary {
            params: options.locking,
            aggregate,
            per_question: Vec::new(),
        },
        Dynamics {
            models,
            seesaw,
            variance: Vec::new(),
        },
        warnings,
    ))
}

/// Analyzes a table of round-level metrics, as loaded from a metrics
/// directory. The table itself is re-emitted unchanged.
pub fn analyze_table(table: MetricsTable, options: &AnalyzeOptions) -> Result<Analysis> {
    let mut table = table;
    if !options.tracks.is_empty() {
        for m in &mut table.models {
            m.values.retain(|k, _| options.tracks.contains(&k.0));
        }
    }
    let (locking, dynamics, warnings) = locking_and_dynamics(&table, options)?;
    Ok(Analysis {
        table,
        locking,
        dynamics,
        per_question: Vec::new(),
        warnings,
    })
}

/// Full analysis of a trace. Hallucination columns need the dataset; without
/// it only the drift side is reported.
pub fn analyze_trace(
    trace: &Trace,
    questions: Option<&[Question]>,
    options: &AnalyzeOptions,
) -> Result<Analysis> {
    let model = trace.manifest.model_name.clone();
    let mut warnings = Vec::new();
    let mut table = MetricsTable::default();
    let entry = table.model_mut(&model);
    entry.partial = trace.partial;
    if trace.partial {
        warnings.push("trace is partial; reporting available rounds".to_string());
    }

    let per_question = drift_trace(trace, &options.tracks, options.execution)?;
    for track in Track::ALL.into_iter().filter(|&t| options.wants(t)) {
        let series: Vec<DriftSeries> = per_question
            .iter()
            .filter(|s| s.track == track)
            .cloned()
            .collect();
        if series.is_empty() {
            continue;
        }
        entry.set_drift_series(&aggregate_mean(&series, &model, track));
    }

    if let Some(questions) = questions {
        let (scored, failures) = score_trace(trace, questions, options)?;
        warnings.extend(failures);
        for ((track, round), g) in group_by_round(&scored) {
            let rates = rates_of(track, round, &g, &mut warnings);
            entry.set(track, round, Metric::QaHallucRate, rates.qa_halluc_rate);
            if let Some(intra) = rates.intra_halluc_rate {
                entry.set(track, round, Metric::IntraHallucRate, intra);
            }
            entry.set(
                track,
                round,
                Metric::RougeL,
                mean(g.iter().map(|s| s.rouge_l)).expect("non-empty group"),
            );
            entry.set(
                track,
                round,
                Metric::Meteor,
                mean(g.iter().map(|s| s.meteor)).expect("non-empty group"),
            );
            if g.iter().all(|s| s.bert_f1.is_some()) {
                entry.set(
                    track,
                    round,
                    Metric::BertF1,
                    mean(g.iter().filter_map(|s| s.bert_f1)).expect("non-empty group"),
                );
            }
        }
    } else {
        warnings.push("no dataset given; hallucination metrics skipped".to_string());
    }

    let (mut locking, mut dynamics, more) = locking_and_dynamics(&table, options)?;
    warnings.extend(more);
    if options.per_question {
        for s in &per_question {
            match detect_series_locking(s, options.locking) {
                Ok(r) => locking.per_question.push(r),
                Err(e) => {
                    warnings.push(format!("locking for ({}, {}): {e}", s.question_id, s.track))
                }
            }
        }
    }
    for track in Track::ALL.into_iter().filter(|&t| options.wants(t)) {
        let series: Vec<DriftSeries> = per_question
            .iter()
            .filter(|s| s.track == track)
            .cloned()
            .collect();
        if series.is_empty() {
            continue;
        }
        let profile = variance_profile(&series);
        warnings.extend(
            profile
                .warnings
                .iter()
                .map(|w| format!("{track} variance: {w}")),
        );
        dynamics.variance.push(profile);
    }
    Ok(Analysis {
        table,
        locking,
        dynamics,
        per_question,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes the analysis reports into `dir`, returning the file names written.
pub fn write_analysis(
    analysis: &Analysis,
    dir: &Path,
    format: OutputFormat,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(&str, String)> = Vec::new();
    match format {
        OutputFormat::Csv => {
            let has = |ms: &[Metric]| {
                analysis
                    .table
                    .models
                    .iter()
                    .any(|m| m.values.keys().any(|k| ms.contains(&k.2)))
            };
            if has(&Metric::HALLUC) {
                files.push((report::HALLUC_FILE, report::halluc_csv(&analysis.table)?));
            }
            if has(&Metric::DRIFT) {
                files.push((report::DRIFT_FILE, report::drift_csv(&analysis.table)?));
            }
            files.push((report::SERIES_FILE, report::series_csv(&analysis.table)?));
        }
        OutputFormat::Json => files.push((
            report::METRICS_JSON_FILE,
            report::metrics_json(&analysis.table)?,
        )),
    }
    files.push((report::LOCKING_FILE, pretty(&analysis.locking)?));
    files.push((report::DYNAMICS_FILE, pretty(&analysis.dynamics)?));
    for (name, text) in &files {
        write_file(&dir.join(name), text)?;
    }
    Ok(files.into_iter().map(|f| f.0.to_string()).collect())
}

pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const RATES_FILE: &str = "rates.csv";
pub const RATES_JSON_FILE: &str = "rates.json";

pub fn rates_csv(rates: &[RateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["track", "round", "n", "qa_halluc_rate", "intra_halluc_rate"])?;
    for r in rates {
        w.write_record([
            r.track.as_str(),
            &r.round.to_string(),
            &r.n.to_string(),
            &report::format_value(r.qa_halluc_rate),
            &r.intra_halluc_rate
                .map(report::format_value)
                .unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_rates_csv(text: &str) -> Result<Vec<RateRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<RateRow>, _>>()?)
}

pub fn write_detection(
    run: &DetectionRun,
    dir: &Path,
    format: OutputFormat,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut verdicts = String::new();
    for v in &run.verdicts {
        verdicts.push_str(&serde_json::to_string(v)?);
        verdicts.push('\n');
    }
    let rates = match format {
        OutputFormat::Csv => (RATES_FILE, rates_csv(&run.rates)?),
        OutputFormat::Json => (RATES_JSON_FILE, pretty(&run.rates)?),
    };
    write_file(&dir.join(VERDICTS_FILE), &verdicts)?;
    write_file(&dir.join(rates.0), &rates.1)?;
    Ok(vec![VERDICTS_FILE.to_string(), rates.0.to_string()])
}

pub fn load_verdicts(path: &Path) -> Result<Vec<VerdictRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::parse(path, format!("line {}", i + 1), e.to_string()))
        })
        .collect()
}
