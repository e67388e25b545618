//! Dynamics analyses over drift series: attention locking, plateaus,
//! variance profiles, the relevant-vs-irrelevant cosine gap and the
//! correlation between that gap and the entropy-drift slope across models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::drift::{spearman_correlation, DriftPoint, DriftSeries};
use crate::error::{Error, Result};
use crate::trace::{Track, DEFAULT_EPSILON_PAD};

/// Absolute slack on band comparisons so that values transcribed at four
/// decimals compare as their decimal text says (0.6896 − 0.6886 ≤ 0.001).
pub const BAND_SLACK: f64 = 1e-12;

/// Thresholds of the locking rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockingParams {
    /// Band on consecutive JS-drift differences.
    pub delta: f64,
    /// Bound on |Spearman drift|.
    pub tau: f64,
    /// Number of consecutive differences that must stay within `delta`.
    pub k: usize,
}

impl Default for LockingParams {
    fn default() -> Self {
        Self {
            delta: 0.001,
            tau: 0.02,
            k: 2,
        }
    }
}

impl LockingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0)
            || !(self.tau.is_finite() && self.tau > 0.0)
        {
            return Err(Error::Invalid("delta and tau must be positive".into()));
        }
        if self.k < 1 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockingReport {
    /// Question id, or a model / aggregate label.
    pub label: String,
    pub track: Option<Track>,
    pub locked: bool,
    pub lock_round: Option<u32>,
    pub params: LockingParams,
}

/// A metric indexed by round.
pub type RoundSeries = [(u32, f64)];

fn within(d: f64, band: f64) -> bool {
    d.abs() <= band + BAND_SLACK
}

/// Position of the first sample preceded by `k` consecutive differences all
/// within `delta` and for which `extra(i)` holds.
fn first_saturated(
    values: &[f64],
    delta: f64,
    k: usize,
    extra: impl Fn(usize) -> bool,
) -> Option<usize> {
    (k..values.len())
        .find(|&i| (i + 1 - k..=i).all(|j| within(values[j] - values[j - 1], delta)) && extra(i))
}

/// Smallest round whose `k` most recent JS differences all lie within
/// `delta` while `|spearman| ≤ tau` at that round.
pub fn detect_locking(
    label: impl Into<String>,
    js: &RoundSeries,
    spearman: &RoundSeries,
    params: LockingParams,
) -> Result<LockingReport> {
    params.validate()?;
    if js.len() != spearman.len() || js.iter().zip(spearman).any(|(a, b)| a.0 != b.0) {
        return Err(Error::Invalid(
            "JS and Spearman series have different round indices".into(),
        ));
    }
    if js.len() < params.k + 1 {
        return Err(Error::InsufficientSample(format!(
            "{} points, need at least {}",
            js.len(),
            params.k + 1
        )));
    }
    let values: Vec<f64> = js.iter().map(|p| p.1).collect();
    let hit = first_saturated(&values, params.delta, params.k, |i| {
        within(spearman[i].1, params.tau)
    });
    Ok(LockingReport {
        label: label.into(),
        track: None,
        locked: hit.is_some(),
        lock_round: hit.map(|i| js[i].0),
        params,
    })
}

/// Locking on a drift series' own JS and Spearman columns.
pub fn detect_series_locking(series: &DriftSeries, params: LockingParams) -> Result<LockingReport> {
    let js: Vec<(u32, f64)> = series
        .points
        .iter()
        .map(|p| (p.round, p.js_drift))
        .collect();
    let sp: Vec<(u32, f64)> = series
        .points
        .iter()
        .map(|p| (p.round, p.spearman))
        .collect();
    let mut report = detect_locking(series.question_id.clone(), &js, &sp, params)?;
    report.track = Some(series.track);
    Ok(report)
}

/// First round after `k` consecutive differences within `delta`.
pub fn plateau_round(series: &RoundSeries, delta: f64, k: usize) -> Result<Option<u32>> {
    if k < 1 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if series.len() < k + 1 {
        return Err(Error::InsufficientSample(format!(
            "{} points, need at least {}",
            series.len(),
            k + 1
        )));
    }
    let values: Vec<f64> = series.iter().map(|p| p.1).collect();
    Ok(first_saturated(&values, delta, k, |_| true).map(|i| series[i].0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCos {
    pub per_round: Vec<(u32, f64)>,
    pub mean: f64,
}

/// Per-round `cos_drift(rel) − cos_drift(irr)` and its mean.
pub fn delta_cos(rel: &DriftSeries, irr: &DriftSeries) -> Result<DeltaCos> {
    if rel.rounds() != irr.rounds() {
        return Err(Error::Invalid("series cover different rounds".into()));
    }
    if rel.points.is_empty() {
        return Err(Error::InsufficientSample("empty series".into()));
    }
    let per_round: Vec<(u32, f64)> = rel
        .points
        .iter()
        .zip(&irr.points)
        .map(|(a, b)| (a.round, a.cos_drift - b.cos_drift))
        .collect();
    let mean = per_round.iter().map(|p| p.1).sum::<f64>() / per_round.len() as f64;
    Ok(DeltaCos { per_round, mean })
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientSample(
            "slope needs at least two points".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientSample(
            "all points share one round".into(),
        ));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

/// Least-squares slope of entropy drift per round.
pub fn ent_slope(series: &DriftSeries) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .map(|p| (p.round as f64, p.ent_drift))
        .collect();
    ols_slope(&pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMethod {
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `(model label, mean ΔCos, entropy slope)`.
    pub pairs: Vec<(String, f64, f64)>,
    pub rho: f64,
    pub method: CorrelationMethod,
}

/// Spearman correlation between per-model mean ΔCos and entropy slope.
pub fn seesaw_correlation(per_model: &[(String, f64, f64)]) -> Result<CorrelationReport> {
    if per_model.len() < 3 {
        return Err(Error::InsufficientSample(format!(
            "{} models, need at least 3",
            per_model.len()
        )));
    }
    let x: Vec<f64> = per_model.iter().map(|p| p.1).collect();
    let y: Vec<f64> = per_model.iter().map(|p| p.2).collect();
    Ok(CorrelationReport {
        pairs: per_model.to_vec(),
        rho: spearman_correlation(&x, &y, DEFAULT_EPSILON_PAD)?,
        method: CorrelationMethod::Spearman,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundVariance {
    pub round: u32,
    pub n: usize,
    pub cos_drift: f64,
    pub ent_drift: f64,
    pub js_drift: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub track: Option<Track>,
    pub rounds: Vec<RoundVariance>,
    pub warnings: Vec<String>,
}

fn by_round(series: &[DriftSeries]) -> BTreeMap<u32, Vec<&DriftPoint>> {
    let mut out: BTreeMap<u32, Vec<&DriftPoint>> = BTreeMap::new();
    for s in series {
        for p in &s.points {
            out.entry(p.round).or_default().push(p);
        }
    }
    out
}

fn sample_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Per-round sample variance (n − 1 denominator) of each metric across
/// questions. Rounds with fewer than two samples are omitted with a warning.
pub fn variance_profile(series: &[DriftSeries]) -> VarianceProfile {
    let mut tracks: Vec<Track> = series.iter().map(|s| s.track).collect();
    tracks.dedup();
    let mut rounds = Vec::new();
    let mut warnings = Vec::new();
    for (round, pts) in by_round(series) {
        if pts.len() < 2 {
            warnings.push(format!(
                "round {round}: {} sample(s), variance omitted",
                pts.len()
            ));
            continue;
        }
        let v = |f: fn(&DriftPoint) -> f64| sample_variance(pts.iter().map(|p| f(p)));
        rounds.push(RoundVariance {
            round,
            n: pts.len(),
            cos_drift: v(|p| p.cos_drift),
            ent_drift: v(|p| p.ent_drift),
            js_drift: v(|p| p.js_drift),
            spearman: v(|p| p.spearman),
        });
    }
    VarianceProfile {
        track: (tracks.len() == 1).then(|| tracks[0]),
        rounds,
        warnings,
    }
}

/// Cross-question mean series, labelled `label`.
pub fn aggregate_mean(series: &[DriftSeries], label: &str, track: Track) -> DriftSeries {
    let points = by_round(series)
        .into_iter()
        .map(|(round, pts)| {
            let n = pts.len() as f64;
            let m = |f: fn(&DriftPoint) -> f64| pts.iter().map(|p| f(p)).sum::<f64>() / n;
            DriftPoint {
                round,
                cos_drift: m(|p| p.cos_drift),
                ent_drift: m(|p| p.ent_drift),
                js_drift: m(|p| p.js_drift),
                spearman: m(|p| p.spearman),
            }
        })
        .collect();
    DriftSeries {
        question_id: label.to_string(),
        track,
        points,
    }
}
