//! Internal-state drift metrics: cosine drift of hidden states, attention
//! entropy shift, Jensen–Shannon divergence and Spearman rank correlation of
//! attention distributions. All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Trace, Track, ATTENTION_SUM_TOLERANCE};

/// Drift of one round against the zero-context baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub round: u32,
    pub cos_drift: f64,
    pub ent_drift: f64,
    pub js_drift: f64,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub question_id: String,
    pub track: Track,
    /// Ordered by round, starting at round 1.
    pub points: Vec<DriftPoint>,
}

impl DriftSeries {
    pub fn rounds(&self) -> Vec<u32> {
        self.points.iter().map(|p| p.round).collect()
    }
}

fn check_probability(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain(format!("{what} is empty")));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Domain(format!("{what} has invalid entry {v}")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ATTENTION_SUM_TOLERANCE {
        return Err(Error::Domain(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// `1 − cos(h_t, h_0)`, in `[0, 2]`.
pub fn cosine_drift(h_t: &[f64], h_0: &[f64]) -> Result<f64> {
    if h_t.len() != h_0.len() {
        return Err(Error::Domain(format!(
            "hidden length mismatch: {} vs {}",
            h_t.len(),
            h_0.len()
        )));
    }
    let (mut dot, mut nt, mut n0) = (0.0, 0.0, 0.0);
    for (a, b) in h_t.iter().zip(h_0) {
        dot += a * b;
        nt += a * a;
        n0 += b * b;
    }
    if nt == 0.0 || n0 == 0.0 {
        return Err(Error::Domain("zero-norm hidden state".into()));
    }
    let cos = dot / (nt * n0).sqrt();
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// Shannon entropy `−Σ A_i ln A_i` with `0 ln 0 = 0`.
pub fn attention_entropy(a: &[f64]) -> Result<f64> {
    check_probability(a, "attention")?;
    Ok(entropy_unchecked(a))
}

fn entropy_unchecked(a: &[f64]) -> f64 {
    let h: f64 = a.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.max(0.0)
}

/// `H(A_t) − H(A_0)`. Positive means attention diffused, negative means it
/// focused. Lengths may differ.
pub fn entropy_drift(a_t: &[f64], a_0: &[f64]) -> Result<f64> {
    Ok(attention_entropy(a_t)? - attention_entropy(a_0)?)
}

/// Extends `p` to `target_len` with `eps` entries, then renormalizes by
/// `1 + (target_len − |p|)·eps`.
pub fn pad_and_renormalize(p: &[f64], target_len: usize, eps: f64) -> Result<Vec<f64>> {
    if target_len < p.len() {
        return Err(Error::Domain(format!(
            "cannot pad length {} down to {target_len}",
            p.len()
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!(
            "padding epsilon must be positive, got {eps}"
        )));
    }
    let extra = target_len - p.len();
    if extra == 0 {
        return Ok(p.to_vec());
    }
    let z = 1.0 + extra as f64 * eps;
    let mut out: Vec<f64> = p.iter().map(|v| v / z).collect();
    out.resize(target_len, eps / z);
    Ok(out)
}

fn pad_pair(p: &[f64], q: &[f64], eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p.len().max(q.len());
    Ok((
        pad_and_renormalize(p, n, eps)?,
        pad_and_renormalize(q, n, eps)?,
    ))
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum()
}

/// Jensen–Shannon divergence with natural log; bounded by `ln 2`. Vectors of
/// unequal length are ε-padded to the longer one first.
pub fn js_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    check_probability(p, "P")?;
    check_probability(q, "Q")?;
    let (p, q) = pad_pair(p, q, eps)?;
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl_to_mixture(&p, &m) + 0.5 * kl_to_mixture(&q, &m);
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// 1-based ranks with ties sharing the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks. The
/// shorter input is padded with `eps` entries to the common length first.
pub fn spearman_correlation(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    let n = p.len().max(q.len());
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!("length {n} < 2")));
    }
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in rank input".into()));
    }
    let pad = |v: &[f64]| {
        let mut v = v.to_vec();
        v.resize(n, eps);
        v
    };
    let (p, q) = (pad(p), pad(q));
    pearson(&average_ranks(&p), &average_ranks(&q))
        .ok_or_else(|| Error::UndefinedCorrelation("constant input vector".into()))
}

/// Drift of one round's attention and hidden state against the baseline round.
pub fn drift_point(
    round: u32,
    hidden_t: &[f64],
    hidden_0: &[f64],
    attention_t: &[f64],
    attention_0: &[f64],
    eps: f64,
) -> Result<DriftPoint> {
    let (pt, p0) = pad_pair(attention_t, attention_0, eps)?;
    Ok(DriftPoint {
        round,
        cos_drift: cosine_drift(hidden_t, hidden_0)?,
        ent_drift: entropy_drift(attention_t, attention_0)?,
        js_drift: js_divergence(&pt, &p0, eps)?,
        spearman: spearman_correlation(&pt, &p0, eps)?,
    })
}

/// Builds the drift series of one (question, track) against its round-0
/// baseline, using the manifest's padding ε.
pub fn build_drift_series(trace: &Trace, question_id: &str, track: Track) -> Result<DriftSeries> {
    let missing = trace.missing_rounds(question_id, track);
    if !missing.is_empty() {
        return Err(Error::PartialSeries {
            key: format!("({question_id}, {track})"),
            missing,
        });
    }
    let eps = trace.manifest.epsilon_pad;
    let base = trace
        .get(question_id, track, 0)
        .expect("round 0 checked above");
    let points = (1..=trace.manifest.rounds)
        .map(|t| {
            let rec = trace.get(question_id, track, t).expect("checked above");
            drift_point(
                t,
                &rec.hidden,
                &base.hidden,
                &rec.attention,
                &base.attention,
                eps,
            )
            .map_err(|e| Error::validation(rec.key(), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftSeries {
        question_id: question_id.to_string(),
        track,
        points,
    })
}

/// Like [`build_drift_series`], but tolerates missing rounds: points are
/// emitted for whichever rounds are present alongside the baseline.
pub fn build_available_series(
    trace: &Trace,
    question_id: &str,
    track: Track,
) -> Result<Option<DriftSeries>> {
    let eps = trace.manifest.epsilon_pad;
    let Some(base) = trace.get(question_id, track, 0) else {
        return Ok(None);
    };
    let points = trace
        .series_records(question_id, track)
        .into_iter()
        .filter(|r| r.round > 0)
        .map(|rec| {
            drift_point(
                rec.round,
                &rec.hidden,
                &base.hidden,
                &rec.attention,
                &base.attention,
                eps,
            )
            .map_err(|e| Error::validation(rec.key(), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(DriftSeries {
        question_id: question_id.to_string(),
        track,
        points,
    }))
}
