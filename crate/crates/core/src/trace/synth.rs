//! Deterministic synthetic traces with a prescribed drift schedule.
//!
//! For every question the generator draws a baseline hidden state `h_0` and a
//! unit direction orthogonal to it, and rotates `h_0` towards that direction
//! by the scheduled angle at each round, so `cos_drift(t) = 1 − cos θ_t`
//! exactly. Attention rows span `baseline.len() + context_len` positions: the
//! round-0 row is the (question-permuted) baseline with no mass on the context
//! positions, and round `t` moves a fraction `w_t` of the mass uniformly onto
//! the context positions:
//!
//! ```text
//! A_t = ((1 − w_t) · A_0[..n0], w_t / m, …, w_t / m)
//! ```
//!
//! With `w_t` non-decreasing the JS drift is non-decreasing, and entropy
//! drift is strictly increasing while `w_t < 1 / (1 + e^{H(A_0)} / m)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::trace::model::{
    ExperimentManifest, NliLabel, Question, RoundRecord, ScorerChannels, SentenceChannels, Trace,
    Track, DEFAULT_EPSILON_PAD,
};

/// Per-track drift schedule; both vectors are indexed by round `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSchedule {
    pub track: Track,
    /// Rotation angle of the hidden state away from `h_0`, in radians.
    pub rotation: Vec<f64>,
    /// Fraction of attention mass moved onto context positions, in `[0, 1]`.
    pub context_mass: Vec<f64>,
}

impl TrackSchedule {
    /// Schedule with a constant per-round step in both angle and mass.
    pub fn linear(track: Track, rounds: u32, angle_step: f64, mass_step: f64) -> Self {
        let r = 1..=rounds;
        Self {
            track,
            rotation: r.clone().map(|t| angle_step * t as f64).collect(),
            context_mass: r.map(|t| (mass_step * t as f64).min(1.0)).collect(),
        }
    }

    pub fn zero(track: Track, rounds: u32) -> Self {
        Self::linear(track, rounds, 0.0, 0.0)
    }

    /// Rotation angles that realize the given cosine-drift targets.
    pub fn from_cos_targets(track: Track, cos_drift: &[f64], context_mass: Vec<f64>) -> Self {
        Self {
            track,
            rotation: cos_drift
                .iter()
                .map(|d| (1.0 - d).clamp(-1.0, 1.0).acos())
                .collect(),
            context_mass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub model_name: String,
    pub questions: usize,
    pub rounds: u32,
    pub hidden_dim: usize,
    /// Number of prompt positions carrying the baseline attention.
    pub baseline_len: usize,
    /// Number of positions reserved for injected context.
    pub context_len: usize,
    /// Baseline attention `∝ exp(−sharpness · i / n0)` before permutation.
    pub baseline_sharpness: f64,
    pub epsilon_pad: f64,
    pub schedules: Vec<TrackSchedule>,
    /// Emit semantic and NLI scorer channels.
    pub with_scorers: bool,
    pub created_at: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let rounds = 15;
        Self {
            model_name: "synthetic".into(),
            questions: 8,
            rounds,
            hidden_dim: 16,
            baseline_len: 16,
            context_len: 64,
            baseline_sharpness: 3.0,
            epsilon_pad: DEFAULT_EPSILON_PAD,
            schedules: vec![
                TrackSchedule::linear(Track::Relevant, rounds, 0.04, 0.05),
                TrackSchedule::linear(Track::Irrelevant, rounds, 0.03, 0.045),
            ],
            with_scorers: false,
            created_at: "1970-01-01T00:00:00Z".into(),
        }
    }
}

impl SynthConfig {
    /// Default sizes with the given schedules; `rounds` follows the schedules.
    pub fn with_schedules(schedules: Vec<TrackSchedule>) -> Self {
        let rounds = schedules.first().map_or(0, |s| s.rotation.len() as u32);
        Self {
            rounds,
            schedules,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.questions == 0 {
            return bad("questions must be positive".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.hidden_dim < 2 {
            return bad("hidden_dim must be at least 2".into());
        }
        if self.baseline_len == 0 || self.context_len == 0 {
            return bad("baseline_len and context_len must be positive".into());
        }
        if !self.baseline_sharpness.is_finite() {
            return bad("baseline_sharpness must be finite".into());
        }
        if self.schedules.is_empty() {
            return bad("at least one track schedule is required".into());
        }
        for s in &self.schedules {
            let t = self.rounds as usize;
            if s.rotation.len() != t || s.context_mass.len() != t {
                return bad(format!("{} schedule must have {t} entries", s.track));
            }
            if s.rotation.iter().any(|a| !a.is_finite()) {
                return bad(format!("{} rotation must be finite", s.track));
            }
            if s.context_mass.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return bad(format!("{} context_mass must lie in [0, 1]", s.track));
            }
            if s.context_mass.windows(2).any(|w| w[1] < w[0]) {
                return bad(format!("{} context_mass must be non-decreasing", s.track));
            }
        }
        Ok(())
    }

    /// The unpermuted baseline attention row over `baseline_len` positions.
    pub fn baseline_attention(&self) -> Vec<f64> {
        let n = self.baseline_len as f64;
        let w: Vec<f64> = (0..self.baseline_len)
            .map(|i| (-self.baseline_sharpness * i as f64 / n).exp())
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    }
}

/// A synthetic trace together with the questions it was generated for.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub trace: Trace,
    pub questions: Vec<Question>,
}

const PLACES: &[&str] = &[
    "Aldgate", "Brenner", "Calder", "Dunmore", "Elsworth", "Farrow", "Glenmore", "Harwick",
    "Ingleby", "Jarrow", "Kelso", "Linford", "Marlow", "Norcross", "Oakham", "Penrith",
];

const DISTRACTORS: &[&str] = &[
    "Velmora Institute",
    "Quaryth Basin",
    "Zentrik Council",
    "Orvane Festival",
    "Tessaly Works",
    "Brumov Archive",
];

/// Questions used by synthetic traces; ids are `q000`, `q001`, ...
pub fn synth_questions(count: usize) -> Vec<Question> {
    (0..count)
        .map(|i| {
            let place = PLACES[i % PLACES.len()];
            let height = 120 + 7 * i;
            let best = format!("The {place} Monument is {height} meters tall.");
            Question {
                id: format!("q{i:03}"),
                text: format!("How tall is the {place} Monument?"),
                best_reference: best.clone(),
                references: vec![best, format!("It stands {height} meters high.")],
                category: "synthetic".into(),
            }
        })
        .collect()
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Baseline `h_0` and a direction orthogonal to it with the same norm.
fn hidden_frame(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<f64>) {
    let h0 = random_vector(rng, d);
    let n0 = dot(&h0, &h0);
    loop {
        let v = random_vector(rng, d);
        let proj = dot(&v, &h0) / n0;
        let u: Vec<f64> = v.iter().zip(&h0).map(|(a, b)| a - proj * b).collect();
        let nu = dot(&u, &u);
        if nu > 1e-6 * n0 {
            let scale = (n0 / nu).sqrt();
            return (h0, u.into_iter().map(|x| x * scale).collect());
        }
    }
}

fn rotate(h0: &[f64], u: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    h0.iter().zip(u).map(|(a, b)| c * a + s * b).collect()
}

fn shifted_attention(base: &[f64], context_len: usize, mass: f64) -> Vec<f64> {
    let mut a: Vec<f64> = base.iter().map(|v| (1.0 - mass) * v).collect();
    a.extend(std::iter::repeat_n(mass / context_len as f64, context_len));
    a
}

fn answer_for(q: &Question, rng: &mut ChaCha8Rng, mass: f64) -> (String, bool) {
    let mut answer = q.best_reference.clone();
    let hallucinated = rng.gen_bool(mass.clamp(0.0, 1.0));
    if hallucinated {
        let d = DISTRACTORS[rng.gen_range(0..DISTRACTORS.len())];
        let year = rng.gen_range(1800..2000);
        answer.push_str(&format!(" It was rebuilt in {year} by the {d}."));
    }
    (answer, hallucinated)
}

fn channels_for(
    q: &Question,
    rng: &mut ChaCha8Rng,
    mass: f64,
    hallucinated: bool,
) -> ScorerChannels {
    let mut semantic = BTreeMap::new();
    let mut nli = BTreeMap::new();
    for (i, r) in q.references.iter().enumerate() {
        let base = if i == 0 { 0.95 } else { 0.8 };
        let s: f64 = base - 0.3 * mass + rng.gen_range(-0.02..0.02);
        semantic.insert(r.clone(), s.clamp(0.0, 1.0));
        let label = if hallucinated {
            if i == 0 {
                NliLabel::Contradiction
            } else {
                NliLabel::Neutral
            }
        } else if i == 0 {
            NliLabel::Entailment
        } else {
            NliLabel::Neutral
        };
        nli.insert(r.clone(), label);
    }
    let mut sentences = vec![SentenceChannels {
        semantic_scores: Some(q.references.iter().map(|r| (r.clone(), 0.95)).collect()),
        nli_labels: Some(
            q.references
                .iter()
                .map(|r| (r.clone(), NliLabel::Entailment))
                .collect(),
        ),
    }];
    if hallucinated {
        sentences.push(SentenceChannels {
            semantic_scores: Some(q.references.iter().map(|r| (r.clone(), 0.3)).collect()),
            nli_labels: Some(
                q.references
                    .iter()
                    .map(|r| (r.clone(), NliLabel::Neutral))
                    .collect(),
            ),
        });
    }
    ScorerChannels {
        semantic_scores: Some(semantic),
        nli_labels: Some(nli),
        sentence_scores: Some(sentences),
    }
}

/// Generates a trace for `config`; identical seeds give identical traces.
pub fn synth_trace(seed: u64, config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let questions = synth_questions(config.questions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = config.baseline_attention();
    let mut records = Vec::new();
    for q in &questions {
        let (h0, u) = hidden_frame(&mut rng, config.hidden_dim);
        let mut perm = base.clone();
        perm.shuffle(&mut rng);
        for schedule in &config.schedules {
            for t in 0..=config.rounds {
                let (hidden, attention, mass) = if t == 0 {
                    (
                        h0.clone(),
                        shifted_attention(&perm, config.context_len, 0.0),
                        0.0,
                    )
                } else {
                    let i = (t - 1) as usize;
                    let w = schedule.context_mass[i];
                    (
                        rotate(&h0, &u, schedule.rotation[i]),
                        shifted_attention(&perm, config.context_len, w),
                        w,
                    )
                };
                let (answer, hallucinated) = answer_for(q, &mut rng, mass);
                let scorers = if config.with_scorers {
                    channels_for(q, &mut rng, mass, hallucinated)
                } else {
                    ScorerChannels::default()
                };
                records.push(RoundRecord {
                    question_id: q.id.clone(),
                    track: schedule.track,
                    round: t,
                    context_ids: (1..=t).collect(),
                    answer,
                    hidden,
                    attention,
                    scorers,
                });
            }
        }
    }
    let manifest = ExperimentManifest {
        model_name: config.model_name.clone(),
        hidden_dim: config.hidden_dim,
        rounds: config.rounds,
        tracks: config.schedules.iter().map(|s| s.track).collect(),
        question_ids: questions.iter().map(|q| q.id.clone()).collect(),
        epsilon_pad: config.epsilon_pad,
        created_at: config.created_at.clone(),
        attention_convention: Some("synthetic: baseline positions then context positions".into()),
    };
    let trace = Trace::from_records(manifest, records)?;
    Ok(SynthOutput { trace, questions })
}

/// Closed-form drift values of the synthetic attention family for context
/// mass `w`, baseline entropy `h0`, and `m` context positions:
/// `(ent_drift, js_drift)`.
pub fn expected_attention_drift(w: f64, h0: f64, m: usize) -> (f64, f64) {
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    let ent = (1.0 - w) * h0 - xlogx(1.0 - w) - xlogx(w) + w * (m as f64).ln() - h0;
    let half = 1.0 - w / 2.0;
    let kl_p = -half.ln();
    let kl_q = if w < 1.0 {
        (1.0 - w) * ((1.0 - w) / half).ln()
    } else {
        0.0
    } + w * std::f64::consts::LN_2;
    (ent, 0.5 * (kl_p + kl_q))
}
