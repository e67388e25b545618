use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of an attention vector.
pub const ATTENTION_SUM_TOLERANCE: f64 = 1e-6;

/// Default ε used when padding attention vectors to a common length.
pub const DEFAULT_EPSILON_PAD: f64 = 1e-12;

/// Which snippet sequence a prompt draws its context from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Relevant,
    Irrelevant,
}

impl Track {
    pub const ALL: [Track; 2] = [Track::Relevant, Track::Irrelevant];

    pub fn as_str(self) -> &'static str {
        match self {
            Track::Relevant => "relevant",
            Track::Irrelevant => "irrelevant",
        }
    }

    /// Column suffix used in the report tables.
    pub fn short(self) -> &'static str {
        match self {
            Track::Relevant => "rel",
            Track::Irrelevant => "irr",
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Track {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relevant" | "rel" => Ok(Track::Relevant),
            "irrelevant" | "irr" => Ok(Track::Irrelevant),
            other => Err(Error::Invalid(format!("unknown track `{other}`"))),
        }
    }
}

/// A benchmark question with its acceptable reference answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub best_reference: String,
    /// The acceptable set; always contains `best_reference`.
    pub references: Vec<String>,
    pub category: String,
}

/// One injected context fragment. `index` is the 1-based injection order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSnippet {
    pub track: Track,
    pub index: u32,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

/// Semantic and NLI channels for a single sentence of an answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceChannels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_labels: Option<BTreeMap<String, NliLabel>>,
}

/// Externally computed scorer outputs carried with a record. Every channel is
/// optional; an absent channel is left absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerChannels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_labels: Option<BTreeMap<String, NliLabel>>,
    /// One entry per sentence of the answer, in sentence order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_scores: Option<Vec<SentenceChannels>>,
}

impl ScorerChannels {
    pub fn is_empty(&self) -> bool {
        self.semantic_scores.is_none()
            && self.nli_labels.is_none()
            && self.sentence_scores.is_none()
    }
}

/// Identity of a record inside a trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub question_id: String,
    pub track: Track,
    pub round: u32,
}

impl RecordKey {
    pub fn new(question_id: impl Into<String>, track: Track, round: u32) -> Self {
        Self {
            question_id: question_id.into(),
            track,
            round,
        }
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, round {})",
            self.question_id, self.track, self.round
        )
    }
}

/// Everything captured for one (question, track, round).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    pub question_id: String,
    pub track: Track,
    pub round: u32,
    pub context_ids: Vec<u32>,
    pub answer: String,
    /// Final-layer hidden state of the last token.
    pub hidden: Vec<f64>,
    /// Attention probability vector over positions.
    pub attention: Vec<f64>,
    #[serde(default)]
    pub scorers: ScorerChannels,
}

impl RoundRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey::new(self.question_id.clone(), self.track, self.round)
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_PAD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub model_name: String,
    pub hidden_dim: usize,
    /// Number of injection rounds T; records cover rounds `0..=rounds`.
    pub rounds: u32,
    pub tracks: Vec<Track>,
    pub question_ids: Vec<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon_pad: f64,
    /// ISO-8601 timestamp.
    pub created_at: String,
    /// Free-form description of how attention rows were captured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_convention: Option<String>,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<()> {
        let key = "manifest";
        if self.rounds < 1 {
            return Err(Error::validation(key, "rounds must be >= 1"));
        }
        if self.hidden_dim < 1 {
            return Err(Error::validation(key, "hidden_dim must be >= 1"));
        }
        if !(self.epsilon_pad > 0.0 && self.epsilon_pad.is_finite()) {
            return Err(Error::validation(
                key,
                "epsilon_pad must be a positive finite number",
            ));
        }
        if self.tracks.is_empty() {
            return Err(Error::validation(key, "tracks must not be empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.tracks {
            if !seen.insert(*t) {
                return Err(Error::validation(key, format!("duplicate track {t}")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for q in &self.question_ids {
            if !seen.insert(q.as_str()) {
                return Err(Error::validation(key, format!("duplicate question id {q}")));
            }
        }
        chrono::DateTime::parse_from_rfc3339(&self.created_at).map_err(|e| {
            Error::validation(
                key,
                format!("created_at `{}` is not ISO-8601: {e}", self.created_at),
            )
        })?;
        Ok(())
    }
}

/// A validated, immutable collection of round records plus their manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub manifest: ExperimentManifest,
    pub records: BTreeMap<RecordKey, RoundRecord>,
    /// Set when some (question, track) pair lacks one of the rounds `0..=T`.
    pub partial: bool,
}

impl Trace {
    /// Assembles a trace from records, validating every invariant.
    pub fn from_records(
        manifest: ExperimentManifest,
        records: impl IntoIterator<Item = RoundRecord>,
    ) -> Result<Self> {
        manifest.validate()?;
        let mut map = BTreeMap::new();
        for mut rec in records {
            validate_record(&manifest, &mut rec)?;
            let key = rec.key();
            if map.contains_key(&key) {
                return Err(Error::validation(&key, "duplicate record key"));
            }
            map.insert(key, rec);
        }
        let mut trace = Trace {
            manifest,
            records: map,
            partial: false,
        };
        trace.partial = trace
            .series_keys()
            .iter()
            .any(|(q, t)| !trace.missing_rounds(q, *t).is_empty());
        Ok(trace)
    }

    pub fn get(&self, question_id: &str, track: Track, round: u32) -> Option<&RoundRecord> {
        self.records.get(&RecordKey::new(question_id, track, round))
    }

    /// (question, track) pairs with at least one record, in manifest question order.
    pub fn series_keys(&self) -> Vec<(String, Track)> {
        let mut out = Vec::new();
        for q in &self.manifest.question_ids {
            for &t in &self.manifest.tracks {
                let lo = RecordKey::new(q.clone(), t, 0);
                let hi = RecordKey::new(q.clone(), t, u32::MAX);
                if self.records.range(lo..=hi).next().is_some() {
                    out.push((q.clone(), t));
                }
            }
        }
        out
    }

    /// Records for one (question, track) ordered by round.
    pub fn series_records(&self, question_id: &str, track: Track) -> Vec<&RoundRecord> {
        let lo = RecordKey::new(question_id, track, 0);
        let hi = RecordKey::new(question_id, track, u32::MAX);
        self.records.range(lo..=hi).map(|(_, r)| r).collect()
    }

    pub fn missing_rounds(&self, question_id: &str, track: Track) -> Vec<u32> {
        (0..=self.manifest.rounds)
            .filter(|&r| self.get(question_id, track, r).is_none())
            .collect()
    }

    /// Tracks that have at least one record.
    pub fn present_tracks(&self) -> Vec<Track> {
        let mut tracks: Vec<Track> = self.records.keys().map(|k| k.track).collect();
        tracks.sort();
        tracks.dedup();
        tracks
    }
}

/// Checks one record against the manifest. Attention vectors whose sum is off
/// by more than rounding noise (but within [`ATTENTION_SUM_TOLERANCE`]) are
/// renormalized in place.
pub(crate) fn validate_record(manifest: &ExperimentManifest, rec: &mut RoundRecord) -> Result<()> {
    let key = rec.key();
    if !manifest.question_ids.iter().any(|q| q == &rec.question_id) {
        return Err(Error::validation(
            &key,
            "question_id not listed in manifest",
        ));
    }
    if !manifest.tracks.contains(&rec.track) {
        return Err(Error::validation(&key, "track not listed in manifest"));
    }
    if rec.round > manifest.rounds {
        return Err(Error::validation(
            &key,
            format!("round exceeds manifest rounds {}", manifest.rounds),
        ));
    }
    let expected: Vec<u32> = (1..=rec.round).collect();
    if rec.context_ids != expected {
        return Err(Error::validation(
            &key,
            format!(
                "context_ids {:?} violate the prefix property (expected {:?})",
                rec.context_ids, expected
            ),
        ));
    }
    if rec.hidden.len() != manifest.hidden_dim {
        return Err(Error::validation(
            &key,
            format!(
                "hidden length {} does not match hidden_dim {}",
                rec.hidden.len(),
                manifest.hidden_dim
            ),
        ));
    }
    if rec.hidden.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(
            &key,
            "hidden contains a non-finite value",
        ));
    }
    if rec.attention.is_empty() {
        return Err(Error::validation(&key, "attention is empty"));
    }
    if rec.attention.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::validation(
            &key,
            "attention has a negative or non-finite entry",
        ));
    }
    let sum: f64 = rec.attention.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > ATTENTION_SUM_TOLERANCE {
        return Err(Error::validation(
            &key,
            format!("attention sums to {sum}, outside 1 ± {ATTENTION_SUM_TOLERANCE}"),
        ));
    }
    // Below this the sum is already exact up to summation rounding; rescaling
    // would only perturb bits and break write/load round trips.
    if dev > 1e-12 {
        rec.attention.iter_mut().for_each(|v| *v /= sum);
    }
    validate_channels(&key, &rec.scorers)
}

fn validate_scores(key: &RecordKey, scores: &BTreeMap<String, f64>) -> Result<()> {
    for (reference, s) in scores {
        if !(0.0..=1.0).contains(s) {
            return Err(Error::validation(
                key,
                format!("semantic score {s} for `{reference}` outside [0, 1]"),
            ));
        }
    }
    Ok(())
}

fn validate_channels(key: &RecordKey, ch: &ScorerChannels) -> Result<()> {
    if let Some(s) = &ch.semantic_scores {
        validate_scores(key, s)?;
    }
    for sentence in ch.sentence_scores.iter().flatten() {
        if let Some(s) = &sentence.semantic_scores {
            validate_scores(key, s)?;
        }
    }
    Ok(())
}
