//! Three-component hallucination detector and hallucination rates.
//!
//! An answer is flagged when any of three views fires:
//! - semantic deviation: similarity to the best reference below `theta_sem`;
//! - factual extension: the answer names an entity absent from every reference;
//! - logical inference: no reference is entailed according to the NLI channel.
//!
//! A view without its input abstains; the verdict is the OR of the views that
//! did not abstain.

mod entities;
mod quality;
mod sentences;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use entities::{extract_entities, normalize_entity, reference_entities, EntitySet};
pub use quality::{lcs_len, meteor_lite, rouge_l, token_f1, tokenize, PrecisionRecall};
pub use sentences::split_sentences;

use crate::error::{Error, Result};
use crate::trace::{NliLabel, Question, ScorerChannels};

/// Tri-state component flag: `Some(flag)` or `None` when the view abstained.
pub type Flag = Option<bool>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticSource {
    /// Only the recorded semantic-score channel is used.
    ScorerChannel,
    /// Use the channel when present, otherwise lexical token F1.
    LexicalFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    Abstain,
    Error,
}

/// Where the semantic score behind a verdict came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticOrigin {
    Channel,
    LexicalFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub theta_sem: f64,
    pub semantic_source: SemanticSource,
    /// Applies to a missing NLI channel, and to a missing semantic channel
    /// when `semantic_source` is `ScorerChannel`.
    pub nli_policy_on_missing: MissingPolicy,
    pub domain_lexicon: Option<BTreeSet<String>>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            theta_sem: 0.7,
            semantic_source: SemanticSource::ScorerChannel,
            nli_policy_on_missing: MissingPolicy::Abstain,
            domain_lexicon: None,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_sem > 0.0 && self.theta_sem < 1.0) {
            return Err(Error::Invalid(format!(
                "theta_sem must lie in (0, 1), got {}",
                self.theta_sem
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub h_sem: Flag,
    pub h_ext: Flag,
    pub h_nli: Flag,
    pub overall: bool,
    /// Some component abstained.
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_origin: Option<SemanticOrigin>,
}

impl DetectionVerdict {
    /// OR over the non-abstaining components; all three abstaining is an error.
    pub fn combine(h_sem: Flag, h_ext: Flag, h_nli: Flag) -> Result<Self> {
        let flags = [h_sem, h_ext, h_nli];
        if flags.iter().all(Option::is_none) {
            return Err(Error::Undetectable("all three detectors abstained".into()));
        }
        Ok(Self {
            h_sem,
            h_ext,
            h_nli,
            overall: flags.iter().flatten().any(|&f| f),
            partial: flags.iter().any(Option::is_none),
            semantic_origin: None,
        })
    }
}

/// `score < theta`.
pub fn semantic_flag(score: f64, theta: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Domain(format!(
            "semantic score {score} outside [0, 1]"
        )));
    }
    Ok(score < theta)
}

/// True iff the answer mentions an entity the references never do.
pub fn factual_extension_flag(answer_entities: &EntitySet, reference_entities: &EntitySet) -> bool {
    answer_entities
        .iter()
        .any(|e| !reference_entities.contains(e))
}

/// True iff no reference is entailed. An empty map abstains or errors
/// according to `policy`.
pub fn nli_flag(labels: &BTreeMap<String, NliLabel>, policy: MissingPolicy) -> Result<Flag> {
    if labels.is_empty() {
        return match policy {
            MissingPolicy::Abstain => Ok(None),
            MissingPolicy::Error => Err(Error::MissingChannel("NLI labels".into())),
        };
    }
    Ok(Some(!labels.values().any(|l| *l == NliLabel::Entailment)))
}

/// The reference with maximal score; ties and the no-score case resolve to
/// `best_reference`. Scores for strings outside the reference set are ignored.
pub fn select_best_reference<'q>(
    question: &'q Question,
    scores: Option<&BTreeMap<String, f64>>,
) -> (&'q str, Option<f64>) {
    let best = question.best_reference.as_str();
    let Some(scores) = scores else {
        return (best, None);
    };
    let mut chosen: (&str, Option<f64>) = (best, scores.get(best).copied());
    for r in &question.references {
        if let Some(&s) = scores.get(r) {
            if chosen.1.is_none_or(|c| s > c) {
                chosen = (r.as_str(), Some(s));
            }
        }
    }
    chosen
}

fn lexical_scores(text: &str, question: &Question) -> BTreeMap<String, f64> {
    question
        .references
        .iter()
        .map(|r| (r.clone(), token_f1(text, r)))
        .collect()
}

/// Semantic component for `text`, given an optional channel.
fn semantic_component(
    text: &str,
    question: &Question,
    channel: Option<&BTreeMap<String, f64>>,
    config: &DetectorConfig,
    policy: MissingPolicy,
) -> Result<(Flag, Option<SemanticOrigin>)> {
    let channel = channel.filter(|m| !m.is_empty());
    let (scores, origin) = match (channel, config.semantic_source) {
        (Some(s), _) => (s.clone(), SemanticOrigin::Channel),
        (None, SemanticSource::LexicalFallback) => (
            lexical_scores(text, question),
            SemanticOrigin::LexicalFallback,
        ),
        (None, SemanticSource::ScorerChannel) => {
            return match policy {
                MissingPolicy::Abstain => Ok((None, None)),
                MissingPolicy::Error => Err(Error::MissingChannel("semantic scores".into())),
            }
        }
    };
    let (_, score) = select_best_reference(question, Some(&scores));
    match score {
        Some(s) => Ok((Some(semantic_flag(s, config.theta_sem)?), Some(origin))),
        None => match policy {
            MissingPolicy::Abstain => Ok((None, None)),
            MissingPolicy::Error => Err(Error::MissingChannel(
                "semantic scores cover no reference".into(),
            )),
        },
    }
}

/// Runs the three detectors on a whole answer.
pub fn detect(
    answer: &str,
    question: &Question,
    channels: &ScorerChannels,
    config: &DetectorConfig,
) -> Result<DetectionVerdict> {
    let lexicon = config.domain_lexicon.as_ref();
    let policy = config.nli_policy_on_missing;
    let (h_sem, origin) = semantic_component(
        answer,
        question,
        channels.semantic_scores.as_ref(),
        config,
        policy,
    )?;
    let refs = reference_entities(&question.references, lexicon);
    let h_ext = Some(factual_extension_flag(
        &extract_entities(answer, lexicon),
        &refs,
    ));
    let empty = BTreeMap::new();
    let h_nli = nli_flag(channels.nli_labels.as_ref().unwrap_or(&empty), policy)?;
    let mut v = DetectionVerdict::combine(h_sem, h_ext, h_nli)?;
    v.semantic_origin = origin;
    Ok(v)
}

/// Per-sentence overall flags. Semantic and NLI views use the per-sentence
/// channels when recorded (semantic falls back lexically if so configured)
/// and abstain otherwise; factual extension always runs.
pub fn detect_sentences(
    answer: &str,
    question: &Question,
    channels: &ScorerChannels,
    config: &DetectorConfig,
) -> Result<Vec<bool>> {
    let sentences = split_sentences(answer);
    if let Some(per) = &channels.sentence_scores {
        if per.len() != sentences.len() {
            return Err(Error::Invalid(format!(
                "{} sentence channels recorded for {} sentences",
                per.len(),
                sentences.len()
            )));
        }
    }
    let lexicon = config.domain_lexicon.as_ref();
    let refs = reference_entities(&question.references, lexicon);
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ch = channels.sentence_scores.as_ref().map(|v| &v[i]);
            let (h_sem, _) = semantic_component(
                s,
                question,
                ch.and_then(|c| c.semantic_scores.as_ref()),
                config,
                MissingPolicy::Abstain,
            )?;
            let h_ext = Some(factual_extension_flag(&extract_entities(s, lexicon), &refs));
            let h_nli = match ch.and_then(|c| c.nli_labels.as_ref()) {
                Some(l) => nli_flag(l, MissingPolicy::Abstain)?,
                None => None,
            };
            Ok(DetectionVerdict::combine(h_sem, h_ext, h_nli)?.overall)
        })
        .collect()
}

/// Fraction of flagged answers.
pub fn qa_halluc_rate(verdicts: &[DetectionVerdict]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::InsufficientSample("no verdicts".into()));
    }
    Ok(verdicts.iter().filter(|v| v.overall).count() as f64 / verdicts.len() as f64)
}

/// Mean over answers of the fraction of flagged sentences.
pub fn intra_halluc_rate(per_answer: &[Vec<bool>]) -> Result<f64> {
    if per_answer.is_empty() {
        return Err(Error::InsufficientSample("no answers".into()));
    }
    let mut total = 0.0;
    for (i, flags) in per_answer.iter().enumerate() {
        total += sentence_fraction(flags)
            .ok_or_else(|| Error::Invalid(format!("answer {i} has no sentences")))?;
    }
    Ok(total / per_answer.len() as f64)
}

pub fn sentence_fraction(flags: &[bool]) -> Option<f64> {
    if flags.is_empty() {
        return None;
    }
    Some(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Rates for a batch of answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub qa_rate: f64,
    pub intra_rate: f64,
    pub n: usize,
    pub per_question: Vec<(String, DetectionVerdict, f64)>,
}

impl RateReport {
    pub fn from_results(results: Vec<(String, DetectionVerdict, Vec<bool>)>) -> Result<Self> {
        let verdicts: Vec<DetectionVerdict> = results.iter().map(|r| r.1).collect();
        let flags: Vec<Vec<bool>> = results.iter().map(|r| r.2.clone()).collect();
        let qa_rate = qa_halluc_rate(&verdicts)?;
        let intra_rate = intra_halluc_rate(&flags)?;
        let per_question = results
            .into_iter()
            .map(|(id, v, f)| {
                let frac = sentence_fraction(&f).expect("checked by intra_halluc_rate");
                (id, v, frac)
            })
            .collect();
        Ok(Self {
            qa_rate,
            intra_rate,
            n: verdicts.len(),
            per_question,
        })
    }
}
