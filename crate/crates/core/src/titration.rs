//! Round-by-round context injection plans for the relevant and irrelevant
//! tracks.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{extract_entities, reference_entities};
use crate::error::{Error, Result};
use crate::trace::{ContextSnippet, Question, Track};

/// Default template: the context block (one snippet per line) followed by the
/// question, so the round-0 prompt is the bare question.
pub const DEFAULT_TEMPLATE: &str = "{context}{question}";

/// Prompt template with `{context}` and `{question}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for ph in ["{question}", "{context}"] {
            if !text.contains(ph) {
                return Err(Error::Invalid(format!(
                    "template lacks the {ph} placeholder"
                )));
            }
        }
        Ok(Self(text))
    }

    pub fn render(&self, snippets: &[ContextSnippet], question: &str) -> String {
        let context: String = snippets.iter().map(|s| format!("{}\n", s.text)).collect();
        self.0
            .replace("{context}", &context)
            .replace("{question}", question)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(DEFAULT_TEMPLATE.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedPrompt {
    pub round: u32,
    pub prompt: String,
    pub context_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TitrationPlan {
    pub question_id: String,
    pub track: Track,
    /// Rounds `0..=T`.
    pub prompts: Vec<PlannedPrompt>,
}

/// One line of `plan.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub question_id: String,
    pub track: Track,
    pub round: u32,
    pub prompt: String,
}

impl TitrationPlan {
    pub fn records(&self) -> impl Iterator<Item = PlanRecord> + '_ {
        self.prompts.iter().map(|p| PlanRecord {
            question_id: self.question_id.clone(),
            track: self.track,
            round: p.round,
            prompt: p.prompt.clone(),
        })
    }
}

/// The first `t` snippets.
pub fn build_cumulative_context(
    snippets: &[ContextSnippet],
    t: usize,
) -> Result<&[ContextSnippet]> {
    if t > snippets.len() {
        return Err(Error::Invalid(format!(
            "round {t} needs more snippets than the {} available",
            snippets.len()
        )));
    }
    Ok(&snippets[..t])
}

fn sorted_track(snippets: &[ContextSnippet], track: Track) -> Result<Vec<ContextSnippet>> {
    let mut s: Vec<ContextSnippet> = snippets.to_vec();
    s.sort_by_key(|c| c.index);
    for (i, c) in s.iter().enumerate() {
        if c.track != track {
            return Err(Error::Invalid(format!(
                "snippet {} belongs to track {}",
                c.index, c.track
            )));
        }
        if c.index != i as u32 + 1 {
            return Err(Error::Invalid(format!(
                "{track} snippets must be indexed 1..n, found {} at position {}",
                c.index,
                i + 1
            )));
        }
        if c.text.trim().is_empty() {
            return Err(Error::Invalid(format!(
                "{track} snippet {} is empty",
                c.index
            )));
        }
    }
    Ok(s)
}

fn plan_track(
    question: &Question,
    track: Track,
    snippets: &[ContextSnippet],
    rounds: u32,
    template: &PromptTemplate,
) -> Result<TitrationPlan> {
    let snippets = sorted_track(snippets, track)?;
    if snippets.len() < rounds as usize {
        return Err(Error::Invalid(format!(
            "{track} track for {} has {} snippets, {} short of {rounds}",
            question.id,
            snippets.len(),
            rounds as usize - snippets.len()
        )));
    }
    let prompts = (0..=rounds)
        .map(|t| {
            let ctx = build_cumulative_context(&snippets, t as usize)?;
            Ok(PlannedPrompt {
                round: t,
                prompt: template.render(ctx, &question.text),
                context_ids: ctx.iter().map(|c| c.index).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TitrationPlan {
        question_id: question.id.clone(),
        track,
        prompts,
    })
}

/// Plans both tracks for one question; each plan has `rounds + 1` prompts.
pub fn plan(
    question: &Question,
    relevant: &[ContextSnippet],
    irrelevant: &[ContextSnippet],
    rounds: u32,
    template: &PromptTemplate,
) -> Result<(TitrationPlan, TitrationPlan)> {
    Ok((
        plan_track(question, Track::Relevant, relevant, rounds, template)?,
        plan_track(question, Track::Irrelevant, irrelevant, rounds, template)?,
    ))
}

const RELEVANT_FRAMES: &[&str] = &[
    "Several accounts mention {ref} when discussing this topic.",
    "A widely shared summary states: {ref}",
    "Background notes include the detail {ref}",
    "One encyclopedia entry mentions {ref} alongside related facts.",
    "Earlier discussions of the question referred to {ref}",
];

const IRRELEVANT_FRAMES: &[&str] = &[
    "Visitors often talk about the {d} and its history.",
    "A long report covered the {d} in detail.",
    "An unrelated article described the {d} at length.",
    "Locals recall the opening of the {d} fondly.",
];

const DISTRACTOR_POOL: &[&str] = &[
    "Harbor of Quillon",
    "Marvessa Observatory",
    "Oldren Bridge",
    "Tavistok Gardens",
    "Velmora Institute",
    "Zentrik Council",
    "Brumov Archive",
    "Kestrel Valley Railway",
    "Orvane Festival",
    "Pellucid Library",
];

/// Deterministic template-filled snippets. Relevant snippets quote a
/// reference (so they carry its entities); irrelevant ones name distractors
/// whose entities never overlap the references.
pub fn synth_snippets(
    question: &Question,
    track: Track,
    rounds: u32,
    seed: u64,
) -> Result<Vec<ContextSnippet>> {
    if rounds < 1 {
        return Err(Error::Invalid("rounds must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&question.id) ^ fnv1a(track.as_str()));
    let snippets = match track {
        Track::Relevant => (1..=rounds)
            .map(|i| {
                let r = question
                    .references
                    .choose(&mut rng)
                    .expect("references are non-empty");
                let frame = RELEVANT_FRAMES[rng.gen_range(0..RELEVANT_FRAMES.len())];
                ContextSnippet {
                    track,
                    index: i,
                    text: frame.replace("{ref}", r),
                }
            })
            .collect(),
        Track::Irrelevant => {
            let refs = reference_entities(&question.references, None);
            let pool: Vec<&str> = DISTRACTOR_POOL
                .iter()
                .copied()
                .filter(|d| extract_entities(&format!("the {d}"), None).is_disjoint(&refs))
                .collect();
            if pool.is_empty() {
                return Err(Error::Invalid(format!(
                    "no distractor is disjoint from the references of {}",
                    question.id
                )));
            }
            (1..=rounds)
                .map(|i| {
                    let d = pool[rng.gen_range(0..pool.len())];
                    let frame = IRRELEVANT_FRAMES[rng.gen_range(0..IRRELEVANT_FRAMES.len())];
                    ContextSnippet {
                        track,
                        index: i,
                        text: frame.replace("{d}", d),
                    }
                })
                .collect()
        }
    };
    Ok(snippets)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// One line of a snippets file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetRecord {
    pub question_id: String,
    pub track: Track,
    pub index: u32,
    pub text: String,
}

/// Reads `snippets.jsonl` (`question_id`, `track`, `index`, `text` per line).
pub fn load_snippets(path: impl AsRef<Path>) -> Result<Vec<SnippetRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let rec: SnippetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, loc.as_str(), e.to_string()))?;
        if rec.index == 0 {
            return Err(Error::parse(path, loc, "snippet index must be >= 1"));
        }
        if !seen.insert((rec.question_id.clone(), rec.track, rec.index)) {
            return Err(Error::parse(path, loc, "duplicate snippet"));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Snippets of one question and track, as domain values.
pub fn snippets_for(
    records: &[SnippetRecord],
    question_id: &str,
    track: Track,
) -> Vec<ContextSnippet> {
    records
        .iter()
        .filter(|r| r.question_id == question_id && r.track == track)
        .map(|r| ContextSnippet {
            track,
            index: r.index,
            text: r.text.clone(),
        })
        .collect()
}

pub fn write_plan_jsonl<'a>(
    plans: impl IntoIterator<Item = &'a TitrationPlan>,
    path: impl AsRef<Path>,
) -> Result<usize> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for plan in plans {
        for rec in plan.records() {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            n += 1;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub fn load_plan_jsonl(path: impl AsRef<Path>) -> Result<Vec<PlanRecord>> {
    let path = path.as_ref();
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
