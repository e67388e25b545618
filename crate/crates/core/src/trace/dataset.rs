//! Question datasets in CSV (`id,question,best_answer,references,category`)
//! or as a JSON array of objects with the same field names.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::trace::model::Question;

/// Separator between references inside the `references` cell.
pub const REFERENCE_DELIMITER: char = ';';

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawReferences {
    Joined(String),
    List(Vec<String>),
}

#[derive(Debug, Deserialize)]
struct RawQuestion {
    id: Option<String>,
    question: Option<String>,
    best_answer: Option<String>,
    references: Option<RawReferences>,
    #[serde(default)]
    category: Option<String>,
}

fn non_blank(v: Option<String>) -> Option<String> {
    v.map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

fn build_question(raw: RawQuestion, path: &Path, location: &str) -> Result<Question> {
    let err = |msg: &str| Error::parse(path, location, msg);
    let id = non_blank(raw.id).ok_or_else(|| err("missing id"))?;
    let text = non_blank(raw.question).ok_or_else(|| err("missing question"))?;
    let best = non_blank(raw.best_answer).ok_or_else(|| err("missing best answer"))?;
    let mut references: Vec<String> = match raw.references {
        Some(RawReferences::Joined(s)) => s
            .split(REFERENCE_DELIMITER)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect(),
        Some(RawReferences::List(v)) => v
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        None => Vec::new(),
    };
    if references.is_empty() {
        return Err(err("empty references"));
    }
    if !references.contains(&best) {
        references.insert(0, best.clone());
    }
    Ok(Question {
        id,
        text,
        best_reference: best,
        references,
        category: non_blank(raw.category).unwrap_or_default(),
    })
}

fn check_unique(questions: &[Question], path: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for q in questions {
        if !seen.insert(q.id.as_str()) {
            return Err(Error::parse(
                path,
                "dataset",
                format!("duplicate id `{}`", q.id),
            ));
        }
    }
    Ok(())
}

/// Loads a dataset; the format is chosen by extension (`.json` or CSV otherwise).
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Question>> {
    let path = path.as_ref();
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let questions = if is_json {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Vec<RawQuestion> = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, format!("line {}", e.line()), e.to_string()))?;
        raw.into_iter()
            .enumerate()
            .map(|(i, r)| build_question(r, path, &format!("entry {}", i + 1)))
            .collect::<Result<Vec<_>>>()?
    } else {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path, "header", e.to_string()))?;
        let headers = reader.headers()?.clone();
        let mut out = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::parse(path, format!("line {line}"), e.to_string())
            })?;
            let location = format!("line {}", row.position().map(|p| p.line()).unwrap_or(0));
            let raw: RawQuestion = row
                .deserialize(Some(&headers))
                .map_err(|e| Error::parse(path, location.as_str(), e.to_string()))?;
            out.push(build_question(raw, path, &location)?);
        }
        out
    };
    check_unique(&questions, path)?;
    Ok(questions)
}

/// Writes questions as CSV in the layout accepted by [`load_dataset`].
pub fn write_dataset_csv(questions: &[Question], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w =
        csv::Writer::from_path(path).map_err(|e| Error::parse(path, "write", e.to_string()))?;
    w.write_record(["id", "question", "best_answer", "references", "category"])?;
    let delim = REFERENCE_DELIMITER.to_string();
    for q in questions {
        w.write_record([
            q.id.as_str(),
            &q.text,
            &q.best_reference,
            &q.references.join(&delim),
            &q.category,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
