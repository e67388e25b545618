//! Reading and writing trace directories (`manifest.json` + `trace.jsonl`).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::trace::model::{ExperimentManifest, RoundRecord, Trace};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "trace.jsonl";

pub fn load_manifest(path: &Path) -> Result<ExperimentManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ExperimentManifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, format!("line {}", e.line()), e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads and validates a trace directory.
pub fn load_trace(dir: impl AsRef<Path>) -> Result<Trace> {
    let dir = dir.as_ref();
    let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
    let path = dir.join(RECORDS_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RoundRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&path, format!("line {}", i + 1), e.to_string()))?;
        records.push(rec);
    }
    Trace::from_records(manifest, records)
}

/// Writes `trace` into `dir`, creating it if needed. Floats are emitted in
/// shortest round-trip form, so loading the result reproduces the trace
/// bit for bit.
pub fn write_trace(trace: &Trace, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&trace.manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;

    let path = dir.join(RECORDS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for rec in trace.records.values() {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::model::{ScorerChannels, Track};

    fn write_files(dir: &Path, manifest: &str, lines: &[&str]) {
        fs::write(dir.join(MANIFEST_FILE), manifest).unwrap();
        fs::write(dir.join(RECORDS_FILE), lines.join("\n")).unwrap();
    }

    const MANIFEST: &str = r#"{"model_name":"tiny","hidden_dim":2,"rounds":1,"tracks":["relevant"],
        "question_ids":["q1"],"epsilon_pad":1e-12,"created_at":"2024-05-01T12:00:00Z"}"#;

    #[test]
    fn unknown_track_token_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            MANIFEST,
            &[
                r#"{"question_id":"q1","track":"sideways","round":0,"context_ids":[],"answer":"","hidden":[1,0],"attention":[1],"scorers":{}}"#,
            ],
        );
        let err = load_trace(dir.path()).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn bad_attention_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            MANIFEST,
            &[
                r#"{"question_id":"q1","track":"relevant","round":0,"context_ids":[],"answer":"","hidden":[1,0],"attention":[1],"scorers":{}}"#,
                r#"{"question_id":"q1","track":"relevant","round":1,"context_ids":[1],"answer":"","hidden":[1,0],"attention":[0.7,0.7],"scorers":{}}"#,
            ],
        );
        let err = load_trace(dir.path()).unwrap_err().to_string();
        assert!(err.contains("(q1, relevant, round 1)"), "{err}");
    }

    #[test]
    fn write_then_load_is_identity() {
        let manifest: ExperimentManifest = serde_json::from_str(MANIFEST).unwrap();
        let recs = (0..=1).map(|r| RoundRecord {
            question_id: "q1".into(),
            track: Track::Relevant,
            round: r,
            context_ids: (1..=r).collect(),
            answer: format!("answer {r}"),
            hidden: vec![0.1 + r as f64 / 3.0, -1e-300],
            attention: vec![1.0 / 3.0, 2.0 / 3.0],
            scorers: ScorerChannels::default(),
        });
        let trace = Trace::from_records(manifest, recs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_trace(&trace, dir.path()).unwrap();
        assert_eq!(load_trace(dir.path()).unwrap(), trace);
    }
}
