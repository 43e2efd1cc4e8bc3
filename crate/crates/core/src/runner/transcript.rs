//! JSON-lines episode transcripts.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RunError, ScenarioConfig};
use crate::action::Action;
use crate::icrl::{DecisionRecord, PromptBundle, Strategy};
use crate::llm::ChatExchange;
use crate::reward::EpisodeMetrics;
use crate::sim::StepRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEntry {
    /// 1-based decision index.
    pub step: u32,
    pub action: Action,
    pub record: DecisionRecord,
    pub strategy: Strategy,
    pub temperature: f64,
    pub bundle_hash: String,
    /// Actions of every Best-of-N sample or Self-Refine round.
    pub candidates: Vec<Action>,
    pub rounds: u32,
    /// Mean of the three scores over this decision's window.
    pub step_reward: f64,
    /// Reward stored in the experience buffer.
    pub evaluator_reward: f64,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<PromptBundle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TranscriptRecord {
    Header {
        schema: u32,
        run_id: String,
        config: ScenarioConfig,
    },
    /// One physics step; `decision` is 0 for the initial state.
    Step {
        decision: u32,
        record: StepRecord,
    },
    Exchange(ChatExchange),
    Decision(DecisionEntry),
    Footer {
        decisions: u32,
        metrics: Option<EpisodeMetrics>,
        error: Option<String>,
    },
}

pub fn encode(records: &[TranscriptRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("transcript records serialize"));
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `contents` next to `path` and renames it into place, so readers
/// never see a truncated file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| RunError::io(dir, e))?;
    tmp.write_all(contents).and_then(|_| tmp.as_file().sync_all()).map_err(|e| RunError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| RunError::io(path, e.error))?;
    Ok(())
}

/// Writes the transcript and returns its SHA-256.
pub fn write_transcript(path: &Path, records: &[TranscriptRecord]) -> Result<String, RunError> {
    let text = encode(records);
    write_atomic(path, text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn parse_transcript(text: &str, path: &Path) -> Result<Vec<TranscriptRecord>, RunError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RunError::Transcript {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    let records = parse_transcript(&text, path)?;
    match records.first() {
        Some(TranscriptRecord::Header { schema, .. }) if *schema == super::SCHEMA_VERSION => Ok(records),
        Some(TranscriptRecord::Header { schema, .. }) => Err(RunError::Transcript {
            path: path.to_path_buf(),
            message: format!("unsupported schema {schema}"),
        }),
        _ => Err(RunError::Transcript { path: path.to_path_buf(), message: "missing header".into() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/t.jsonl");
        write_atomic(&path, b"first\n").unwrap();
        write_atomic(&path, b"second\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second\n");
        let leftovers: Vec<_> = std::fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn records_round_trip() {
        let records = vec![
            TranscriptRecord::Header { schema: 1, run_id: "r".into(), config: ScenarioConfig::default() },
            TranscriptRecord::Footer { decisions: 0, metrics: None, error: Some("boom".into()) },
        ];
        let text = encode(&records);
        assert!(text.lines().next().unwrap().starts_with("{\"type\":\"header\""));
        assert_eq!(parse_transcript(&text, Path::new("x")).unwrap(), records);
    }

    #[test]
    fn rejects_headerless_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, encode(&[TranscriptRecord::Footer { decisions: 0, metrics: None, error: None }])).unwrap();
        assert!(matches!(read_transcript(&path), Err(RunError::Transcript { .. })));
    }
}
