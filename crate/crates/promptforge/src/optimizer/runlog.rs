//! Canonical run-log records.
//!
//! One JSON record per line in `<run_dir>/run_log`: a baseline record for
//! the seed prompt's own score, one record per completed iteration, and a
//! final record naming the fixed prompt. Scores are serialized as
//! numerator/denominator string pairs so the log is exact and
//! byte-deterministic; wall-clock data lives in sidecar files, never here.

use serde::{Deserialize, Serialize};

use super::score::{Decision, RatioRepr};
use super::Prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Baseline(BaselineRecord),
    Iteration(IterationLogRecord),
    Final(FinalRecord),
}

/// Training-set outcome of the initial prompt, logged for reporting; the
/// seed itself never competes in later selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub prompt: Prompt,
    pub bits: Vec<u8>,
    pub solved: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLogRecord {
    pub k: u32,
    pub population: Vec<Prompt>,
    /// Row-major pass bits, one row per prompt.
    pub matrix: Vec<Vec<u8>>,
    pub weights: Vec<RatioRepr>,
    pub scores: Vec<RatioRepr>,
    pub selected_ids: Vec<String>,
    pub top_score: RatioRepr,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub prompt: Prompt,
    pub decision: Decision,
    pub k: u32,
    /// Set when the early-stop window matched on score while the selected
    /// prompt texts changed across it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }

    pub fn parse_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}
