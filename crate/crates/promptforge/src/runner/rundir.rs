//! Run-directory layout, locking, and the file-backed persistence sink.
//!
//! A run directory is append-only while a run is live. Canonical artifacts
//! (manifest, training_set, run_log, trajectory, final_prompt) are
//! deterministic given seed and fixtures; wall-clock data goes to the
//! `usage` and `timings` sidecars, which are excluded from reproducibility
//! comparisons.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm::UsageTotals;
use crate::optimizer::{
    decimal_string, evidence_rel_path, CellCheckpoint, EvidenceRecord, LogRecord, Population,
    RunSink, Score,
};

use super::config::RunConfig;
use super::RunnerError;

pub const MANIFEST_FILE: &str = "manifest";
pub const TRAINING_SET_FILE: &str = "training_set";
pub const TRANSCRIPTS_FILE: &str = "mutation_transcripts";
pub const RUN_LOG_FILE: &str = "run_log";
pub const TRAJECTORY_FILE: &str = "trajectory";
pub const FINAL_PROMPT_FILE: &str = "final_prompt";
pub const EVAL_REPORT_FILE: &str = "eval_report";
pub const USAGE_FILE: &str = "usage";
pub const TIMINGS_FILE: &str = "timings";
const LOCK_FILE: &str = ".lock";

/// Everything needed to reproduce a run: resolved config, seed, tool
/// version, and the scripted fixture if one substituted the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seed: u64,
    pub scripted_fixture: Option<PathBuf>,
    pub config: RunConfig,
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Start a fresh run directory; refuses to reuse a non-empty one.
    pub fn create_new(root: impl Into<PathBuf>) -> Result<Self, RunnerError> {
        let root = root.into();
        if root.exists() {
            let occupied = fs::read_dir(&root)
                .map_err(RunnerError::Io)?
                .next()
                .is_some();
            if occupied {
                return Err(RunnerError::RefuseExisting(root));
            }
        } else {
            fs::create_dir_all(&root)?;
        }
        Ok(Self { root })
    }

    pub fn open_existing(root: impl Into<PathBuf>) -> Result<Self, RunnerError> {
        let root = root.into();
        if !root.is_dir() {
            return Err(RunnerError::Config(format!(
                "run directory {} does not exist",
                root.display()
            )));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Exclusive lock for the duration of a run; two simultaneous runs
    /// must use distinct run directories.
    pub fn lock(&self) -> Result<LockGuard, RunnerError> {
        let path = self.path(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(err) if err.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(RunnerError::Locked(self.root.clone()))
            }
            Err(err) => Err(err.into()),
        }
    }

    pub fn write_atomic(&self, name: &str, contents: &str) -> std::io::Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut tmp = tempfile::NamedTempFile::new_in(
            path.parent().expect("artifact paths have parents"),
        )?;
        tmp.write_all(contents.as_bytes())?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn append_line(&self, name: &str, line: &str) -> std::io::Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut file = fs::OpenOptions::new().append(true).create(true).open(path)?;
        writeln!(file, "{line}")?;
        Ok(())
    }

    pub fn read(&self, name: &str) -> std::io::Result<String> {
        fs::read_to_string(self.path(name))
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), RunnerError> {
        let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        self.write_atomic(MANIFEST_FILE, &body)?;
        Ok(())
    }

    pub fn read_manifest(&self) -> Result<Manifest, RunnerError> {
        let raw = self.read(MANIFEST_FILE).map_err(|e| {
            RunnerError::Config(format!(
                "{}: cannot read manifest (not a run directory?): {e}",
                self.root.display()
            ))
        })?;
        serde_json::from_str(&raw)
            .map_err(|e| RunnerError::Config(format!("manifest corrupt: {e}")))
    }

    /// Parse the run log, reporting the first corrupt line.
    pub fn read_log_records(&self) -> Result<Vec<LogRecord>, RunnerError> {
        if !self.exists(RUN_LOG_FILE) {
            return Ok(Vec::new());
        }
        let raw = self.read(RUN_LOG_FILE)?;
        let mut records = Vec::new();
        for (idx, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = LogRecord::parse_line(line).map_err(|e| RunnerError::CorruptLog {
                line: idx + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Ok(records)
    }

    pub fn append_usage(&self, label: &str, totals: &UsageTotals) -> std::io::Result<()> {
        let line = serde_json::json!({
            "label": label,
            "requests": totals.requests,
            "cache_hits": totals.cache_hits,
            "prompt_tokens": totals.prompt_tokens,
            "completion_tokens": totals.completion_tokens,
            "total_latency_secs": totals.total_latency_secs,
        });
        self.append_line(USAGE_FILE, &line.to_string())
    }

    pub fn append_timing(&self, label: &str, wall_secs: f64) -> std::io::Result<()> {
        let line = serde_json::json!({ "label": label, "wall_secs": wall_secs });
        self.append_line(TIMINGS_FILE, &line.to_string())
    }
}

pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// File-backed [`RunSink`]: populations and cell checkpoints under
/// `checkpoints/`, evidence under `executions/`, plus the append-only
/// run_log and trajectory.
pub struct FileSink<'a> {
    dir: &'a RunDir,
}

impl<'a> FileSink<'a> {
    pub fn new(dir: &'a RunDir) -> Self {
        Self { dir }
    }

    fn population_file(k: u32) -> String {
        format!("checkpoints/population_{k}.json")
    }

    fn cells_file(k: u32) -> String {
        format!("checkpoints/cells_{k}.jsonl")
    }
}

impl RunSink for FileSink<'_> {
    fn save_population(&mut self, population: &Population) -> std::io::Result<()> {
        let body = serde_json::to_string_pretty(population).expect("population serializes");
        self.dir
            .write_atomic(&Self::population_file(population.iteration), &body)
    }

    fn load_population(&mut self, k: u32) -> std::io::Result<Option<Population>> {
        let name = Self::population_file(k);
        if !self.dir.exists(&name) {
            return Ok(None);
        }
        let raw = self.dir.read(&name)?;
        serde_json::from_str(&raw)
            .map(Some)
            .map_err(|e| std::io::Error::other(format!("population checkpoint corrupt: {e}")))
    }

    fn append_cell(
        &mut self,
        k: u32,
        cell: &CellCheckpoint,
        evidence: &EvidenceRecord,
    ) -> std::io::Result<()> {
        let body = serde_json::to_string_pretty(evidence).expect("evidence serializes");
        self.dir.write_atomic(&cell.evidence_ref, &body)?;
        let line = serde_json::to_string(cell).expect("cell serializes");
        self.dir.append_line(&Self::cells_file(k), &line)
    }

    fn load_cells(&mut self, k: u32) -> std::io::Result<Vec<CellCheckpoint>> {
        let name = Self::cells_file(k);
        if !self.dir.exists(&name) {
            return Ok(Vec::new());
        }
        let raw = self.dir.read(&name)?;
        let mut cells = Vec::new();
        for line in raw.lines().filter(|l| !l.trim().is_empty()) {
            let cell = serde_json::from_str(line)
                .map_err(|e| std::io::Error::other(format!("cell checkpoint corrupt: {e}")))?;
            cells.push(cell);
        }
        Ok(cells)
    }

    fn append_log(&mut self, record: &LogRecord) -> std::io::Result<()> {
        self.dir.append_line(RUN_LOG_FILE, &record.to_line())
    }

    fn append_trajectory(&mut self, k: u32, top_score: &Score) -> std::io::Result<()> {
        if !self.dir.exists(TRAJECTORY_FILE) {
            self.dir.append_line(TRAJECTORY_FILE, "k,top_score")?;
        }
        self.dir
            .append_line(TRAJECTORY_FILE, &format!("{k},{}", decimal_string(top_score, 6)))
    }

    fn write_final_prompt(&mut self, text: &str) -> std::io::Result<()> {
        self.dir.write_atomic(FINAL_PROMPT_FILE, text)
    }
}

/// Evidence path for post-optimization evaluation cells.
pub fn eval_evidence_path(task_idx: usize, task_id: &str) -> String {
    evidence_rel_path("eval", task_idx, task_id)
}
