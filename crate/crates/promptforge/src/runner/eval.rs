//! `eval`: score a fixed prompt over a corpus with the pass@1 harness.
//!
//! One temperature-0 generation per task, one suite run, no resampling.
//! Provider and sandbox faults never abort the report: affected tasks
//! count as failures with their status recorded, and the error count is
//! part of the report.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_tasks, Task};
use crate::optimizer::{decimal_string, EvidenceRecord, Score};
use crate::sandbox::{execute_response, generation_request, run_indexed, ProcessSandbox};

use super::config::RunConfig;
use super::rundir::{eval_evidence_path, RunDir, EVAL_REPORT_FILE};
use super::{build_client, RunnerError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTaskRow {
    pub id: String,
    pub m: u8,
    pub status: String,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassRate {
    pub numerator: String,
    pub denominator: String,
    pub decimal: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus: String,
    pub prompt_digest: String,
    pub per_task: Vec<EvalTaskRow>,
    pub pass_at_1: PassRate,
    pub token_totals: (u64, u64),
    pub mean_latency_secs: f64,
    pub errors: usize,
}

impl EvalReport {
    pub fn pass_rate(&self) -> Score {
        Score::new(
            self.pass_at_1.numerator.parse().expect("stored numerator"),
            self.pass_at_1
                .denominator
                .parse()
                .expect("stored denominator"),
        )
    }
}

enum CellOutcome {
    Completed { response: String },
    Errored { message: String },
}

/// Evaluate `prompt_path` against `corpus_path`, writing the report and
/// per-task evidence into the configured run directory.
pub fn cmd_eval(
    config: &RunConfig,
    scripted: Option<&Path>,
    prompt_path: &Path,
    corpus_path: &Path,
) -> Result<EvalReport, RunnerError> {
    let started = Instant::now();
    let prompt_text = std::fs::read_to_string(prompt_path).map_err(|e| {
        RunnerError::Config(format!("cannot read prompt {}: {e}", prompt_path.display()))
    })?;
    let corpus = load_tasks(corpus_path, config.train.format)?;
    if corpus.is_empty() {
        return Err(RunnerError::EmptyCorpus(corpus_path.to_path_buf()));
    }

    let run = if config.output.run_dir.exists() {
        RunDir::open_existing(&config.output.run_dir)?
    } else {
        RunDir::create_new(&config.output.run_dir)?
    };
    let _lock = run.lock()?;

    let llm = build_client(config, scripted)?;
    let sandbox = ProcessSandbox::new(config.sandbox.clone())
        .map_err(|e| RunnerError::Config(e.to_string()))?;

    // phase 1: model calls in corpus order (deterministic fixture use)
    let mut latencies: Vec<f64> = Vec::new();
    let mut outcomes: Vec<(usize, CellOutcome)> = Vec::new();
    for (idx, task) in corpus.tasks().iter().enumerate() {
        let request = generation_request(&prompt_text, task, &llm.model_name());
        match llm.complete(&request) {
            Ok(completion) => {
                latencies.push(completion.latency_secs);
                outcomes.push((
                    idx,
                    CellOutcome::Completed {
                        response: completion.text,
                    },
                ));
            }
            Err(err) => {
                log::warn!("task {}: provider error: {err}", task.id);
                outcomes.push((
                    idx,
                    CellOutcome::Errored {
                        message: err.to_string(),
                    },
                ));
            }
        }
    }

    // phase 2: extraction and suite execution across the worker pool
    let tasks: &[Task] = corpus.tasks();
    let prompt_digest = hex_digest(&prompt_text);
    let rows = run_indexed(outcomes, config.sandbox.workers(), |(idx, outcome)| {
        let task = &tasks[*idx];
        match outcome {
            CellOutcome::Completed { response } => {
                let executed = execute_response(response, task, &sandbox);
                let row = EvalTaskRow {
                    id: task.id.clone(),
                    m: executed.m as u8,
                    status: status_label(executed.evidence.status),
                    wall_time_secs: executed.evidence.wall_time_secs,
                };
                (row, Some(executed), false)
            }
            CellOutcome::Errored { message } => {
                let row = EvalTaskRow {
                    id: task.id.clone(),
                    m: 0,
                    status: "provider_error".into(),
                    wall_time_secs: 0.0,
                };
                log::debug!("task {} marked failed: {message}", task.id);
                (row, None, true)
            }
        }
    });

    let mut per_task = Vec::with_capacity(rows.len());
    let mut errors = 0usize;
    for (idx, (row, executed, errored)) in rows.into_iter().enumerate() {
        if let Some(executed) = executed {
            let task = &tasks[idx];
            let record = EvidenceRecord {
                label: "eval".into(),
                prompt_id: prompt_digest.clone(),
                task_id: task.id.clone(),
                request_digest: generation_request(&prompt_text, task, &llm.model_name())
                    .cache_key(&llm.cache_scope()),
                code: executed.snippet,
                result: executed.evidence,
            };
            let path = eval_evidence_path(idx, &task.id);
            run.write_atomic(
                &path,
                &serde_json::to_string_pretty(&record).expect("evidence serializes"),
            )?;
        }
        errors += errored as usize;
        per_task.push(row);
    }

    let solved = per_task.iter().filter(|row| row.m == 1).count();
    let rate = Score::new((solved as u64).into(), (per_task.len() as u64).into());
    let totals = llm.totals();
    let mean_latency_secs = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<f64>() / latencies.len() as f64
    };

    let report = EvalReport {
        corpus: corpus.label.clone(),
        prompt_digest,
        per_task,
        pass_at_1: PassRate {
            numerator: solved.to_string(),
            denominator: corpus.len().to_string(),
            decimal: decimal_string(&rate, 3),
        },
        token_totals: (totals.prompt_tokens, totals.completion_tokens),
        mean_latency_secs,
        errors,
    };
    run.write_atomic(
        EVAL_REPORT_FILE,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    let _ = run.append_usage("eval", &totals);
    let _ = run.append_timing("eval", started.elapsed().as_secs_f64());
    Ok(report)
}

fn hex_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

fn status_label(status: crate::sandbox::ExecStatus) -> String {
    serde_json::to_value(status)
        .expect("status serializes")
        .as_str()
        .expect("status is a string")
        .to_string()
}
