//! `report`: render a run log into a human-readable summary and refresh
//! the plottable trajectory file.

use std::path::Path;

use crate::llm::UsageTotals;
use crate::optimizer::{decimal_string, Decision, LogRecord, RatioRepr};

use super::rundir::{RunDir, RUN_LOG_FILE, TRAJECTORY_FILE, USAGE_FILE};
use super::RunnerError;

pub fn cmd_report(run_dir: &Path) -> Result<String, RunnerError> {
    let run = RunDir::open_existing(run_dir)?;
    if !run.exists(RUN_LOG_FILE) {
        return Err(RunnerError::Config(format!(
            "{}: no run_log found",
            run_dir.display()
        )));
    }
    let records = run.read_log_records()?;

    // refresh the trajectory file from the log
    let mut trajectory = String::from("k,top_score\n");
    for record in &records {
        if let LogRecord::Iteration(it) = record {
            if let Some(score) = it.top_score.to_score() {
                trajectory.push_str(&format!("{},{}\n", it.k, decimal_string(&score, 6)));
            }
        }
    }
    run.write_atomic(TRAJECTORY_FILE, &trajectory)?;

    let usage = read_usage(&run)?;
    Ok(render_report(&records, usage.as_ref()))
}

fn read_usage(run: &RunDir) -> Result<Option<UsageTotals>, RunnerError> {
    if !run.exists(USAGE_FILE) {
        return Ok(None);
    }
    let raw = run.read(USAGE_FILE)?;
    let mut totals = UsageTotals::default();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(value) => value,
            Err(_) => continue,
        };
        totals.requests += value["requests"].as_u64().unwrap_or(0);
        totals.cache_hits += value["cache_hits"].as_u64().unwrap_or(0);
        totals.prompt_tokens += value["prompt_tokens"].as_u64().unwrap_or(0);
        totals.completion_tokens += value["completion_tokens"].as_u64().unwrap_or(0);
        totals.total_latency_secs += value["total_latency_secs"].as_f64().unwrap_or(0.0);
    }
    Ok(Some(totals))
}

fn decision_label(decision: Decision) -> &'static str {
    match decision {
        Decision::Continue => "continue",
        Decision::EarlyStop => "early_stop",
        Decision::MaxIterations => "max_iterations",
    }
}

fn ratio_text(repr: &RatioRepr) -> String {
    if repr.1 == "1" {
        repr.0.clone()
    } else {
        format!("{}/{}", repr.0, repr.1)
    }
}

fn ratio_decimal(repr: &RatioRepr) -> String {
    repr.to_score()
        .map(|s| decimal_string(&s, 6))
        .unwrap_or_else(|| "?".into())
}

/// Pure renderer so golden tests can pin the exact bytes.
pub fn render_report(records: &[LogRecord], usage: Option<&UsageTotals>) -> String {
    let mut out = String::from("# Run report\n");

    for record in records {
        if let LogRecord::Baseline(b) = record {
            out.push_str("\n## Baseline\n\n");
            out.push_str(&format!(
                "- seed prompt `{}` solved {}/{} training tasks\n",
                b.prompt.id, b.solved, b.total
            ));
        }
    }

    let iterations: Vec<_> = records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Iteration(it) => Some(it),
            _ => None,
        })
        .collect();

    if !iterations.is_empty() {
        out.push_str("\n## Iterations\n\n");
        out.push_str("| k | top score | decimal | selected | decision |\n");
        out.push_str("|--:|-----------|--------:|----------|----------|\n");
        for it in &iterations {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                it.k,
                ratio_text(&it.top_score),
                ratio_decimal(&it.top_score),
                it.selected_ids.join(", "),
                decision_label(it.decision)
            ));
        }

        out.push_str("\n## Selected prompt texts\n");
        let mut previous: Option<Vec<&str>> = None;
        for it in &iterations {
            let texts: Vec<&str> = it
                .population
                .iter()
                .filter(|p| it.selected_ids.contains(&p.id))
                .map(|p| p.text.as_str())
                .collect();
            let changed = previous.as_ref() != Some(&texts);
            if changed {
                for (id, text) in it
                    .selected_ids
                    .iter()
                    .zip(texts.iter())
                {
                    out.push_str(&format!("\n### k={} ({id})\n\n```text\n{text}\n```\n", it.k));
                }
            }
            previous = Some(texts);
        }
    }

    for record in records {
        if let LogRecord::Final(f) = record {
            out.push_str("\n## Final prompt\n\n");
            out.push_str(&format!(
                "- stop: {} at k={}\n- id: `{}`\n",
                decision_label(f.decision),
                f.k,
                f.prompt.id
            ));
            if let Some(note) = &f.note {
                out.push_str(&format!("- note: {note}\n"));
            }
            out.push_str(&format!("\n```text\n{}\n```\n", f.prompt.text));
        }
    }

    if let Some(usage) = usage {
        out.push_str("\n## Usage\n\n");
        out.push_str(&format!(
            "- requests: {} (cache hits: {})\n",
            usage.requests, usage.cache_hits
        ));
        out.push_str(&format!(
            "- tokens: {} prompt + {} completion\n",
            usage.prompt_tokens, usage.completion_tokens
        ));
        out.push_str(&format!(
            "- total latency: {:.2} s\n",
            usage.total_latency_secs
        ));
    }

    out
}
