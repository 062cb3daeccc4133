//! The optimization loop: mutate selected prompts into a population,
//! evaluate every prompt against the training set, weight and score in
//! exact rationals, select the argmax set, and stop once the top score
//! stabilizes or the iteration cap is reached.
//!
//! The loop is sequential across iterations (iteration k seeds on the
//! prompts iteration k-1 selected). Within one iteration the model calls
//! happen in cell order — which keeps scripted fixtures deterministic —
//! while suite executions fan out across a bounded worker pool. Every
//! completed cell is checkpointed through the [`RunSink`] before the next
//! model call, so an aborted iteration resumes without repeating paid
//! work.

pub mod runlog;
pub mod score;

pub use runlog::{BaselineRecord, FinalRecord, IterationLogRecord, LogRecord};
pub use score::{
    argmax_set, check_convergence, compute_weights, decimal_string, weighted_scores, BitMatrix,
    ConvergenceState, Decision, RatioRepr, Score,
};

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Task, TrainingSet};
use crate::llm::{ChatRequest, LlmClient, LlmError, Message, MUTATION_TEMPERATURE};
use crate::sandbox::{run_indexed, CodeSnippet, ExecutionResult, Sandbox};

/// Fixed instruction sent as the system message of every prompt-mutation
/// request.
pub const PROMPT_MUTATION_INSTRUCTION: &str = "You are an expert prompt engineer. Please help me improve the given prompt to get a more helpful and harmless response.";

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("mutation of {0} returned empty text")]
    EmptyMutation(String),
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error("persistence failed: {0}")]
    Persist(#[from] std::io::Error),
    #[error("iteration {k} aborted: {cause}")]
    IterationAborted { k: u32, cause: Box<OptimizerError> },
    #[error("run log already holds a final prompt")]
    AlreadyComplete,
    #[error("run state malformed: {0}")]
    BadState(String),
}

/// A candidate instruction with lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: String,
    pub text: String,
    pub iteration_born: u32,
    pub parent_id: Option<String>,
}

impl Prompt {
    pub fn initial(text: impl Into<String>) -> Self {
        Self {
            id: "p0.0".into(),
            text: text.into(),
            iteration_born: 0,
            parent_id: None,
        }
    }
}

/// The n prompt variants of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub iteration: u32,
    pub prompts: Vec<Prompt>,
}

/// Pass/fail grid plus per-cell evidence record references.
#[derive(Debug, Clone)]
pub struct ResultMatrix {
    pub bits: BitMatrix,
    pub evidence: Vec<Vec<String>>,
}

/// Everything about one completed iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: u32,
    pub population: Population,
    pub matrix: ResultMatrix,
    pub weights: Vec<Score>,
    pub scores: Vec<Score>,
    pub selected_ids: Vec<String>,
    pub top_score: Score,
}

/// One checkpointed matrix cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheckpoint {
    pub prompt_idx: usize,
    pub task_idx: usize,
    pub m: u8,
    pub evidence_ref: String,
}

/// Persisted execution evidence for one cell. The label is the iteration
/// number, `0` for the baseline row, or `eval` for post-optimization
/// evaluation cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub label: String,
    pub prompt_id: String,
    pub task_id: String,
    pub request_digest: String,
    pub code: CodeSnippet,
    pub result: ExecutionResult,
}

/// Relative path of a cell's evidence record inside the run directory.
/// Task ids are sanitized for the filesystem; a short digest
/// disambiguates ids the sanitizer collapsed.
pub fn evidence_rel_path(label: &str, row: usize, task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '-'
            }
        })
        .collect();
    if safe == task_id {
        format!("executions/{label}/{row}_{safe}.record")
    } else {
        let mut hasher = Sha256::new();
        hasher.update(task_id.as_bytes());
        let tag = hex::encode(&hasher.finalize()[..4]);
        format!("executions/{label}/{row}_{safe}-{tag}.record")
    }
}

/// Where the loop persists its progress. The runner implements this over
/// the run directory; tests use an in-memory sink.
pub trait RunSink {
    fn save_population(&mut self, population: &Population) -> std::io::Result<()>;
    fn load_population(&mut self, k: u32) -> std::io::Result<Option<Population>>;
    fn append_cell(
        &mut self,
        k: u32,
        cell: &CellCheckpoint,
        evidence: &EvidenceRecord,
    ) -> std::io::Result<()>;
    fn load_cells(&mut self, k: u32) -> std::io::Result<Vec<CellCheckpoint>>;
    fn append_log(&mut self, record: &LogRecord) -> std::io::Result<()>;
    fn append_trajectory(&mut self, k: u32, top_score: &Score) -> std::io::Result<()>;
    fn write_final_prompt(&mut self, text: &str) -> std::io::Result<()>;
}

/// Sink that remembers everything in memory; for tests and dry runs.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub populations: HashMap<u32, Population>,
    pub cells: HashMap<u32, Vec<CellCheckpoint>>,
    pub evidence: HashMap<String, EvidenceRecord>,
    pub log: Vec<LogRecord>,
    pub trajectory: Vec<(u32, String)>,
    pub final_prompt: Option<String>,
}

impl RunSink for MemorySink {
    fn save_population(&mut self, population: &Population) -> std::io::Result<()> {
        self.populations.insert(population.iteration, population.clone());
        Ok(())
    }

    fn load_population(&mut self, k: u32) -> std::io::Result<Option<Population>> {
        Ok(self.populations.get(&k).cloned())
    }

    fn append_cell(
        &mut self,
        k: u32,
        cell: &CellCheckpoint,
        evidence: &EvidenceRecord,
    ) -> std::io::Result<()> {
        self.evidence
            .insert(cell.evidence_ref.clone(), evidence.clone());
        self.cells.entry(k).or_default().push(cell.clone());
        Ok(())
    }

    fn load_cells(&mut self, k: u32) -> std::io::Result<Vec<CellCheckpoint>> {
        Ok(self.cells.get(&k).cloned().unwrap_or_default())
    }

    fn append_log(&mut self, record: &LogRecord) -> std::io::Result<()> {
        self.log.push(record.clone());
        Ok(())
    }

    fn append_trajectory(&mut self, k: u32, top_score: &Score) -> std::io::Result<()> {
        self.trajectory.push((k, decimal_string(top_score, 6)));
        Ok(())
    }

    fn write_final_prompt(&mut self, text: &str) -> std::io::Result<()> {
        self.final_prompt = Some(text.to_string());
        Ok(())
    }
}

/// Independent deterministic randomness per use site: stream identity is
/// (seed, label), so resuming a run replays the exact same draws without
/// tracking how many were consumed elsewhere.
pub fn rng_for(seed: u64, label: &str) -> ChaCha12Rng {
    use rand::SeedableRng;
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// If the whole trimmed body is one fenced block, return its contents.
fn strip_outer_fence(text: &str) -> String {
    let trimmed = text.trim();
    if !trimmed.starts_with("```") {
        return trimmed.to_string();
    }
    let lines: Vec<&str> = trimmed.lines().collect();
    if lines.len() >= 2 && lines.last().map(|l| l.trim()) == Some("```") {
        lines[1..lines.len() - 1].join("\n").trim().to_string()
    } else {
        trimmed.to_string()
    }
}

/// One temperature-1.0 mutation of a seed prompt.
pub fn mutate_prompt(
    seed: &Prompt,
    child_id: String,
    iteration: u32,
    llm: &LlmClient,
) -> Result<Prompt, OptimizerError> {
    let request = ChatRequest::new(
        llm.model_name(),
        vec![
            Message::system(PROMPT_MUTATION_INSTRUCTION),
            Message::user(&seed.text),
        ],
        MUTATION_TEMPERATURE,
    );
    let completion = llm.complete(&request)?;
    let text = strip_outer_fence(&completion.text);
    if text.is_empty() {
        return Err(OptimizerError::EmptyMutation(seed.id.clone()));
    }
    Ok(Prompt {
        id: child_id,
        text,
        iteration_born: iteration,
        parent_id: Some(seed.id.clone()),
    })
}

/// Produce iteration k's population: n children, each mutated from a
/// uniformly sampled member of the selected set (with replacement). A
/// child whose mutation comes back empty is retried once.
pub fn generate_population(
    selected: &[Prompt],
    n: usize,
    iteration: u32,
    llm: &LlmClient,
    rng: &mut ChaCha12Rng,
) -> Result<Population, OptimizerError> {
    assert!(!selected.is_empty(), "selected set must be non-empty");
    assert!(n >= 1, "population size must be at least 1");
    let mut prompts = Vec::with_capacity(n);
    for i in 0..n {
        let parent = &selected[rng.random_range(0..selected.len())];
        let child_id = format!("p{iteration}.{i}");
        let child = match mutate_prompt(parent, child_id.clone(), iteration, llm) {
            Ok(child) => child,
            Err(OptimizerError::EmptyMutation(_)) => {
                mutate_prompt(parent, child_id, iteration, llm)?
            }
            Err(err) => return Err(err),
        };
        prompts.push(child);
    }
    Ok(Population {
        iteration,
        prompts,
    })
}

struct PendingCell {
    prompt_idx: usize,
    task_idx: usize,
    prompt_id: String,
    request_digest: String,
    response_text: String,
}

/// Evaluate `prompts` × `training`, checkpointing each cell. Model calls
/// run in cell order; extraction and execution fan out per batch of
/// `workers`. Already-checkpointed cells are skipped.
fn evaluate_prompts(
    k: u32,
    prompts: &[Prompt],
    training: &TrainingSet,
    llm: &LlmClient,
    sandbox: &dyn Sandbox,
    sink: &mut dyn RunSink,
    workers: usize,
) -> Result<ResultMatrix, OptimizerError> {
    let tasks = &training.tasks;
    let mut bits = vec![vec![false; tasks.len()]; prompts.len()];
    let mut evidence = vec![vec![String::new(); tasks.len()]; prompts.len()];

    let mut done: HashMap<(usize, usize), CellCheckpoint> = HashMap::new();
    for cell in sink.load_cells(k)? {
        done.insert((cell.prompt_idx, cell.task_idx), cell);
    }

    let mut pending: Vec<PendingCell> = Vec::new();
    let mut abort: Option<LlmError> = None;

    'outer: for (i, prompt) in prompts.iter().enumerate() {
        for (j, task) in tasks.iter().enumerate() {
            if let Some(cell) = done.get(&(i, j)) {
                bits[i][j] = cell.m == 1;
                evidence[i][j] = cell.evidence_ref.clone();
                continue;
            }
            let request = crate::sandbox::generation_request(&prompt.text, task, &llm.model_name());
            let digest = request.cache_key(&llm.cache_scope());
            match llm.complete(&request) {
                Ok(completion) => pending.push(PendingCell {
                    prompt_idx: i,
                    task_idx: j,
                    prompt_id: prompt.id.clone(),
                    request_digest: digest,
                    response_text: completion.text,
                }),
                Err(err) => {
                    abort = Some(err);
                    break 'outer;
                }
            }
            if pending.len() >= workers.max(1) {
                flush_batch(k, &mut pending, tasks, sandbox, sink, &mut bits, &mut evidence)?;
            }
        }
    }
    flush_batch(k, &mut pending, tasks, sandbox, sink, &mut bits, &mut evidence)?;

    if let Some(cause) = abort {
        return Err(OptimizerError::IterationAborted {
            k,
            cause: Box::new(OptimizerError::Provider(cause)),
        });
    }

    let matrix = BitMatrix::new(bits).map_err(|e| OptimizerError::BadState(e.to_string()))?;
    Ok(ResultMatrix {
        bits: matrix,
        evidence,
    })
}

fn flush_batch(
    k: u32,
    pending: &mut Vec<PendingCell>,
    tasks: &[Task],
    sandbox: &dyn Sandbox,
    sink: &mut dyn RunSink,
    bits: &mut [Vec<bool>],
    evidence: &mut [Vec<String>],
) -> Result<(), OptimizerError> {
    if pending.is_empty() {
        return Ok(());
    }
    let batch = std::mem::take(pending);
    let workers = batch.len();
    let executed = run_indexed(batch, workers, |cell| {
        let outcome =
            crate::sandbox::execute_response(&cell.response_text, &tasks[cell.task_idx], sandbox);
        (
            cell.prompt_idx,
            cell.task_idx,
            cell.prompt_id.clone(),
            cell.request_digest.clone(),
            outcome,
        )
    });
    for (prompt_idx, task_idx, prompt_id, request_digest, outcome) in executed {
        let task = &tasks[task_idx];
        let evidence_ref = evidence_rel_path(&k.to_string(), prompt_idx, &task.id);
        let record = EvidenceRecord {
            label: k.to_string(),
            prompt_id,
            task_id: task.id.clone(),
            request_digest,
            code: outcome.snippet,
            result: outcome.evidence.clone(),
        };
        let cell = CellCheckpoint {
            prompt_idx,
            task_idx,
            m: outcome.m as u8,
            evidence_ref: evidence_ref.clone(),
        };
        sink.append_cell(k, &cell, &record)?;
        bits[prompt_idx][task_idx] = outcome.m;
        evidence[prompt_idx][task_idx] = evidence_ref;
    }
    Ok(())
}

/// Evaluate a full population against the training set.
pub fn evaluate_population(
    population: &Population,
    training: &TrainingSet,
    llm: &LlmClient,
    sandbox: &dyn Sandbox,
    sink: &mut dyn RunSink,
    workers: usize,
) -> Result<ResultMatrix, OptimizerError> {
    if training.tasks.is_empty() {
        return Err(OptimizerError::EmptyTrainingSet);
    }
    evaluate_prompts(
        population.iteration,
        &population.prompts,
        training,
        llm,
        sandbox,
        sink,
        workers,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeParams {
    pub n: usize,
    pub k_max: u32,
    pub window: usize,
    pub seed: u64,
    pub workers: usize,
}

/// Loop position, reconstructed from the run log when resuming.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub selected: Vec<Prompt>,
    pub history: Vec<Score>,
    /// Selected prompt texts per completed iteration (for the early-stop
    /// change note).
    pub selected_texts: Vec<Vec<String>>,
    pub next_k: u32,
    pub baseline_done: bool,
}

impl LoopState {
    pub fn fresh(initial: &Prompt) -> Self {
        Self {
            selected: vec![initial.clone()],
            history: Vec::new(),
            selected_texts: Vec::new(),
            next_k: 1,
            baseline_done: false,
        }
    }

    /// Rebuild the state after the last fully recorded iteration.
    pub fn from_records(initial: &Prompt, records: &[LogRecord]) -> Result<Self, OptimizerError> {
        let mut state = Self::fresh(initial);
        for record in records {
            match record {
                LogRecord::Baseline(_) => state.baseline_done = true,
                LogRecord::Iteration(it) => {
                    let selected: Vec<Prompt> = it
                        .population
                        .iter()
                        .filter(|p| it.selected_ids.contains(&p.id))
                        .cloned()
                        .collect();
                    if selected.is_empty() {
                        return Err(OptimizerError::BadState(format!(
                            "iteration {} selects no prompts",
                            it.k
                        )));
                    }
                    let top = it.top_score.to_score().ok_or_else(|| {
                        OptimizerError::BadState(format!("iteration {} top score invalid", it.k))
                    })?;
                    state.history.push(top);
                    state
                        .selected_texts
                        .push(selected.iter().map(|p| p.text.clone()).collect());
                    state.selected = selected;
                    state.next_k = it.k + 1;
                }
                LogRecord::Final(_) => return Err(OptimizerError::AlreadyComplete),
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub final_prompt: Prompt,
    pub decision: Decision,
    pub stopped_at: u32,
    pub records: Vec<IterationRecord>,
}

/// Run the optimization loop from `state` until convergence or the cap.
///
/// The final prompt is drawn uniformly from the last iteration's selected
/// set, written through the sink, and never modified afterwards.
pub fn optimize(
    initial: &Prompt,
    training: &TrainingSet,
    params: &OptimizeParams,
    llm: &LlmClient,
    sandbox: &dyn Sandbox,
    sink: &mut dyn RunSink,
    mut state: LoopState,
) -> Result<OptimizeOutcome, OptimizerError> {
    if training.tasks.is_empty() {
        return Err(OptimizerError::EmptyTrainingSet);
    }
    assert!(params.n >= 1 && params.k_max >= 1 && params.window >= 1);

    if !state.baseline_done {
        let row = evaluate_prompts(
            0,
            std::slice::from_ref(initial),
            training,
            llm,
            sandbox,
            sink,
            params.workers,
        )
        .map_err(|err| match err {
            OptimizerError::IterationAborted { cause, .. } => {
                OptimizerError::IterationAborted { k: 0, cause }
            }
            other => other,
        })?;
        let bits: Vec<u8> = row.bits.rows()[0].iter().map(|&b| b as u8).collect();
        let solved = bits.iter().filter(|&&b| b == 1).count();
        sink.append_log(&LogRecord::Baseline(BaselineRecord {
            prompt: initial.clone(),
            bits,
            solved,
            total: training.tasks.len(),
        }))?;
        state.baseline_done = true;
    }

    let mut records: Vec<IterationRecord> = Vec::new();
    loop {
        let k = state.next_k;
        if k > params.k_max {
            // only reachable through a malformed resume state
            return Err(OptimizerError::BadState(format!(
                "next iteration {k} exceeds k_max {}",
                params.k_max
            )));
        }

        let population = match sink.load_population(k)? {
            Some(population) => population,
            None => {
                let mut rng = rng_for(params.seed, &format!("parents:{k}"));
                let population =
                    generate_population(&state.selected, params.n, k, llm, &mut rng).map_err(
                        |cause| OptimizerError::IterationAborted {
                            k,
                            cause: Box::new(cause),
                        },
                    )?;
                sink.save_population(&population)?;
                population
            }
        };

        let matrix = evaluate_population(&population, training, llm, sandbox, sink, params.workers)?;
        let weights = compute_weights(&matrix.bits);
        let scores = weighted_scores(&matrix.bits, &weights);
        let selected_idx = argmax_set(&scores);
        let selected: Vec<Prompt> = selected_idx
            .iter()
            .map(|&i| population.prompts[i].clone())
            .collect();
        let selected_ids: Vec<String> = selected.iter().map(|p| p.id.clone()).collect();
        let top_score = scores[selected_idx[0]].clone();

        state.history.push(top_score.clone());
        state
            .selected_texts
            .push(selected.iter().map(|p| p.text.clone()).collect());

        let decision = check_convergence(&ConvergenceState {
            top_score_history: state.history.clone(),
            k,
            k_max: params.k_max,
            window: params.window,
        });

        sink.append_log(&LogRecord::Iteration(IterationLogRecord {
            k,
            population: population.prompts.clone(),
            matrix: matrix
                .bits
                .rows()
                .iter()
                .map(|row| row.iter().map(|&b| b as u8).collect())
                .collect(),
            weights: weights.iter().map(RatioRepr::of).collect(),
            scores: scores.iter().map(RatioRepr::of).collect(),
            selected_ids: selected_ids.clone(),
            top_score: RatioRepr::of(&top_score),
            decision,
        }))?;
        sink.append_trajectory(k, &top_score)?;

        records.push(IterationRecord {
            k,
            population,
            matrix,
            weights,
            scores,
            selected_ids,
            top_score,
        });
        state.selected = selected;
        state.next_k = k + 1;

        if decision == Decision::Continue {
            continue;
        }

        let mut rng = rng_for(params.seed, "final");
        let winner = state.selected[rng.random_range(0..state.selected.len())].clone();
        let note = early_stop_note(decision, params.window, &state.selected_texts);
        if let Some(note) = &note {
            log::warn!("{note}");
        }
        sink.append_log(&LogRecord::Final(FinalRecord {
            prompt: winner.clone(),
            decision,
            k,
            note,
        }))?;
        sink.write_final_prompt(&winner.text)?;

        return Ok(OptimizeOutcome {
            final_prompt: winner,
            decision,
            stopped_at: k,
            records,
        });
    }
}

/// The early-stop rule compares score values; when the selected texts
/// changed across the window the literal condition still fired, which is
/// worth a note in the log.
fn early_stop_note(
    decision: Decision,
    window: usize,
    selected_texts: &[Vec<String>],
) -> Option<String> {
    if decision != Decision::EarlyStop || selected_texts.len() < window {
        return None;
    }
    let tail = &selected_texts[selected_texts.len() - window..];
    let all_same = tail.iter().all(|texts| texts == &tail[0]);
    if all_same {
        None
    } else {
        Some(format!(
            "early stop matched on score while the selected prompt texts changed across the last {window} iterations"
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::embedded_task;
    use crate::dataset::{SuiteKind, TestSuite};
    use crate::llm::{LlmClient, Matcher, ScriptFixture, ScriptRule, ScriptedProvider};
    use crate::sandbox::{ExecStatus, SnippetOrigin};
    use std::sync::Arc;

    /// Sandbox stub: a response "passes" a task iff it contains that
    /// task's embedded test code as a substring. No subprocesses.
    struct StubSandbox;

    impl Sandbox for StubSandbox {
        fn extract_code(&self, response: &str) -> CodeSnippet {
            CodeSnippet {
                text: response.to_string(),
                origin: SnippetOrigin::WholeResponse,
                syntax_valid: !response.trim().is_empty() && !response.contains("INVALID"),
            }
        }

        fn check_syntax(&self, source: &str) -> bool {
            !source.contains("INVALID")
        }

        fn run_program(&self, _code: &CodeSnippet, _stdin: Option<&str>) -> ExecutionResult {
            ExecutionResult {
                status: ExecStatus::Pass,
                stdout: String::new(),
                stderr: String::new(),
                wall_time_secs: 0.0,
                tests_passed: 1,
                tests_total: 1,
            }
        }

        fn run_suite(
            &self,
            code: &CodeSnippet,
            suite: &TestSuite,
            _entry_point: Option<&str>,
        ) -> ExecutionResult {
            let marker = match suite.kind {
                SuiteKind::EmbeddedTests => suite.embedded.as_deref().unwrap_or_default(),
                SuiteKind::IoPairs => "",
            };
            let pass = !marker.is_empty() && code.text.contains(marker);
            ExecutionResult {
                status: if pass { ExecStatus::Pass } else { ExecStatus::Fail },
                stdout: String::new(),
                stderr: String::new(),
                wall_time_secs: 0.0,
                tests_passed: pass as u32,
                tests_total: 1,
            }
        }
    }

    fn client(rules: Vec<ScriptRule>) -> LlmClient {
        LlmClient::direct(Arc::new(ScriptedProvider::new(ScriptFixture { rules })))
    }

    fn training(markers: &[&str]) -> TrainingSet {
        let tasks: Vec<_> = markers
            .iter()
            .enumerate()
            .map(|(i, marker)| {
                embedded_task(&format!("t/{i}"), &format!("task {marker}"), marker, "f")
            })
            .collect();
        let count = tasks.len();
        TrainingSet {
            tasks,
            count_existing: count,
            count_mutated: 0,
        }
    }

    #[test]
    fn mutate_prompt_keeps_lineage_and_strips_outer_fence() {
        let llm = client(vec![ScriptFixture::rule(
            Matcher::Exact("seed text".into()),
            vec!["```\nYou are an expert engineer; write correct code.\n```"],
        )]);
        let seed = Prompt::initial("seed text");
        let child = mutate_prompt(&seed, "p1.0".into(), 1, &llm).unwrap();
        assert_eq!(child.text, "You are an expert engineer; write correct code.");
        assert_eq!(child.parent_id.as_deref(), Some("p0.0"));
        assert_eq!(child.iteration_born, 1);
    }

    #[test]
    fn empty_mutation_is_an_error() {
        let llm = client(vec![ScriptFixture::rule(
            Matcher::Exact("seed".into()),
            vec!["   \n  "],
        )]);
        let seed = Prompt::initial("seed");
        assert!(matches!(
            mutate_prompt(&seed, "p1.0".into(), 1, &llm),
            Err(OptimizerError::EmptyMutation(_))
        ));
    }

    #[test]
    fn inner_fences_survive_outer_strip() {
        assert_eq!(strip_outer_fence("plain text"), "plain text");
        assert_eq!(strip_outer_fence("```\nbody\n```"), "body");
        let partial = "```\nunclosed";
        assert_eq!(strip_outer_fence(partial), partial);
    }

    #[test]
    fn singleton_parent_population_shares_parent() {
        let llm = client(vec![ScriptFixture::rule(
            Matcher::Exact("only seed".into()),
            vec!["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"],
        )]);
        let selected = vec![Prompt::initial("only seed")];
        let mut rng = rng_for(1, "parents:1");
        let population = generate_population(&selected, 10, 1, &llm, &mut rng).unwrap();
        assert_eq!(population.prompts.len(), 10);
        assert!(population
            .prompts
            .iter()
            .all(|p| p.parent_id.as_deref() == Some("p0.0")));
        assert!(population.prompts.iter().all(|p| p.iteration_born == 1));
    }

    #[test]
    fn parent_assignment_is_reproducible() {
        let selected = vec![
            Prompt {
                id: "s0".into(),
                text: "seed zero".into(),
                iteration_born: 1,
                parent_id: Some("p0.0".into()),
            },
            Prompt {
                id: "s1".into(),
                text: "seed one".into(),
                iteration_born: 1,
                parent_id: Some("p0.0".into()),
            },
        ];
        let run = |seed: u64| {
            let llm = client(vec![
                ScriptFixture::rule(Matcher::Exact("seed zero".into()), vec!["z"; 10]),
                ScriptFixture::rule(Matcher::Exact("seed one".into()), vec!["o"; 10]),
            ]);
            let mut rng = rng_for(seed, "parents:2");
            generate_population(&selected, 10, 2, &llm, &mut rng)
                .unwrap()
                .prompts
                .iter()
                .map(|p| p.parent_id.clone().unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        // two seeds drawing identical assignments for 10 draws over 2
        // parents would be a 1/1024 coincidence; these differ
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn empty_mutation_retries_once_then_succeeds() {
        let llm = client(vec![ScriptFixture::rule(
            Matcher::Exact("s".into()),
            vec!["", "recovered"],
        )]);
        let selected = vec![Prompt::initial("s")];
        let mut rng = rng_for(1, "parents:1");
        let population = generate_population(&selected, 1, 1, &llm, &mut rng).unwrap();
        assert_eq!(population.prompts[0].text, "recovered");
    }

    #[test]
    fn matrix_matches_scripted_outcomes() {
        // 2 prompts x 3 tasks: rows [[1,0,1],[1,1,1]]
        let training = training(&["M0", "M1", "M2"]);
        let prompts = vec![
            Prompt {
                id: "p1.0".into(),
                text: "alpha".into(),
                iteration_born: 1,
                parent_id: Some("p0.0".into()),
            },
            Prompt {
                id: "p1.1".into(),
                text: "beta".into(),
                iteration_born: 1,
                parent_id: Some("p0.0".into()),
            },
        ];
        let population = Population {
            iteration: 1,
            prompts,
        };
        // responses keyed by task description; queue order is prompt 0 then 1
        let llm = client(vec![
            ScriptFixture::rule(Matcher::Substring("task M0".into()), vec!["M0", "M0"]),
            ScriptFixture::rule(Matcher::Substring("task M1".into()), vec!["nope", "M1"]),
            ScriptFixture::rule(Matcher::Substring("task M2".into()), vec!["M2", "M2"]),
        ]);
        let mut sink = MemorySink::default();
        let matrix =
            evaluate_population(&population, &training, &llm, &StubSandbox, &mut sink, 2).unwrap();
        let rows: Vec<Vec<bool>> = matrix.bits.rows().to_vec();
        assert_eq!(rows, vec![vec![true, false, true], vec![true, true, true]]);
        // every cell has evidence and a checkpoint
        assert!(matrix.evidence.iter().flatten().all(|r| !r.is_empty()));
        assert_eq!(sink.cells[&1].len(), 6);
    }

    #[test]
    fn unparsable_row_scores_zero() {
        let training = training(&["M0", "M1"]);
        let population = Population {
            iteration: 1,
            prompts: vec![Prompt {
                id: "p1.0".into(),
                text: "prose".into(),
                iteration_born: 1,
                parent_id: Some("p0.0".into()),
            }],
        };
        let llm = client(vec![ScriptFixture::rule(
            Matcher::Substring("task".into()),
            vec!["INVALID words only", "INVALID words only"],
        )]);
        let mut sink = MemorySink::default();
        let matrix =
            evaluate_population(&population, &training, &llm, &StubSandbox, &mut sink, 1).unwrap();
        assert_eq!(matrix.bits.rows(), &[vec![false, false]]);
        let refs = &matrix.evidence[0];
        let rec = &sink.evidence[&refs[0]];
        assert_eq!(rec.result.status, ExecStatus::SyntaxError);
    }

    #[test]
    fn twenty_task_training_set_gives_width_twenty() {
        let markers: Vec<String> = (0..20).map(|i| format!("W{i}")).collect();
        let refs: Vec<&str> = markers.iter().map(String::as_str).collect();
        let training = training(&refs);
        let population = Population {
            iteration: 1,
            prompts: vec![Prompt {
                id: "p1.0".into(),
                text: "solver".into(),
                iteration_born: 1,
                parent_id: Some("p0.0".into()),
            }],
        };
        let llm = client(vec![ScriptFixture::rule(
            Matcher::Substring("task".into()),
            vec!["everything W0 W1 W2"; 20],
        )]);
        let mut sink = MemorySink::default();
        let matrix =
            evaluate_population(&population, &training, &llm, &StubSandbox, &mut sink, 4).unwrap();
        assert_eq!(matrix.bits.task_count(), 20);
        assert_eq!(matrix.bits.rows()[0].iter().filter(|&&b| b).count(), 3);
    }

    #[test]
    fn provider_error_aborts_with_checkpointed_cells() {
        let training = training(&["M0", "M1", "M2"]);
        let population = Population {
            iteration: 1,
            prompts: vec![Prompt {
                id: "p1.0".into(),
                text: "x".into(),
                iteration_born: 1,
                parent_id: Some("p0.0".into()),
            }],
        };
        // only two responses for three tasks: third cell aborts
        let llm = client(vec![ScriptFixture::rule(
            Matcher::Substring("task".into()),
            vec!["M0", "nope"],
        )]);
        let mut sink = MemorySink::default();
        let err = evaluate_population(&population, &training, &llm, &StubSandbox, &mut sink, 8)
            .unwrap_err();
        assert!(matches!(err, OptimizerError::IterationAborted { k: 1, .. }));
        let cells = &sink.cells[&1];
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].m, 1);
        assert_eq!(cells[1].m, 0);
    }

    #[test]
    fn resumed_evaluation_skips_checkpointed_cells() {
        let training = training(&["M0", "M1"]);
        let population = Population {
            iteration: 1,
            prompts: vec![Prompt {
                id: "p1.0".into(),
                text: "x".into(),
                iteration_born: 1,
                parent_id: Some("p0.0".into()),
            }],
        };
        let mut sink = MemorySink::default();
        {
            let llm = client(vec![ScriptFixture::rule(
                Matcher::Substring("task".into()),
                vec!["M0"],
            )]);
            let _ = evaluate_population(&population, &training, &llm, &StubSandbox, &mut sink, 1)
                .unwrap_err();
        }
        // resume: fixture only holds the remaining cell's response
        let llm = client(vec![ScriptFixture::rule(
            Matcher::Substring("task".into()),
            vec!["M1"],
        )]);
        let matrix =
            evaluate_population(&population, &training, &llm, &StubSandbox, &mut sink, 1).unwrap();
        assert_eq!(matrix.bits.rows(), &[vec![true, true]]);
    }

    fn iteration_rules(seed_text: &str, variants: [&str; 9]) -> Vec<ScriptRule> {
        // 3 iterations x 3 children; the dominating child seeds the next
        vec![
            ScriptFixture::rule(Matcher::Exact(seed_text.into()), variants[..3].to_vec()),
            ScriptFixture::rule(Matcher::Exact(variants[1].into()), variants[3..6].to_vec()),
            ScriptFixture::rule(Matcher::Exact(variants[4].into()), variants[6..9].to_vec()),
        ]
    }

    #[test]
    fn full_loop_early_stops_when_one_variant_dominates() {
        let training = training(&["M0", "M1", "M2"]);
        let initial = Prompt::initial("solve the task");
        // per-iteration mutations: middle child always dominates
        let mutation_rules = iteration_rules(
            "solve the task",
            [
                "weak a1", "strong b1", "weak c1", "weak a2", "strong b2", "weak c2", "weak a3",
                "strong b3", "weak c3",
            ],
        );
        // evaluation queues per task: baseline + 3 iterations x 3 prompts;
        // the "strong" child (index 1) solves everything, others only M0
        let eval_rule = |marker: &str| {
            ScriptFixture::rule(
                Matcher::Substring(format!("task {marker}")),
                vec![
                    if marker == "M0" { marker } else { "no" }, // baseline
                    if marker == "M0" { marker } else { "no" },
                    marker,
                    if marker == "M0" { marker } else { "no" },
                    if marker == "M0" { marker } else { "no" },
                    marker,
                    if marker == "M0" { marker } else { "no" },
                    if marker == "M0" { marker } else { "no" },
                    marker,
                    if marker == "M0" { marker } else { "no" },
                ],
            )
        };
        let mut rules = mutation_rules;
        rules.extend([eval_rule("M0"), eval_rule("M1"), eval_rule("M2")]);
        let llm = client(rules);

        let params = OptimizeParams {
            n: 3,
            k_max: 10,
            window: 3,
            seed: 5,
            workers: 2,
        };
        let mut sink = MemorySink::default();
        let outcome = optimize(
            &initial,
            &training,
            &params,
            &llm,
            &StubSandbox,
            &mut sink,
            LoopState::fresh(&initial),
        )
        .unwrap();

        assert_eq!(outcome.decision, Decision::EarlyStop);
        assert_eq!(outcome.stopped_at, 3);
        assert_eq!(outcome.final_prompt.text, "strong b3");
        assert_eq!(sink.final_prompt.as_deref(), Some("strong b3"));

        // every iteration's selected set is the singleton strong child
        for record in &outcome.records {
            assert_eq!(record.selected_ids.len(), 1);
            assert_eq!(record.selected_ids[0], format!("p{}.1", record.k));
        }
        // lineage: children of iteration k descend from k-1's selection
        for record in &outcome.records[1..] {
            let prior = format!("p{}.1", record.k - 1);
            for prompt in &record.population.prompts {
                assert_eq!(prompt.parent_id.as_deref(), Some(prior.as_str()));
            }
        }
        // top score repeats exactly: w = [3/3, 3/1, 3/1] -> top = 1 + 3 + 3
        let expected_top = Score::new(7.into(), 1.into());
        for record in &outcome.records {
            assert_eq!(record.top_score, expected_top);
        }
        // log structure: baseline, 3 iterations, final
        assert_eq!(sink.log.len(), 5);
        assert!(matches!(sink.log[0], LogRecord::Baseline(ref b) if b.solved == 1));
        assert!(matches!(sink.log[4], LogRecord::Final(ref f) if f.note.is_some()));
    }

    #[test]
    fn k_max_one_stops_after_single_iteration() {
        let training = training(&["M0"]);
        let initial = Prompt::initial("seed");
        let llm = client(vec![
            ScriptFixture::rule(Matcher::Exact("seed".into()), vec!["v1", "v2"]),
            ScriptFixture::rule(Matcher::Substring("task".into()), vec!["no", "M0", "no"]),
        ]);
        let params = OptimizeParams {
            n: 2,
            k_max: 1,
            window: 3,
            seed: 9,
            workers: 1,
        };
        let mut sink = MemorySink::default();
        let outcome = optimize(
            &initial,
            &training,
            &params,
            &llm,
            &StubSandbox,
            &mut sink,
            LoopState::fresh(&initial),
        )
        .unwrap();
        assert_eq!(outcome.decision, Decision::MaxIterations);
        assert_eq!(outcome.stopped_at, 1);
        assert_eq!(outcome.records.len(), 1);
        // eval queue: baseline "no", then v1 "M0", v2 "no": argmax is p1.0
        assert_eq!(outcome.final_prompt.id, "p1.0");
    }

    #[test]
    fn loop_state_round_trips_through_log_records() {
        let training = training(&["M0"]);
        let initial = Prompt::initial("seed");
        let llm = client(vec![
            ScriptFixture::rule(Matcher::Exact("seed".into()), vec!["v1"]),
            ScriptFixture::rule(Matcher::Substring("task".into()), vec!["M0", "M0"]),
        ]);
        let params = OptimizeParams {
            n: 1,
            k_max: 1,
            window: 3,
            seed: 2,
            workers: 1,
        };
        let mut sink = MemorySink::default();
        optimize(
            &initial,
            &training,
            &params,
            &llm,
            &StubSandbox,
            &mut sink,
            LoopState::fresh(&initial),
        )
        .unwrap();
        // a completed run refuses to resume
        assert!(matches!(
            LoopState::from_records(&initial, &sink.log),
            Err(OptimizerError::AlreadyComplete)
        ));
        // dropping the final record reconstructs the post-iteration state
        let partial = &sink.log[..sink.log.len() - 1];
        let state = LoopState::from_records(&initial, partial).unwrap();
        assert_eq!(state.next_k, 2);
        assert!(state.baseline_done);
        assert_eq!(state.history.len(), 1);
        assert_eq!(state.selected[0].id, "p1.0");
    }

    #[test]
    fn evidence_paths_are_sanitized_and_distinct() {
        let a = evidence_rel_path("1", 0, "he/0");
        let b = evidence_rel_path("1", 0, "he_0");
        assert_ne!(a, b);
        assert!(a.starts_with("executions/1/0_he-0-"));
        assert_eq!(b, "executions/1/0_he_0.record");
    }
}
