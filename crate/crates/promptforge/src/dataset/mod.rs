//! Task corpora and training-set assembly.
//!
//! A task couples a description (natural language, or a source program for
//! translation work) with an executable test suite. Training sets mix
//! tasks sampled from an existing corpus with tasks an LLM mutated from
//! other reference tasks; mutated tasks are only admitted after their
//! bundled reference solution survives two validation phases: it must run
//! cleanly on its own, and it must pass the candidate's own suite.
//!
//! Corpus files hold one JSON record per line with fields `id`,
//! `description`, and either `test_code` + `entry_point` (generation
//! corpora) or `io_pairs` (translation corpora).

mod mutate;

pub use mutate::{
    mutation_request, parse_candidate_response, serialize_reference, DATA_MUTATION_INSTRUCTION,
};

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{LlmClient, LlmError};
use crate::sandbox::{CodeSnippet, ExecStatus, Sandbox, SnippetOrigin};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: cannot read corpus: {source}")]
    UnreadableFile {
        path: String,
        source: std::io::Error,
    },
    #[error("record {record}: missing field `{field}`")]
    MissingField { record: usize, field: &'static str },
    #[error("record {record}: {message}")]
    BadRecord { record: usize, message: String },
    #[error("duplicate task id `{0}`")]
    DuplicateId(String),
    #[error("source holds {available} tasks, {requested} requested")]
    InsufficientSource { available: usize, requested: usize },
    #[error("mutation response unparsable: {0}")]
    UnparsableResponse(String),
    #[error("mutation budget exhausted: {accepted} accepted of {needed} after {budget} attempts")]
    MutationBudgetExhausted {
        accepted: usize,
        needed: usize,
        budget: usize,
    },
    #[error("task id `{0}` collides with the evaluation corpus")]
    EvalOverlap(String),
    #[error(transparent)]
    Provider(#[from] LlmError),
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    EmbeddedTests,
    IoPairs,
}

/// Executable acceptance criteria for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub kind: SuiteKind,
    pub embedded: Option<String>,
    pub io_pairs: Option<Vec<(String, String)>>,
}

impl TestSuite {
    pub fn embedded(test_code: impl Into<String>) -> Self {
        Self {
            kind: SuiteKind::EmbeddedTests,
            embedded: Some(test_code.into()),
            io_pairs: None,
        }
    }

    pub fn io(pairs: Vec<(String, String)>) -> Self {
        Self {
            kind: SuiteKind::IoPairs,
            embedded: None,
            io_pairs: Some(pairs),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            SuiteKind::EmbeddedTests => {
                if self.io_pairs.is_some() {
                    return Err("embedded suite carries io_pairs".into());
                }
                match &self.embedded {
                    Some(code) if !code.trim().is_empty() => Ok(()),
                    _ => Err("embedded suite has no test code".into()),
                }
            }
            SuiteKind::IoPairs => {
                if self.embedded.is_some() {
                    return Err("io suite carries embedded test code".into());
                }
                match &self.io_pairs {
                    Some(pairs) if !pairs.is_empty() => Ok(()),
                    _ => Err("io suite has no pairs".into()),
                }
            }
        }
    }

    /// Number of individually countable tests.
    pub fn test_count(&self) -> usize {
        match self.kind {
            SuiteKind::EmbeddedTests => self
                .embedded
                .as_deref()
                .map(|code| crate::sandbox::declared_assertion_count(code) as usize)
                .unwrap_or(0)
                .max(1),
            SuiteKind::IoPairs => self.io_pairs.as_ref().map(Vec::len).unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrigin {
    Existing,
    Mutated,
}

/// One optimization/evaluation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub description: String,
    pub suite: TestSuite,
    pub entry_point: Option<String>,
    pub origin: TaskOrigin,
    pub source_corpus: String,
}

impl Task {
    pub fn validate(&self) -> Result<(), String> {
        self.suite.validate()?;
        match self.suite.kind {
            SuiteKind::EmbeddedTests if self.entry_point.is_none() => {
                Err(format!("task {}: embedded suite without entry_point", self.id))
            }
            SuiteKind::IoPairs if self.entry_point.is_some() => {
                Err(format!("task {}: io suite with entry_point", self.id))
            }
            _ => Ok(()),
        }
    }
}

/// An ordered, id-unique collection of tasks.
#[derive(Debug, Clone, Default)]
pub struct TaskSet {
    pub label: String,
    tasks: Vec<Task>,
}

impl TaskSet {
    pub fn new(label: impl Into<String>, tasks: Vec<Task>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for task in &tasks {
            if !seen.insert(task.id.clone()) {
                return Err(DatasetError::DuplicateId(task.id.clone()));
            }
        }
        Ok(Self {
            label: label.into(),
            tasks,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn ids(&self) -> HashSet<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }
}

/// Pre-validation form of an LLM-mutated task. The reference solution is
/// used only to vet the candidate and is dropped from the accepted task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTask {
    pub description: String,
    pub suite: TestSuite,
    pub reference_solution: String,
    /// Id of the reference task this was mutated from.
    pub provenance: String,
    /// Derived from the solution for embedded suites (first `def`).
    pub entry_point: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    SyntaxFailure,
    RuntimeFailure,
    TestFailure,
    Timeout,
}

#[derive(Debug, Clone)]
pub enum ValidationOutcome {
    Accepted(Task),
    Rejected(RejectionReason),
}

/// The assembled training set: `k` sampled existing tasks plus `k`
/// validated mutated tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub tasks: Vec<Task>,
    pub count_existing: usize,
    pub count_mutated: usize,
}

impl TrainingSet {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.count_existing + self.count_mutated != self.tasks.len() {
            return Err(DatasetError::InvalidTask(format!(
                "counts ({}, {}) do not sum to {} tasks",
                self.count_existing,
                self.count_mutated,
                self.tasks.len()
            )));
        }
        let existing = self
            .tasks
            .iter()
            .filter(|t| t.origin == TaskOrigin::Existing)
            .count();
        if existing != self.count_existing {
            return Err(DatasetError::InvalidTask(format!(
                "{existing} tasks tagged existing, counts say {}",
                self.count_existing
            )));
        }
        let mut seen = HashSet::new();
        for task in &self.tasks {
            if !seen.insert(&task.id) {
                return Err(DatasetError::DuplicateId(task.id.clone()));
            }
            task.validate().map_err(DatasetError::InvalidTask)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for task in &self.tasks {
            out.push_str(&serde_json::to_string(&RawRecord::from_task(task)).expect("serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(raw: &str) -> Result<Self, DatasetError> {
        let mut tasks = Vec::new();
        for (idx, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: RawRecord = serde_json::from_str(line).map_err(|e| {
                DatasetError::BadRecord {
                    record: idx + 1,
                    message: e.to_string(),
                }
            })?;
            tasks.push(record.into_task(idx + 1, None)?);
        }
        let count_existing = tasks
            .iter()
            .filter(|t| t.origin == TaskOrigin::Existing)
            .count();
        let count_mutated = tasks.len() - count_existing;
        let set = Self {
            tasks,
            count_existing,
            count_mutated,
        };
        set.validate()?;
        Ok(set)
    }
}

/// What a corpus file is expected to contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// Embedded-test records (`test_code` + `entry_point`).
    GenerationCorpus,
    /// Stdin/stdout records (`io_pairs`).
    TranslationCorpus,
}

/// On-disk record shape shared by corpora and training-set files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawRecord {
    id: Option<String>,
    description: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    test_code: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    entry_point: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    io_pairs: Option<Vec<(String, String)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    origin: Option<TaskOrigin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_corpus: Option<String>,
}

impl RawRecord {
    fn from_task(task: &Task) -> Self {
        Self {
            id: Some(task.id.clone()),
            description: Some(task.description.clone()),
            test_code: task.suite.embedded.clone(),
            entry_point: task.entry_point.clone(),
            io_pairs: task.suite.io_pairs.clone(),
            origin: Some(task.origin),
            source_corpus: Some(task.source_corpus.clone()),
        }
    }

    /// Build a task, taking the suite kind from the populated fields. When
    /// `expect` is given, the record must match that corpus format.
    fn into_task(self, record: usize, expect: Option<CorpusFormat>) -> Result<Task, DatasetError> {
        let id = self
            .id
            .filter(|v| !v.is_empty())
            .ok_or(DatasetError::MissingField { record, field: "id" })?;
        let description = self.description.ok_or(DatasetError::MissingField {
            record,
            field: "description",
        })?;
        let suite = match expect {
            Some(CorpusFormat::GenerationCorpus) => {
                let test_code = self.test_code.ok_or(DatasetError::MissingField {
                    record,
                    field: "test_code",
                })?;
                if self.entry_point.is_none() {
                    return Err(DatasetError::MissingField {
                        record,
                        field: "entry_point",
                    });
                }
                TestSuite::embedded(test_code)
            }
            Some(CorpusFormat::TranslationCorpus) => {
                let pairs = self.io_pairs.ok_or(DatasetError::MissingField {
                    record,
                    field: "io_pairs",
                })?;
                TestSuite::io(pairs)
            }
            None => match (&self.test_code, &self.io_pairs) {
                (Some(code), None) => TestSuite::embedded(code.clone()),
                (None, Some(pairs)) => TestSuite::io(pairs.clone()),
                (None, None) => {
                    return Err(DatasetError::MissingField {
                        record,
                        field: "test_code",
                    })
                }
                (Some(_), Some(_)) => {
                    return Err(DatasetError::BadRecord {
                        record,
                        message: "record carries both test_code and io_pairs".into(),
                    })
                }
            },
        };
        let entry_point = match suite.kind {
            SuiteKind::EmbeddedTests => {
                let ep = self.entry_point.ok_or(DatasetError::MissingField {
                    record,
                    field: "entry_point",
                })?;
                Some(ep)
            }
            SuiteKind::IoPairs => None,
        };
        let task = Task {
            id,
            description,
            suite,
            entry_point,
            origin: self.origin.unwrap_or(TaskOrigin::Existing),
            source_corpus: self.source_corpus.unwrap_or_default(),
        };
        suite_checked(task, record)
    }
}

fn suite_checked(task: Task, record: usize) -> Result<Task, DatasetError> {
    task.validate().map_err(|message| DatasetError::BadRecord {
        record,
        message,
    })?;
    Ok(task)
}

/// Load a corpus file: one JSON record per line, order preserved, ids
/// unique, every task tagged `origin = existing`.
pub fn load_tasks(path: impl AsRef<Path>, format: CorpusFormat) -> Result<TaskSet, DatasetError> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|source| DatasetError::UnreadableFile {
        path: path.display().to_string(),
        source,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut tasks = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(line).map_err(|e| DatasetError::BadRecord {
                record: idx + 1,
                message: e.to_string(),
            })?;
        let mut task = record.into_task(idx + 1, Some(format))?;
        task.origin = TaskOrigin::Existing;
        if task.source_corpus.is_empty() {
            task.source_corpus = label.clone();
        }
        tasks.push(task);
    }
    TaskSet::new(label, tasks)
}

/// Draw `count` distinct tasks uniformly without replacement.
pub fn sample_existing(
    source: &TaskSet,
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Result<TaskSet, DatasetError> {
    if source.len() < count {
        return Err(DatasetError::InsufficientSource {
            available: source.len(),
            requested: count,
        });
    }
    let picked = rand::seq::index::sample(rng, source.len(), count);
    let tasks = picked.iter().map(|i| source.tasks[i].clone()).collect();
    TaskSet::new(source.label.clone(), tasks)
}

/// Prompt/response pair retained in the mutation transcript sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MutationExchange {
    pub reference_id: String,
    pub request_messages: Vec<(String, String)>,
    pub raw_response: String,
}

/// One round trip to the model plus the parse verdict; provider errors are
/// the only failures, so the transcript always keeps the raw exchange.
pub struct MutationAttempt {
    pub exchange: MutationExchange,
    pub parsed: Result<CandidateTask, String>,
}

pub fn attempt_mutation(reference: &Task, llm: &LlmClient) -> Result<MutationAttempt, LlmError> {
    let request = mutation_request(reference, &llm.model_name());
    let completion = llm.complete(&request)?;
    let exchange = MutationExchange {
        reference_id: reference.id.clone(),
        request_messages: request
            .messages
            .iter()
            .map(|m| (format!("{:?}", m.role).to_lowercase(), m.content.clone()))
            .collect(),
        raw_response: completion.text.clone(),
    };
    let parsed = parse_candidate_response(&completion.text, reference);
    Ok(MutationAttempt { exchange, parsed })
}

/// Ask the model to mutate one reference task into a similar new one.
pub fn mutate_task(reference: &Task, llm: &LlmClient) -> Result<CandidateTask, DatasetError> {
    let attempt = attempt_mutation(reference, llm)?;
    attempt.parsed.map_err(DatasetError::UnparsableResponse)
}

/// Two-phase validation of a mutated candidate.
///
/// Phase 1 vets the bundled reference solution on its own: it must be
/// syntactically valid and execute without error (I/O-pair candidates are
/// fed their first pair's stdin). Phase 2 runs the solution against the
/// candidate's own suite. Rejection is a normal outcome, not an error; an
/// accepted task drops the reference solution.
pub fn validate_candidate(
    candidate: &CandidateTask,
    task_id: impl Into<String>,
    source_corpus: impl Into<String>,
    sandbox: &dyn Sandbox,
) -> ValidationOutcome {
    if !sandbox.check_syntax(&candidate.reference_solution) {
        return ValidationOutcome::Rejected(RejectionReason::SyntaxFailure);
    }
    let snippet = CodeSnippet {
        text: candidate.reference_solution.clone(),
        origin: SnippetOrigin::WholeResponse,
        syntax_valid: true,
    };
    let stdin = candidate
        .suite
        .io_pairs
        .as_ref()
        .and_then(|pairs| pairs.first())
        .map(|(input, _)| input.as_str());
    let bare = sandbox.run_program(&snippet, stdin);
    match bare.status {
        ExecStatus::Pass => {}
        ExecStatus::Timeout => return ValidationOutcome::Rejected(RejectionReason::Timeout),
        ExecStatus::SandboxError => {
            log::error!("sandbox fault during candidate validation: {}", bare.stderr);
            return ValidationOutcome::Rejected(RejectionReason::RuntimeFailure);
        }
        _ => return ValidationOutcome::Rejected(RejectionReason::RuntimeFailure),
    }
    let suite_run = sandbox.run_suite(&snippet, &candidate.suite, candidate.entry_point.as_deref());
    match suite_run.status {
        ExecStatus::Pass => ValidationOutcome::Accepted(Task {
            id: task_id.into(),
            description: candidate.description.clone(),
            suite: candidate.suite.clone(),
            entry_point: candidate.entry_point.clone(),
            origin: TaskOrigin::Mutated,
            source_corpus: source_corpus.into(),
        }),
        ExecStatus::Timeout => ValidationOutcome::Rejected(RejectionReason::Timeout),
        _ => ValidationOutcome::Rejected(RejectionReason::TestFailure),
    }
}

/// Transcript entry for one mutation attempt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MutationTranscript {
    pub attempt: usize,
    pub reference_id: String,
    pub request_messages: Vec<(String, String)>,
    pub raw_response: String,
    /// Parsed candidate when the response had all required sections.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<CandidateTask>,
    pub verdict: TranscriptVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum TranscriptVerdict {
    Accepted(String),
    Rejected(RejectionReason),
    Unparsable(String),
}

/// Assemble the training set: `k_per_source` sampled existing tasks plus
/// `k_per_source` validated mutated tasks.
///
/// Mutation references are drawn (shuffled, without replacement until the
/// pool wraps) from `mutation_source` minus any id sampled into the
/// existing half. Each rejected or unparsable candidate consumes one
/// attempt from `retry_budget` and moves on to a fresh reference.
#[allow(clippy::too_many_arguments)]
pub fn build_training_set(
    existing_source: &TaskSet,
    mutation_source: &TaskSet,
    k_per_source: usize,
    retry_budget: usize,
    eval_ids: &HashSet<String>,
    rng: &mut ChaCha12Rng,
    llm: &LlmClient,
    sandbox: &dyn Sandbox,
) -> Result<(TrainingSet, Vec<MutationTranscript>), DatasetError> {
    let existing = sample_existing(existing_source, k_per_source, rng)?;
    let excluded = existing.ids();

    let pool: Vec<&Task> = mutation_source
        .tasks()
        .iter()
        .filter(|t| !excluded.contains(&t.id))
        .collect();
    if k_per_source > 0 && pool.is_empty() {
        return Err(DatasetError::InsufficientSource {
            available: 0,
            requested: k_per_source,
        });
    }

    let mut queue: Vec<&Task> = Vec::new();
    let mut accepted: Vec<Task> = Vec::new();
    let mut transcripts: Vec<MutationTranscript> = Vec::new();
    let mut attempts = 0usize;

    while accepted.len() < k_per_source {
        if attempts >= retry_budget {
            return Err(DatasetError::MutationBudgetExhausted {
                accepted: accepted.len(),
                needed: k_per_source,
                budget: retry_budget,
            });
        }
        if queue.is_empty() {
            queue = pool.clone();
            queue.shuffle(rng);
        }
        let reference = queue.pop().expect("pool is non-empty");
        attempts += 1;

        let MutationAttempt { exchange, parsed } = attempt_mutation(reference, llm)?;
        let candidate = match parsed {
            Ok(candidate) => candidate,
            Err(detail) => {
                transcripts.push(MutationTranscript {
                    attempt: attempts,
                    reference_id: exchange.reference_id,
                    request_messages: exchange.request_messages,
                    raw_response: exchange.raw_response,
                    candidate: None,
                    verdict: TranscriptVerdict::Unparsable(detail),
                });
                continue;
            }
        };

        let task_id = format!("gen:{}:{}", reference.id, attempts);
        match validate_candidate(&candidate, &task_id, &reference.source_corpus, sandbox) {
            ValidationOutcome::Accepted(task) => {
                transcripts.push(MutationTranscript {
                    attempt: attempts,
                    reference_id: exchange.reference_id,
                    request_messages: exchange.request_messages,
                    raw_response: exchange.raw_response,
                    candidate: Some(candidate),
                    verdict: TranscriptVerdict::Accepted(task.id.clone()),
                });
                accepted.push(task);
            }
            ValidationOutcome::Rejected(reason) => {
                transcripts.push(MutationTranscript {
                    attempt: attempts,
                    reference_id: exchange.reference_id,
                    request_messages: exchange.request_messages,
                    raw_response: exchange.raw_response,
                    candidate: Some(candidate),
                    verdict: TranscriptVerdict::Rejected(reason),
                });
            }
        }
    }

    let mut tasks = existing.tasks().to_vec();
    tasks.extend(accepted);
    for task in &tasks {
        if eval_ids.contains(&task.id) {
            return Err(DatasetError::EvalOverlap(task.id.clone()));
        }
    }
    let set = TrainingSet {
        tasks,
        count_existing: k_per_source,
        count_mutated: k_per_source,
    };
    set.validate()?;
    Ok((set, transcripts))
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::llm::{LlmClient, Matcher, ScriptFixture, ScriptedProvider};
    use crate::sandbox::{ProcessSandbox, SandboxPolicy};
    use rand::SeedableRng;
    use std::io::Write;
    use std::sync::Arc;

    fn write_corpus(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    fn sandbox() -> ProcessSandbox {
        ProcessSandbox::new(SandboxPolicy::default()).unwrap()
    }

    #[test]
    fn loads_minimal_generation_record() {
        let file = write_corpus(&[
            r#"{"id": "he/0", "description": "return the sum of two integers", "test_code": "assert f(1,2)==3", "entry_point": "f"}"#,
        ]);
        let set = load_tasks(file.path(), CorpusFormat::GenerationCorpus).unwrap();
        assert_eq!(set.len(), 1);
        let task = &set.tasks()[0];
        assert_eq!(task.id, "he/0");
        assert_eq!(task.suite.kind, SuiteKind::EmbeddedTests);
        assert_eq!(task.origin, TaskOrigin::Existing);
    }

    #[test]
    fn loads_minimal_translation_record() {
        let file = write_corpus(&[
            r#"{"id": "av/1", "description": "print the sum", "io_pairs": [["3 4", "7"]]}"#,
        ]);
        let set = load_tasks(file.path(), CorpusFormat::TranslationCorpus).unwrap();
        let task = &set.tasks()[0];
        assert_eq!(task.suite.kind, SuiteKind::IoPairs);
        assert!(task.entry_point.is_none());
    }

    #[test]
    fn missing_test_field_is_reported() {
        let file = write_corpus(&[r#"{"id": "x", "description": "no tests"}"#]);
        let err = load_tasks(file.path(), CorpusFormat::GenerationCorpus).unwrap_err();
        assert!(
            matches!(err, DatasetError::MissingField { record: 1, field: "test_code" }),
            "got {err:?}"
        );
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let file = write_corpus(&[
            r#"{"id": "a", "description": "d", "test_code": "assert True", "entry_point": "f"}"#,
            r#"{"id": "a", "description": "d2", "test_code": "assert True", "entry_point": "f"}"#,
        ]);
        assert!(matches!(
            load_tasks(file.path(), CorpusFormat::GenerationCorpus),
            Err(DatasetError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn unreadable_file_is_reported() {
        assert!(matches!(
            load_tasks("/no/such/corpus.jsonl", CorpusFormat::GenerationCorpus),
            Err(DatasetError::UnreadableFile { .. })
        ));
    }

    #[test]
    fn preserves_record_order() {
        let file = write_corpus(&[
            r#"{"id": "b", "description": "d", "test_code": "assert True", "entry_point": "f"}"#,
            r#"{"id": "a", "description": "d", "test_code": "assert True", "entry_point": "f"}"#,
        ]);
        let set = load_tasks(file.path(), CorpusFormat::GenerationCorpus).unwrap();
        let ids: Vec<&str> = set.tasks().iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a"]);
    }

    fn fifty_task_set() -> TaskSet {
        let tasks = (0..50)
            .map(|i| embedded_task(&format!("t/{i}"), "d", "assert True", "f"))
            .collect();
        TaskSet::new("fixture", tasks).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_and_distinct() {
        let source = fifty_task_set();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let first = sample_existing(&source, 10, &mut rng).unwrap();
        assert_eq!(first.len(), 10);
        assert_eq!(first.ids().len(), 10);

        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let second = sample_existing(&source, 10, &mut rng).unwrap();
        let ids = |set: &TaskSet| {
            set.tasks()
                .iter()
                .map(|t| t.id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&first), ids(&second));
    }

    #[test]
    fn sampling_zero_gives_empty_set() {
        let source = fifty_task_set();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(sample_existing(&source, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn sampling_more_than_available_fails() {
        let source = fifty_task_set();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(matches!(
            sample_existing(&source, 51, &mut rng),
            Err(DatasetError::InsufficientSource {
                available: 50,
                requested: 51
            })
        ));
    }

    fn scripted_client(rules: Vec<crate::llm::ScriptRule>) -> LlmClient {
        LlmClient::direct(Arc::new(ScriptedProvider::new(ScriptFixture { rules })))
    }

    fn good_mutation_response() -> &'static str {
        "DESCRIPTION\n```\nreturn the product of two integers\n```\nSOLUTION\n```\ndef f(a, b):\n    return a * b\n```\nTESTS\n```\nassert f(2, 3) == 6\nassert f(1, 5) == 5\n```"
    }

    #[test]
    fn mutation_produces_differing_description() {
        let reference = embedded_task("r/0", "return the sum of digits", "assert f(12)==3", "f");
        let llm = scripted_client(vec![ScriptFixture::rule(
            Matcher::Substring("DESCRIPTION".into()),
            vec![good_mutation_response()],
        )]);
        let candidate = mutate_task(&reference, &llm).unwrap();
        assert_ne!(candidate.description, reference.description);
        assert_eq!(candidate.provenance, "r/0");
        assert_eq!(candidate.entry_point.as_deref(), Some("f"));
    }

    #[test]
    fn mutation_without_solution_section_is_unparsable() {
        let reference = embedded_task("r/0", "sum digits", "assert f(12)==3", "f");
        let llm = scripted_client(vec![ScriptFixture::rule(
            Matcher::Substring("DESCRIPTION".into()),
            vec!["DESCRIPTION\n```\nsomething\n```\nTESTS\n```\nassert True\n```"],
        )]);
        assert!(matches!(
            mutate_task(&reference, &llm),
            Err(DatasetError::UnparsableResponse(_))
        ));
    }

    #[test]
    fn identical_fixture_gives_identical_candidate() {
        let reference = embedded_task("r/0", "sum digits", "assert f(12)==3", "f");
        let make = || {
            let llm = scripted_client(vec![ScriptFixture::rule(
                Matcher::Substring("DESCRIPTION".into()),
                vec![good_mutation_response()],
            )]);
            mutate_task(&reference, &llm).unwrap()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn known_correct_candidate_is_accepted() {
        let candidate = CandidateTask {
            description: "add two numbers".into(),
            suite: TestSuite::embedded("assert f(1, 2) == 3"),
            reference_solution: "def f(a, b):\n    return a + b".into(),
            provenance: "r/0".into(),
            entry_point: Some("f".into()),
        };
        match validate_candidate(&candidate, "gen:r/0:1", "fixture", &sandbox()) {
            ValidationOutcome::Accepted(task) => {
                assert_eq!(task.origin, TaskOrigin::Mutated);
                assert_eq!(task.id, "gen:r/0:1");
                assert_eq!(task.entry_point.as_deref(), Some("f"));
            }
            other => panic!("expected acceptance, got {other:?}"),
        }
    }

    #[test]
    fn wrong_expected_value_is_test_failure() {
        let candidate = CandidateTask {
            description: "add two numbers".into(),
            suite: TestSuite::embedded("assert f(1, 2) == 4"),
            reference_solution: "def f(a, b):\n    return a + b".into(),
            provenance: "r/0".into(),
            entry_point: Some("f".into()),
        };
        assert!(matches!(
            validate_candidate(&candidate, "x", "fixture", &sandbox()),
            ValidationOutcome::Rejected(RejectionReason::TestFailure)
        ));
    }

    #[test]
    fn broken_syntax_is_syntax_failure() {
        let candidate = CandidateTask {
            description: "d".into(),
            suite: TestSuite::embedded("assert True"),
            reference_solution: "def f(:\n    nope".into(),
            provenance: "r/0".into(),
            entry_point: Some("f".into()),
        };
        assert!(matches!(
            validate_candidate(&candidate, "x", "fixture", &sandbox()),
            ValidationOutcome::Rejected(RejectionReason::SyntaxFailure)
        ));
    }

    #[test]
    fn crashing_solution_is_runtime_failure() {
        let candidate = CandidateTask {
            description: "d".into(),
            suite: TestSuite::embedded("assert True"),
            reference_solution: "raise ValueError('bad')".into(),
            provenance: "r/0".into(),
            entry_point: Some("f".into()),
        };
        assert!(matches!(
            validate_candidate(&candidate, "x", "fixture", &sandbox()),
            ValidationOutcome::Rejected(RejectionReason::RuntimeFailure)
        ));
    }

    #[test]
    fn infinite_loop_solution_times_out_near_bound() {
        let policy = SandboxPolicy {
            timeout_secs: 2.0,
            ..SandboxPolicy::default()
        };
        let sandbox = ProcessSandbox::new(policy).unwrap();
        let candidate = CandidateTask {
            description: "d".into(),
            suite: TestSuite::embedded("assert True"),
            reference_solution: "while True:\n    pass".into(),
            provenance: "r/0".into(),
            entry_point: Some("f".into()),
        };
        let started = std::time::Instant::now();
        let outcome = validate_candidate(&candidate, "x", "fixture", &sandbox);
        let elapsed = started.elapsed().as_secs_f64();
        assert!(matches!(
            outcome,
            ValidationOutcome::Rejected(RejectionReason::Timeout)
        ));
        // phase 1 burns the timeout; syntax check and spawn add slack
        assert!(elapsed >= 2.0 && elapsed < 2.0 + crate::sandbox::GRACE_SECS + 2.0);
    }

    #[test]
    fn io_candidate_validates_with_first_pair_stdin() {
        let candidate = CandidateTask {
            description: "print doubled input".into(),
            suite: TestSuite::io(vec![("21".into(), "42".into())]),
            reference_solution: "print(int(input()) * 2)".into(),
            provenance: "r/1".into(),
            entry_point: None,
        };
        assert!(matches!(
            validate_candidate(&candidate, "x", "fixture", &sandbox()),
            ValidationOutcome::Accepted(_)
        ));
    }

    fn mutation_rule(responses: Vec<&str>) -> crate::llm::ScriptRule {
        ScriptFixture::rule(Matcher::Substring("DESCRIPTION".into()), responses)
    }

    #[test]
    fn builds_paper_sized_training_set() {
        let existing = fifty_task_set();
        let mutation_tasks = (0..30)
            .map(|i| embedded_task(&format!("m/{i}"), "d", "assert True", "f"))
            .collect();
        let mutation = TaskSet::new("mut", mutation_tasks).unwrap();
        let llm = scripted_client(vec![mutation_rule(vec![good_mutation_response(); 10])]);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let (set, transcripts) = build_training_set(
            &existing,
            &mutation,
            10,
            30,
            &HashSet::new(),
            &mut rng,
            &llm,
            &sandbox(),
        )
        .unwrap();
        assert_eq!(set.tasks.len(), 20);
        assert_eq!((set.count_existing, set.count_mutated), (10, 10));
        assert_eq!(transcripts.len(), 10);
        set.validate().unwrap();
        // mutated tasks never reuse an id chosen for the existing half
        let existing_ids: HashSet<_> = set.tasks[..10].iter().map(|t| t.id.clone()).collect();
        for task in &set.tasks[10..] {
            assert_eq!(task.origin, TaskOrigin::Mutated);
            assert!(!existing_ids.contains(&task.id));
        }
    }

    #[test]
    fn zero_k_gives_empty_training_set() {
        let existing = fifty_task_set();
        let mutation = fifty_task_set();
        let llm = scripted_client(vec![]);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let (set, transcripts) = build_training_set(
            &existing,
            &mutation,
            0,
            0,
            &HashSet::new(),
            &mut rng,
            &llm,
            &sandbox(),
        )
        .unwrap();
        assert!(set.tasks.is_empty());
        assert!(transcripts.is_empty());
    }

    #[test]
    fn exhausts_budget_after_exactly_thirty_attempts() {
        let existing = fifty_task_set();
        let mutation_tasks = (0..30)
            .map(|i| embedded_task(&format!("m/{i}"), "d", "assert True", "f"))
            .collect();
        let mutation = TaskSet::new("mut", mutation_tasks).unwrap();
        // solution always crashes -> every attempt rejected in phase 1
        let bad = "DESCRIPTION\n```\nd\n```\nSOLUTION\n```\ndef f():\n    pass\nraise ValueError()\n```\nTESTS\n```\nassert True\n```";
        let llm = scripted_client(vec![mutation_rule(vec![bad; 30])]);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let err = build_training_set(
            &existing,
            &mutation,
            10,
            30,
            &HashSet::new(),
            &mut rng,
            &llm,
            &sandbox(),
        )
        .unwrap_err();
        match err {
            DatasetError::MutationBudgetExhausted {
                accepted,
                needed,
                budget,
            } => {
                assert_eq!((accepted, needed, budget), (0, 10, 30));
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
        // the provider served exactly `budget` responses
        // (the fixture rule held exactly 30 and none are left)
    }

    #[test]
    fn eval_overlap_is_rejected() {
        let existing = fifty_task_set();
        let mutation = fifty_task_set();
        let llm = scripted_client(vec![mutation_rule(vec![good_mutation_response(); 2])]);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let eval_ids: HashSet<String> = existing.ids();
        let err = build_training_set(
            &existing,
            &mutation,
            1,
            3,
            &eval_ids,
            &mut rng,
            &llm,
            &sandbox(),
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::EvalOverlap(_)));
    }

    #[test]
    fn training_set_round_trips_through_jsonl() {
        let set = TrainingSet {
            tasks: vec![
                embedded_task("a", "d", "assert True", "f"),
                Task {
                    origin: TaskOrigin::Mutated,
                    ..embedded_task("gen:a:1", "d2", "assert True", "g")
                },
                io_task("b", "print", vec![("1", "1")]),
            ],
            count_existing: 2,
            count_mutated: 1,
        };
        let round = TrainingSet::from_jsonl(&set.to_jsonl()).unwrap();
        assert_eq!(round, set);
    }

    #[test]
    fn build_is_byte_identical_for_fixed_seed() {
        let existing = fifty_task_set();
        let mutation_tasks = (0..30)
            .map(|i| embedded_task(&format!("m/{i}"), "d", "assert True", "f"))
            .collect();
        let mutation = TaskSet::new("mut", mutation_tasks).unwrap();
        let build = || {
            let llm = scripted_client(vec![mutation_rule(vec![good_mutation_response(); 3])]);
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            let (set, _) = build_training_set(
                &existing,
                &mutation,
                3,
                9,
                &HashSet::new(),
                &mut rng,
                &llm,
                &sandbox(),
            )
            .unwrap();
            set.to_jsonl()
        };
        assert_eq!(build(), build());
    }
}
