//! One prompt, one task, one bit.
//!
//! The pass@1 unit of work: issue a single temperature-0 generation with
//! the prompt as the system message and the task description as the user
//! message, extract code, run the task's suite. No resampling, ever.

use crate::dataset::Task;
use crate::llm::{ChatRequest, Completion, LlmClient, LlmError, Message, GENERATION_TEMPERATURE};

use super::{CodeSnippet, ExecStatus, ExecutionResult, Sandbox};

/// Everything produced while scoring one (prompt, task) cell.
#[derive(Debug, Clone)]
pub struct ScoredCell {
    /// 1 iff the extracted program passed the whole suite.
    pub m: bool,
    pub evidence: ExecutionResult,
    pub completion: Completion,
    pub snippet: CodeSnippet,
    pub request_digest: String,
}

/// The extraction/execution half of a cell without the completion.
#[derive(Debug, Clone)]
pub struct ExecutedResponse {
    pub m: bool,
    pub evidence: ExecutionResult,
    pub snippet: CodeSnippet,
}

/// The single generation request for one (prompt, task) pair: prompt text
/// as the system message, task description as the user message,
/// temperature 0.
pub fn generation_request(prompt_text: &str, task: &Task, model: &str) -> ChatRequest {
    ChatRequest::new(
        model,
        vec![
            Message::system(prompt_text),
            Message::user(&task.description),
        ],
        GENERATION_TEMPERATURE,
    )
}

/// Extract code from a response and run the task's suite on it. When no
/// candidate survives the syntax check the cell is recorded as a syntax
/// failure without spawning the suite.
pub fn execute_response(response_text: &str, task: &Task, sandbox: &dyn Sandbox) -> ExecutedResponse {
    let snippet = sandbox.extract_code(response_text);
    let evidence = if snippet.syntax_valid {
        sandbox.run_suite(&snippet, &task.suite, task.entry_point.as_deref())
    } else {
        ExecutionResult {
            status: ExecStatus::SyntaxError,
            stdout: String::new(),
            stderr: "no syntactically valid candidate in model response".into(),
            wall_time_secs: 0.0,
            tests_passed: 0,
            tests_total: task.suite.test_count().max(1) as u32,
        }
    };
    if evidence.status == ExecStatus::SandboxError {
        log::warn!(
            "sandbox fault while scoring task {}: {}",
            task.id,
            evidence.stderr
        );
    }
    ExecutedResponse {
        m: evidence.passed(),
        evidence,
        snippet,
    }
}

/// Score one prompt against one task: one temperature-0 generation, one
/// suite run, no resampling.
///
/// Provider errors propagate (the caller may checkpoint and resume); a
/// `SandboxError` verdict is recorded as m = 0 with a warning, since it
/// indicts the environment rather than the candidate.
pub fn score_single(
    prompt_text: &str,
    task: &Task,
    llm: &LlmClient,
    sandbox: &dyn Sandbox,
) -> Result<ScoredCell, LlmError> {
    let request = generation_request(prompt_text, task, &llm.model_name());
    let request_digest = request.cache_key(&llm.cache_scope());
    let completion = llm.complete(&request)?;
    let executed = execute_response(&completion.text, task, sandbox);
    Ok(ScoredCell {
        m: executed.m,
        evidence: executed.evidence,
        completion,
        snippet: executed.snippet,
        request_digest,
    })
}
