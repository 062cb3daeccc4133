//! Isolated execution of candidate code against test suites.
//!
//! Candidate code never runs in the orchestrator process. Every suite
//! execution writes its source into a fresh temp directory, spawns the
//! configured interpreter as a child process, enforces a wall-clock
//! timeout with a 2 s kill window, and truncates captured output at the
//! policy cap. This is process isolation for desk-scale benchmark runs,
//! not a security boundary.

mod extract;
mod pool;
mod process;
mod scoring;

pub use extract::strip_fence_lines;
pub use pool::run_indexed;
pub use scoring::{execute_response, generation_request, score_single, ExecutedResponse, ScoredCell};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{SuiteKind, TestSuite};
use process::{run_command, ProcOutcome};

/// Extra wall-clock allowance for killing a timed-out child.
pub const GRACE_SECS: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("sandbox.{field}: command template must contain the {{src}} placeholder exactly once")]
    BadTemplate { field: &'static str },
    #[error("sandbox.timeout_secs must be > 0")]
    NonPositiveTimeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    /// Wall-clock budget for one whole suite execution.
    pub timeout_secs: f64,
    /// Best-effort address-space cap for child processes.
    pub memory_cap_bytes: Option<u64>,
    /// Captured stdout/stderr are truncated at this many bytes.
    pub max_output_bytes: usize,
    /// Command template running a source file, e.g. `python3 {src}`.
    pub interpreter_cmd: String,
    /// Command template that parses/compiles without executing.
    pub syntax_check_cmd: String,
    /// Worker threads for concurrent suite executions; 0 means CPU count.
    pub parallel_executions: usize,
    /// Compare I/O-pair stdout byte-for-byte instead of normalized.
    pub strict_stdout: bool,
}

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self {
            timeout_secs: 10.0,
            memory_cap_bytes: None,
            max_output_bytes: 64 * 1024,
            interpreter_cmd: "python3 {src}".into(),
            syntax_check_cmd: "python3 -m py_compile {src}".into(),
            parallel_executions: 0,
            strict_stdout: false,
        }
    }
}

impl SandboxPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.timeout_secs <= 0.0 {
            return Err(PolicyError::NonPositiveTimeout);
        }
        for (field, template) in [
            ("interpreter_cmd", &self.interpreter_cmd),
            ("syntax_check_cmd", &self.syntax_check_cmd),
        ] {
            if template.matches("{src}").count() != 1 {
                return Err(PolicyError::BadTemplate { field });
            }
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        if self.parallel_executions > 0 {
            self.parallel_executions
        } else {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnippetOrigin {
    FencedBlock(usize),
    WholeResponse,
}

/// Code pulled out of a model response, with the syntax checker's verdict
/// recorded (never assumed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub text: String,
    pub origin: SnippetOrigin,
    pub syntax_valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Pass,
    Fail,
    Timeout,
    RuntimeError,
    SyntaxError,
    SandboxError,
}

/// Verdict of running one program against one test suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub wall_time_secs: f64,
    pub tests_passed: u32,
    pub tests_total: u32,
}

impl ExecutionResult {
    pub fn passed(&self) -> bool {
        self.status == ExecStatus::Pass
    }

    fn sandbox_error(message: String) -> Self {
        Self {
            status: ExecStatus::SandboxError,
            stdout: String::new(),
            stderr: message,
            wall_time_secs: 0.0,
            tests_passed: 0,
            tests_total: 1,
        }
    }
}

/// Execution surface the engine talks to; implemented by [`ProcessSandbox`]
/// and by in-memory stubs in tests.
pub trait Sandbox: Send + Sync {
    /// Pull the longest syntactically valid candidate out of a response.
    fn extract_code(&self, response: &str) -> CodeSnippet;

    /// Syntax-check a source text without running it.
    fn check_syntax(&self, source: &str) -> bool;

    /// Run a program bare (no tests appended); Pass iff it exits 0.
    fn run_program(&self, code: &CodeSnippet, stdin: Option<&str>) -> ExecutionResult;

    /// Run a snippet against a suite, dispatching on the suite kind.
    fn run_suite(
        &self,
        code: &CodeSnippet,
        suite: &TestSuite,
        entry_point: Option<&str>,
    ) -> ExecutionResult;
}

/// Subprocess-backed sandbox configured by a [`SandboxPolicy`].
pub struct ProcessSandbox {
    policy: SandboxPolicy,
}

impl ProcessSandbox {
    pub fn new(policy: SandboxPolicy) -> Result<Self, PolicyError> {
        policy.validate()?;
        Ok(Self { policy })
    }

    pub fn policy(&self) -> &SandboxPolicy {
        &self.policy
    }

    /// Run the configured syntax check over a candidate text.
    /// Checker spawn failures degrade to "invalid" with a warning; degraded
    /// extraction is signaled through `syntax_valid`, never an error.
    pub fn syntax_valid(&self, source: &str) -> bool {
        let dir = match tempfile::tempdir() {
            Ok(dir) => dir,
            Err(err) => {
                log::warn!("syntax check tempdir failed: {err}");
                return false;
            }
        };
        let path = dir.path().join("main.py");
        if let Err(err) = std::fs::write(&path, source) {
            log::warn!("syntax check write failed: {err}");
            return false;
        }
        let argv = render_template(&self.policy.syntax_check_cmd, &path);
        let run = run_command(
            &argv,
            None,
            dir.path(),
            self.policy.timeout_secs,
            self.policy.memory_cap_bytes,
            self.policy.max_output_bytes,
        );
        match run.outcome {
            ProcOutcome::Exited(0) => true,
            ProcOutcome::Exited(_) | ProcOutcome::TimedOut => false,
            ProcOutcome::SpawnFailed(err) => {
                log::warn!("syntax check could not run: {err}");
                false
            }
        }
    }

    /// Execute an embedded-test suite: the harness is the candidate code,
    /// a newline, then the suite's test code, run as one program. Passes
    /// iff the harness exits 0 within the timeout.
    ///
    /// The entry point is metadata only: if the candidate defines no such
    /// symbol the harness simply fails on its own.
    pub fn run_embedded_tests(
        &self,
        code: &CodeSnippet,
        test_code: &str,
        _entry_point: Option<&str>,
    ) -> ExecutionResult {
        let tests_total = declared_assertion_count(test_code).max(1);
        let dir = match tempfile::tempdir() {
            Ok(dir) => dir,
            Err(err) => return ExecutionResult::sandbox_error(format!("tempdir: {err}")),
        };
        let path = dir.path().join("main.py");
        let harness = format!("{}\n{}", code.text, test_code);
        if let Err(err) = std::fs::write(&path, harness) {
            return ExecutionResult::sandbox_error(format!("write harness: {err}"));
        }
        let argv = render_template(&self.policy.interpreter_cmd, &path);
        let run = run_command(
            &argv,
            None,
            dir.path(),
            self.policy.timeout_secs,
            self.policy.memory_cap_bytes,
            self.policy.max_output_bytes,
        );
        let (status, tests_passed) = match run.outcome {
            ProcOutcome::Exited(0) => (ExecStatus::Pass, tests_total),
            ProcOutcome::Exited(_) => (ExecStatus::Fail, 0),
            ProcOutcome::TimedOut => (ExecStatus::Timeout, 0),
            ProcOutcome::SpawnFailed(err) => {
                return ExecutionResult::sandbox_error(format!("spawn: {err}"))
            }
        };
        ExecutionResult {
            status,
            stdout: run.stdout,
            stderr: run.stderr,
            wall_time_secs: run.wall_secs,
            tests_passed,
            tests_total,
        }
    }

    /// Run a program with no tests attached: used to vet reference
    /// solutions for basic functional integrity.
    pub fn run_bare(&self, code: &CodeSnippet, stdin: Option<&str>) -> ExecutionResult {
        let dir = match tempfile::tempdir() {
            Ok(dir) => dir,
            Err(err) => return ExecutionResult::sandbox_error(format!("tempdir: {err}")),
        };
        let path = dir.path().join("main.py");
        if let Err(err) = std::fs::write(&path, &code.text) {
            return ExecutionResult::sandbox_error(format!("write source: {err}"));
        }
        let argv = render_template(&self.policy.interpreter_cmd, &path);
        let run = run_command(
            &argv,
            stdin,
            dir.path(),
            self.policy.timeout_secs,
            self.policy.memory_cap_bytes,
            self.policy.max_output_bytes,
        );
        let (status, tests_passed) = match run.outcome {
            ProcOutcome::Exited(0) => (ExecStatus::Pass, 1),
            ProcOutcome::Exited(_) => (ExecStatus::RuntimeError, 0),
            ProcOutcome::TimedOut => (ExecStatus::Timeout, 0),
            ProcOutcome::SpawnFailed(err) => {
                return ExecutionResult::sandbox_error(format!("spawn: {err}"))
            }
        };
        ExecutionResult {
            status,
            stdout: run.stdout,
            stderr: run.stderr,
            wall_time_secs: run.wall_secs,
            tests_passed,
            tests_total: 1,
        }
    }

    /// Execute an I/O-pair suite: one child process per pair, fed the
    /// pair's stdin, with stdout compared after normalization (trailing
    /// whitespace per line and trailing newlines dropped) unless
    /// `strict_stdout` is set. Every pair runs independently; the suite
    /// passes iff all pairs match.
    ///
    /// Each pair gets `timeout / pair_count` seconds (floor 1 s), and the
    /// whole suite stops with `Timeout` once the suite budget is spent.
    pub fn run_io_tests(&self, code: &CodeSnippet, pairs: &[(String, String)]) -> ExecutionResult {
        let tests_total = pairs.len() as u32;
        let dir = match tempfile::tempdir() {
            Ok(dir) => dir,
            Err(err) => return ExecutionResult::sandbox_error(format!("tempdir: {err}")),
        };
        let path = dir.path().join("main.py");
        if let Err(err) = std::fs::write(&path, &code.text) {
            return ExecutionResult::sandbox_error(format!("write source: {err}"));
        }
        let argv = render_template(&self.policy.interpreter_cmd, &path);
        let per_pair_timeout = (self.policy.timeout_secs / pairs.len().max(1) as f64).max(1.0);

        let started = std::time::Instant::now();
        let mut tests_passed = 0u32;
        let mut saw_crash = false;
        let mut saw_timeout = false;
        let mut stdout_acc = String::new();
        let mut stderr_acc = String::new();

        for (idx, (stdin, expected)) in pairs.iter().enumerate() {
            if started.elapsed().as_secs_f64() >= self.policy.timeout_secs {
                saw_timeout = true;
                stderr_acc.push_str(&format!("[pair {idx}] suite timeout budget exhausted\n"));
                break;
            }
            let run = run_command(
                &argv,
                Some(stdin),
                dir.path(),
                per_pair_timeout,
                self.policy.memory_cap_bytes,
                self.policy.max_output_bytes,
            );
            if pairs.len() > 1 {
                stdout_acc.push_str(&format!("[pair {idx}]\n"));
                stderr_acc.push_str(&format!("[pair {idx}]\n"));
            }
            push_capped(&mut stdout_acc, &run.stdout, self.policy.max_output_bytes);
            push_capped(&mut stderr_acc, &run.stderr, self.policy.max_output_bytes);
            match run.outcome {
                ProcOutcome::Exited(0) => {
                    let matched = if self.policy.strict_stdout {
                        run.stdout == *expected
                    } else {
                        normalize_stdout(&run.stdout) == normalize_stdout(expected)
                    };
                    if matched {
                        tests_passed += 1;
                    }
                }
                ProcOutcome::Exited(_) => saw_crash = true,
                ProcOutcome::TimedOut => saw_timeout = true,
                ProcOutcome::SpawnFailed(err) => {
                    return ExecutionResult::sandbox_error(format!("spawn: {err}"))
                }
            }
        }

        let status = if tests_total > 0 && tests_passed == tests_total {
            ExecStatus::Pass
        } else if saw_timeout {
            ExecStatus::Timeout
        } else if saw_crash {
            ExecStatus::RuntimeError
        } else {
            ExecStatus::Fail
        };
        ExecutionResult {
            status,
            stdout: stdout_acc,
            stderr: stderr_acc,
            wall_time_secs: started.elapsed().as_secs_f64(),
            tests_passed,
            tests_total,
        }
    }
}

impl Sandbox for ProcessSandbox {
    fn extract_code(&self, response: &str) -> CodeSnippet {
        extract::extract_code(response, |source| self.syntax_valid(source))
    }

    fn check_syntax(&self, source: &str) -> bool {
        self.syntax_valid(source)
    }

    fn run_program(&self, code: &CodeSnippet, stdin: Option<&str>) -> ExecutionResult {
        self.run_bare(code, stdin)
    }

    fn run_suite(
        &self,
        code: &CodeSnippet,
        suite: &TestSuite,
        entry_point: Option<&str>,
    ) -> ExecutionResult {
        match suite.kind {
            SuiteKind::EmbeddedTests => {
                let test_code = suite.embedded.as_deref().unwrap_or_default();
                self.run_embedded_tests(code, test_code, entry_point)
            }
            SuiteKind::IoPairs => {
                let pairs = suite.io_pairs.as_deref().unwrap_or_default();
                self.run_io_tests(code, pairs)
            }
        }
    }
}

/// Trailing whitespace per line and trailing newlines dropped.
pub fn normalize_stdout(raw: &str) -> String {
    let mut normalized: String = raw
        .lines()
        .map(|line| line.trim_end())
        .collect::<Vec<_>>()
        .join("\n");
    while normalized.ends_with('\n') {
        normalized.pop();
    }
    normalized
}

/// Lines that look like standalone assertions in embedded test code.
pub fn declared_assertion_count(test_code: &str) -> u32 {
    test_code
        .lines()
        .map(str::trim_start)
        .filter(|line| line.starts_with("assert ") || line.starts_with("assert("))
        .count() as u32
}

fn render_template(template: &str, src: &std::path::Path) -> Vec<String> {
    template
        .split_whitespace()
        .map(|token| token.replace("{src}", &src.to_string_lossy()))
        .collect()
}

fn push_capped(acc: &mut String, chunk: &str, cap: usize) {
    let remaining = cap.saturating_sub(acc.len());
    if remaining == 0 {
        return;
    }
    let mut end = remaining.min(chunk.len());
    while end > 0 && !chunk.is_char_boundary(end) {
        end -= 1;
    }
    acc.push_str(&chunk[..end]);
}
