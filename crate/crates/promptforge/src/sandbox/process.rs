//! Child process plumbing: spawn, feed stdin, collect capped output, and
//! enforce a wall-clock timeout with a kill on expiry.

use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug)]
pub(crate) enum ProcOutcome {
    Exited(i32),
    TimedOut,
    SpawnFailed(String),
}

#[derive(Debug)]
pub(crate) struct ProcRun {
    pub outcome: ProcOutcome,
    pub stdout: String,
    pub stderr: String,
    pub wall_secs: f64,
}

/// Run `argv` in `workdir` with optional stdin, killing the child once
/// `timeout_secs` elapses. Output beyond `output_cap` bytes per stream is
/// read and discarded so the child never blocks on a full pipe.
pub(crate) fn run_command(
    argv: &[String],
    stdin: Option<&str>,
    workdir: &Path,
    timeout_secs: f64,
    memory_cap_bytes: Option<u64>,
    output_cap: usize,
) -> ProcRun {
    let start = Instant::now();
    if argv.is_empty() {
        return ProcRun {
            outcome: ProcOutcome::SpawnFailed("empty command".into()),
            stdout: String::new(),
            stderr: String::new(),
            wall_secs: 0.0,
        };
    }
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .current_dir(workdir)
        .stdin(if stdin.is_some() {
            Stdio::piped()
        } else {
            Stdio::null()
        })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());

    apply_memory_cap(&mut cmd, memory_cap_bytes);
    setup_process_group(&mut cmd);

    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(err) => {
            return ProcRun {
                outcome: ProcOutcome::SpawnFailed(err.to_string()),
                stdout: String::new(),
                stderr: String::new(),
                wall_secs: start.elapsed().as_secs_f64(),
            }
        }
    };

    // Feed stdin from its own thread; the child may exit without reading
    // it all, so write errors are expected and ignored.
    let stdin_handle = stdin.map(|input| {
        let mut pipe = child.stdin.take().expect("stdin was piped");
        let input = input.to_string();
        thread::spawn(move || {
            let _ = pipe.write_all(input.as_bytes());
        })
    });

    let stdout_pipe = child.stdout.take().expect("stdout was piped");
    let stderr_pipe = child.stderr.take().expect("stderr was piped");
    let stdout_handle = thread::spawn(move || read_capped(stdout_pipe, output_cap));
    let stderr_handle = thread::spawn(move || read_capped(stderr_pipe, output_cap));

    let deadline = Duration::from_secs_f64(timeout_secs);
    let outcome = loop {
        match child.try_wait() {
            Ok(Some(status)) => break ProcOutcome::Exited(status.code().unwrap_or(-1)),
            Ok(None) => {}
            Err(err) => {
                kill_tree(&mut child);
                let _ = child.wait();
                break ProcOutcome::SpawnFailed(format!("wait failed: {err}"));
            }
        }
        if start.elapsed() >= deadline {
            kill_tree(&mut child);
            let _ = child.wait();
            break ProcOutcome::TimedOut;
        }
        thread::sleep(Duration::from_millis(10));
    };
    // wall time covers spawn through reap; reader joins (instant once the
    // process group is dead) are excluded
    let wall_secs = start.elapsed().as_secs_f64();

    if let Some(handle) = stdin_handle {
        let _ = handle.join();
    }
    let stdout = stdout_handle.join().unwrap_or_default();
    let stderr = stderr_handle.join().unwrap_or_default();

    ProcRun {
        outcome,
        stdout,
        stderr,
        wall_secs,
    }
}

/// Children get their own process group so a timeout can take the whole
/// tree down, not just the immediate child.
#[cfg(unix)]
fn setup_process_group(cmd: &mut Command) {
    use std::os::unix::process::CommandExt;
    unsafe {
        cmd.pre_exec(|| {
            libc::setpgid(0, 0);
            Ok(())
        });
    }
}

#[cfg(not(unix))]
fn setup_process_group(_cmd: &mut Command) {}

#[cfg(unix)]
fn kill_tree(child: &mut std::process::Child) {
    let pid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_tree(child: &mut std::process::Child) {
    let _ = child.kill();
}

fn read_capped<R: Read>(mut reader: R, cap: usize) -> String {
    let mut kept = Vec::with_capacity(cap.min(8192));
    let mut chunk = [0u8; 8192];
    loop {
        match reader.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                if room > 0 {
                    kept.extend_from_slice(&chunk[..n.min(room)]);
                }
                // past the cap: keep draining so the child is not blocked
            }
            Err(_) => break,
        }
    }
    String::from_utf8_lossy(&kept).into_owned()
}

#[cfg(unix)]
fn apply_memory_cap(cmd: &mut Command, cap: Option<u64>) {
    use std::os::unix::process::CommandExt;
    if let Some(bytes) = cap {
        // setrlimit must run between fork and exec, hence pre_exec.
        unsafe {
            cmd.pre_exec(move || {
                let limit = libc::rlimit {
                    rlim_cur: bytes,
                    rlim_max: bytes,
                };
                libc::setrlimit(libc::RLIMIT_AS, &limit);
                Ok(())
            });
        }
    }
}

#[cfg(not(unix))]
fn apply_memory_cap(_cmd: &mut Command, _cap: Option<u64>) {}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn captures_exit_code_and_output() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_command(
            &sh("echo out; echo err >&2; exit 3"),
            None,
            dir.path(),
            5.0,
            None,
            4096,
        );
        assert!(matches!(run.outcome, ProcOutcome::Exited(3)));
        assert_eq!(run.stdout.trim(), "out");
        assert_eq!(run.stderr.trim(), "err");
    }

    #[test]
    fn feeds_stdin() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_command(&sh("cat"), Some("piped text"), dir.path(), 5.0, None, 4096);
        assert!(matches!(run.outcome, ProcOutcome::Exited(0)));
        assert_eq!(run.stdout, "piped text");
    }

    #[test]
    fn kills_on_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_command(&sh("sleep 30"), None, dir.path(), 0.3, None, 4096);
        assert!(matches!(run.outcome, ProcOutcome::TimedOut));
        assert!(run.wall_secs < 5.0);
    }

    #[test]
    fn huge_output_does_not_deadlock() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_command(
            &sh("yes x | head -c 10000000"),
            None,
            dir.path(),
            20.0,
            None,
            1024,
        );
        assert!(matches!(run.outcome, ProcOutcome::Exited(0)));
        assert_eq!(run.stdout.len(), 1024);
    }

    #[test]
    fn missing_binary_reports_spawn_failure() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_command(
            &["no-such-binary-zzz".to_string()],
            None,
            dir.path(),
            1.0,
            None,
            4096,
        );
        assert!(matches!(run.outcome, ProcOutcome::SpawnFailed(_)));
    }

    #[test]
    fn runs_in_given_workdir() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_command(&sh("pwd"), None, dir.path(), 5.0, None, 4096);
        let shown = std::path::PathBuf::from(run.stdout.trim());
        assert_eq!(
            shown.canonicalize().unwrap(),
            dir.path().canonicalize().unwrap()
        );
    }
}
