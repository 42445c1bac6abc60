//! Runs untrusted Python programs in a throwaway process with a cleared
//! environment, resource limits, and a hard wall-clock deadline. Used to
//! score generated code against benchmark test suites.

use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::EvalError;

const POLL_INTERVAL: Duration = Duration::from_millis(5);
const ADDRESS_SPACE_LIMIT: u64 = 512 * 1024 * 1024;
const OPEN_FILE_LIMIT: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitKind {
    /// Process exited with status 0.
    Ok,
    /// Process exited with a nonzero status code.
    Nonzero(i32),
    /// Killed by us at the wall-clock deadline.
    Timeout,
    /// Terminated by a signal we did not send (resource limit, crash).
    Forbidden,
}

impl ExitKind {
    pub fn is_ok(&self) -> bool {
        matches!(self, ExitKind::Ok)
    }
}

#[derive(Debug, Clone)]
pub struct SandboxResult {
    pub stdout: String,
    pub stderr: String,
    pub exit: ExitKind,
    pub wall_time: f64,
}

/// Executes `program` as a Python script with `stdin_text` on standard
/// input, killing it after `timeout` seconds of wall-clock time.
pub fn run_sandbox(
    program: &str,
    stdin_text: &str,
    timeout: f64,
) -> Result<SandboxResult, EvalError> {
    let dir = tempfile::tempdir()
        .map_err(|e| EvalError::SandboxUnavailable(format!("cannot create tempdir: {e}")))?;
    let script = dir.path().join("main.py");
    std::fs::write(&script, program)
        .map_err(|e| EvalError::SandboxUnavailable(format!("cannot write script: {e}")))?;

    let mut command = Command::new("python3");
    command
        .arg("-I")
        .arg("-B")
        .arg("main.py")
        .current_dir(dir.path())
        .env_clear()
        .env("PATH", "/usr/bin:/bin")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    apply_limits(&mut command, timeout);

    let start = Instant::now();
    let mut child = command.spawn().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            EvalError::SandboxUnavailable("python3 not found on PATH".into())
        } else {
            EvalError::SandboxUnavailable(format!("failed to spawn python3: {e}"))
        }
    })?;

    let mut stdin_pipe = child.stdin.take().expect("stdin was piped");
    let stdin_owned = stdin_text.to_string();
    let stdin_writer = std::thread::spawn(move || {
        let _ = stdin_pipe.write_all(stdin_owned.as_bytes());
        drop(stdin_pipe);
    });
    let stdout_pipe = child.stdout.take().expect("stdout was piped");
    let stderr_pipe = child.stderr.take().expect("stderr was piped");
    let stdout_reader = std::thread::spawn(move || read_lossy(stdout_pipe));
    let stderr_reader = std::thread::spawn(move || read_lossy(stderr_pipe));

    let deadline = start + Duration::from_secs_f64(timeout.max(0.05));
    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if Instant::now() >= deadline {
                    timed_out = true;
                    let _ = child.kill();
                    break child.wait().map_err(|e| {
                        EvalError::SandboxUnavailable(format!("wait failed: {e}"))
                    })?;
                }
                std::thread::sleep(POLL_INTERVAL);
            }
            Err(e) => {
                return Err(EvalError::SandboxUnavailable(format!("wait failed: {e}")));
            }
        }
    };

    let _ = stdin_writer.join();
    let stdout = stdout_reader.join().unwrap_or_default();
    let stderr = stderr_reader.join().unwrap_or_default();
    let wall_time = start.elapsed().as_secs_f64();

    let exit = if timed_out {
        ExitKind::Timeout
    } else {
        match status.code() {
            Some(0) => ExitKind::Ok,
            Some(code) => ExitKind::Nonzero(code),
            None => ExitKind::Forbidden,
        }
    };

    Ok(SandboxResult { stdout, stderr, exit, wall_time })
}

/// Scores one generated program against a test suite: the program text and
/// the assertions are concatenated into a single script, and the score is
/// 1.0 exactly when that script exits cleanly.
pub fn pass_at_1(program: &str, tests: &[String], timeout: f64) -> Result<f64, EvalError> {
    let harness = format!("{}\n\n{}", program, tests.join("\n"));
    let result = run_sandbox(&harness, "", timeout)?;
    Ok(if result.exit.is_ok() { 1.0 } else { 0.0 })
}

fn read_lossy(mut pipe: impl std::io::Read) -> String {
    let mut buf = Vec::new();
    let _ = pipe.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).into_owned()
}

#[cfg(unix)]
fn apply_limits(command: &mut Command, timeout: f64) {
    use std::os::unix::process::CommandExt;

    let cpu_seconds = timeout.max(0.0).ceil() as u64 + 1;
    unsafe {
        command.pre_exec(move || {
            let set = |resource: libc::__rlimit_resource_t, limit: u64| {
                let rlim = libc::rlimit { rlim_cur: limit, rlim_max: limit };
                // Best effort: a failed limit weakens the sandbox but the
                // wall-clock kill still applies.
                let _ = libc::setrlimit(resource, &rlim);
            };
            set(libc::RLIMIT_CPU, cpu_seconds);
            set(libc::RLIMIT_AS, ADDRESS_SPACE_LIMIT);
            set(libc::RLIMIT_NOFILE, OPEN_FILE_LIMIT);
            set(libc::RLIMIT_CORE, 0);
            let _ = libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET);
            Ok(())
        });
    }
}

#[cfg(not(unix))]
fn apply_limits(_command: &mut Command, _timeout: f64) {}
