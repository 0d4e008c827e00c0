//! Subprocess sampler speaking newline-delimited JSON.
//!
//! Each request is one line `{"src", "ctx", "pos", "mode", "k"}` on the
//! child's stdin; the child answers with one line `{"tokens", "probs"}`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::Serialize;

use super::{CandidateSet, FillMode, FillRequest, Sampler};
use crate::error::{QeError, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Serialize)]
struct WireRequest<'a> {
    src: &'a str,
    ctx: &'a [String],
    pos: usize,
    mode: FillMode,
    k: usize,
}

pub struct ExternalSampler {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl ExternalSampler {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| QeError::SamplerTerminated(format!(": failed to start {command:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().ok_or_else(|| QeError::SamplerTerminated(": no stdout".into()))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalSampler { child, stdin, lines: rx, timeout })
    }

    fn exit_note(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => format!(" ({status})"),
            _ => String::new(),
        }
    }
}

impl Sampler for ExternalSampler {
    fn top_k(&mut self, request: &FillRequest, k: usize) -> Result<CandidateSet> {
        let wire = WireRequest {
            src: &request.source,
            ctx: &request.context,
            pos: request.target_position,
            mode: request.mode,
            k,
        };
        let mut line = serde_json::to_string(&wire)?;
        line.push('\n');
        let stdin = self.stdin.as_mut().ok_or_else(|| QeError::SamplerTerminated(String::new()))?;
        if stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()).is_err() {
            let note = self.exit_note();
            return Err(QeError::SamplerTerminated(note));
        }
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(QeError::SamplerProtocol(format!("unreadable reply: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(QeError::SamplerTimeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                // give the child a moment to be reaped so the status can be reported
                thread::sleep(Duration::from_millis(20));
                let note = self.exit_note();
                return Err(QeError::SamplerTerminated(note));
            }
        };
        let set: CandidateSet = serde_json::from_str(&reply)
            .map_err(|e| QeError::SamplerProtocol(format!("malformed reply {reply:?}: {e}")))?;
        set.validate(k)?;
        Ok(set)
    }
}

impl Drop for ExternalSampler {
    fn drop(&mut self) {
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
