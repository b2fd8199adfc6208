use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::{Backend, ProviderError, ProviderRequest, ProviderResponse, WireReply};

struct Bridge {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Talks to a long-running helper process: one JSON request per stdin line,
/// one [`WireReply`] per stdout line. The process is started on first use and
/// restarted after it exits.
pub struct CommandBackend {
    name: String,
    program: String,
    args: Vec<String>,
    bridge: Mutex<Option<Bridge>>,
}

impl CommandBackend {
    pub fn new(name: impl Into<String>, program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            name: name.into(),
            program: program.into(),
            args,
            bridge: Mutex::new(None),
        }
    }

    fn spawn(&self) -> Result<Bridge, ProviderError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| {
                ProviderError::Unavailable(format!("cannot start {}: {e}", self.program))
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Bridge {
            child,
            stdin,
            stdout,
        })
    }

    fn exchange(bridge: &mut Bridge, line: &str) -> std::io::Result<String> {
        bridge.stdin.write_all(line.as_bytes())?;
        bridge.stdin.write_all(b"\n")?;
        bridge.stdin.flush()?;
        let mut reply = String::new();
        if bridge.stdout.read_line(&mut reply)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "bridge closed its output",
            ));
        }
        Ok(reply)
    }
}

impl Backend for CommandBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        request.validate()?;
        let line = serde_json::to_string(request).expect("requests always serialize");
        let mut slot = self.bridge.lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_none() {
            *slot = Some(self.spawn()?);
        }
        let bridge = slot.as_mut().expect("bridge just started");
        let reply = match Self::exchange(bridge, &line) {
            Ok(r) => r,
            Err(e) => {
                if let Some(mut dead) = slot.take() {
                    let _ = dead.child.kill();
                    let _ = dead.child.wait();
                }
                return Err(ProviderError::Unavailable(format!("{}: {e}", self.program)));
            }
        };
        let reply: WireReply = serde_json::from_str(reply.trim_end())
            .map_err(|e| ProviderError::InvalidResponse(format!("{}: {e}", self.program)))?;
        reply.into_result(request)
    }
}

impl Drop for CommandBackend {
    fn drop(&mut self) {
        if let Some(mut bridge) = self.bridge.get_mut().ok().and_then(Option::take) {
            drop(bridge.stdin);
            let _ = bridge.child.wait();
        }
    }
}
