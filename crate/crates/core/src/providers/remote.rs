use std::time::Duration;

use super::{Backend, InflightLimit, ProviderError, ProviderRequest, ProviderResponse, WireReply};

/// JSON-over-HTTP backend: POSTs the request, expects a [`WireReply`].
///
/// Transport failures and 5xx replies are retried with exponential backoff;
/// after the last attempt the call fails with [`ProviderError::Unavailable`].
pub struct RemoteBackend {
    name: String,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    attempts: u32,
    initial_backoff: Duration,
    limit: InflightLimit,
}

impl RemoteBackend {
    pub fn new(
        name: impl Into<String>,
        url: impl Into<String>,
        api_key: Option<String>,
        limit: InflightLimit,
    ) -> Self {
        Self {
            name: name.into(),
            url: url.into(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(60))
                .build()
                .expect("http client builds"),
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            limit,
        }
    }

    pub fn with_retry(mut self, attempts: u32, initial_backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.initial_backoff = initial_backoff;
        self
    }

    fn attempt(
        &self,
        request: &ProviderRequest,
    ) -> Result<Result<ProviderResponse, ProviderError>, String> {
        let _permit = self.limit.acquire();
        let mut call = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let reply = call.send().map_err(|e| e.to_string())?;
        let status = reply.status();
        if status.is_server_error() {
            return Err(format!("HTTP {status}"));
        }
        let body = reply.bytes().map_err(|e| e.to_string())?;
        match serde_json::from_slice::<WireReply>(&body) {
            Ok(r) => Ok(r.into_result(request)),
            Err(e) if status.is_success() => Ok(Err(ProviderError::InvalidResponse(e.to_string()))),
            Err(_) => Ok(Err(ProviderError::InvalidRequest(format!("HTTP {status}")))),
        }
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        request.validate()?;
        let mut backoff = self.initial_backoff;
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.attempt(request) {
                Ok(outcome) => return outcome,
                Err(e) => {
                    log::warn!(
                        "{} attempt {attempt}/{} failed: {e}",
                        self.name,
                        self.attempts
                    );
                    last = e;
                }
            }
            if attempt < self.attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(ProviderError::Unavailable(format!("{}: {last}", self.url)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Serves `replies` in order, one per connection, and returns the request bodies seen.
    fn serve(replies: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in replies {
                let (mut sock, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = sock.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf).to_string();
                    if let Some(split) = text.find("\r\n\r\n") {
                        let len = text[..split]
                            .lines()
                            .find_map(|l| {
                                l.to_ascii_lowercase()
                                    .strip_prefix("content-length:")
                                    .map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= split + 4 + len {
                            seen.push(text[split + 4..].to_string());
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                sock.write_all(reply.as_bytes()).unwrap();
            }
            seen
        });
        (url, handle)
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, handle) = serve(vec![(503, "{}"), (200, r#"{"ok":{"language":"en"}}"#)]);
        let b = RemoteBackend::new("langid", url, Some("k".into()), InflightLimit::new(2))
            .with_retry(3, Duration::from_millis(10));
        assert_eq!(
            b.call(&ProviderRequest::lang_id("Tuesday")).unwrap(),
            ProviderResponse::Language("en".into())
        );
        let seen = handle.join().unwrap();
        assert_eq!(seen.len(), 2);
        assert!(seen[1].contains("Tuesday"));
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let (url, handle) = serve(vec![(500, "{}"), (500, "{}"), (500, "{}")]);
        let b = RemoteBackend::new("langid", url, None, InflightLimit::new(1))
            .with_retry(3, Duration::from_millis(5));
        assert!(matches!(
            b.call(&ProviderRequest::lang_id("x")),
            Err(ProviderError::Unavailable(_))
        ));
        assert_eq!(handle.join().unwrap().len(), 3);
    }

    #[test]
    fn client_error_body_is_mapped() {
        let (url, handle) = serve(vec![(
            400,
            r#"{"error":{"kind":"unsupported_language_pair","message":"xx"}}"#,
        )]);
        let b = RemoteBackend::new("mt", url, None, InflightLimit::new(1))
            .with_retry(3, Duration::from_millis(5));
        assert!(matches!(
            b.call(&ProviderRequest::translate("a", "fr", "en")),
            Err(ProviderError::UnsupportedLanguagePair { .. })
        ));
        handle.join().unwrap();
    }
}
