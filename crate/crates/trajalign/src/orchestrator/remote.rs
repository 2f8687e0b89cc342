//! Remote agent backend: single-line JSON records over a line-delimited byte
//! stream. One request line goes out, one response line comes back.
//!
//! Request:  `{"agent":"KnowledgeRetriever","question":"...","state_text":"...","head_token":"..."}`
//! Response: `{"payload":"...","end_token":"...","next_head_token":"..."}`
//!
//! A response may carry `"error"` instead, which surfaces as a backend
//! failure. Timeouts and I/O retry counts are configuration keys
//! (`endpoint`, `timeout_ms`, `io_retries`). [`serve_backends`] is a
//! minimal reference server that answers the protocol from a local backend
//! set, used by the examples and tests.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AgentBackend, AgentBackends, AgentRequest, AgentResponse, BackendError};
use crate::config::{ConfigError, KvConfig};
use crate::trajectory::AgentKind;

#[derive(Debug, Serialize, Deserialize)]
struct WireRequest {
    agent: AgentKind,
    question: String,
    state_text: String,
    head_token: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireResponse {
    #[serde(default)]
    payload: String,
    #[serde(default)]
    end_token: String,
    #[serde(default)]
    next_head_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Connection settings for [`RemoteBackend`].
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub io_retries: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig { endpoint: "127.0.0.1:4070".to_owned(), timeout_ms: 2000, io_retries: 2 }
    }
}

impl RemoteConfig {
    pub fn from_kv(cfg: &KvConfig) -> Result<RemoteConfig, ConfigError> {
        Ok(RemoteConfig {
            endpoint: cfg.str_or("endpoint", "127.0.0.1:4070"),
            timeout_ms: cfg.u64_or("timeout_ms", 2000)?,
            io_retries: cfg.usize_or("io_retries", 2)?,
        })
    }
}

/// One round trip of a line out, a line back. Implementations own their
/// framing and any reconnection behavior.
pub trait LineTransport: Send {
    fn round_trip(&mut self, line: &str) -> std::io::Result<String>;
}

/// TCP transport with a read/write timeout per round trip.
pub struct TcpLineTransport {
    reader: BufReader<TcpStream>,
}

impl TcpLineTransport {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> std::io::Result<TcpLineTransport> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "no address"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        Ok(TcpLineTransport { reader: BufReader::new(stream) })
    }
}

impl LineTransport for TcpLineTransport {
    fn round_trip(&mut self, line: &str) -> std::io::Result<String> {
        let stream = self.reader.get_mut();
        stream.write_all(line.as_bytes())?;
        stream.write_all(b"\n")?;
        stream.flush()?;
        let mut response = String::new();
        let n = self.reader.read_line(&mut response)?;
        if n == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the stream"));
        }
        Ok(response.trim_end_matches(['\r', '\n']).to_owned())
    }
}

/// In-memory transport backed by a handler function; lets the protocol be
/// exercised without sockets.
pub struct FnTransport<F: FnMut(&str) -> std::io::Result<String> + Send>(pub F);

impl<F: FnMut(&str) -> std::io::Result<String> + Send> LineTransport for FnTransport<F> {
    fn round_trip(&mut self, line: &str) -> std::io::Result<String> {
        self.0(line)
    }
}

/// [`AgentBackend`] speaking the wire protocol over any [`LineTransport`].
/// I/O errors are retried up to `io_retries` times before failing the
/// invocation. One instance may serve several agents; each request names its
/// agent.
pub struct RemoteBackend {
    transport: Mutex<Box<dyn LineTransport>>,
    io_retries: usize,
}

impl RemoteBackend {
    pub fn new(transport: Box<dyn LineTransport>, io_retries: usize) -> RemoteBackend {
        RemoteBackend { transport: Mutex::new(transport), io_retries }
    }

    /// Connect over TCP using the configured endpoint and timeouts.
    pub fn connect(cfg: &RemoteConfig) -> std::io::Result<RemoteBackend> {
        let transport = TcpLineTransport::connect(cfg.endpoint.as_str(), Duration::from_millis(cfg.timeout_ms))?;
        Ok(RemoteBackend::new(Box::new(transport), cfg.io_retries))
    }
}

impl AgentBackend for RemoteBackend {
    fn invoke(&self, request: &AgentRequest) -> Result<AgentResponse, BackendError> {
        let wire = WireRequest {
            agent: request.agent,
            question: request.question.clone(),
            state_text: request.state_text.clone(),
            head_token: request.head_token.clone(),
        };
        let line = serde_json::to_string(&wire).map_err(|e| BackendError(format!("encode: {e}")))?;
        let mut transport = self.transport.lock().unwrap();
        let mut last_err = None;
        for _ in 0..=self.io_retries {
            match transport.round_trip(&line) {
                Ok(reply) => {
                    let parsed: WireResponse =
                        serde_json::from_str(&reply).map_err(|e| BackendError(format!("decode {reply:?}: {e}")))?;
                    if let Some(message) = parsed.error {
                        return Err(BackendError(format!("remote: {message}")));
                    }
                    return Ok(AgentResponse {
                        payload: parsed.payload,
                        end_token: parsed.end_token,
                        next_head_token: parsed.next_head_token,
                    });
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(BackendError(format!("transport failed after {} attempts: {}", self.io_retries + 1, last_err.unwrap())))
    }
}

/// Serve the wire protocol from a local backend set. Handles `max_conns`
/// connections sequentially, one line per request, then returns; enough for
/// demos and protocol tests.
pub fn serve_backends(listener: TcpListener, backends: &AgentBackends, max_conns: usize) -> std::io::Result<()> {
    for _ in 0..max_conns {
        let (stream, _) = listener.accept()?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut stream = stream;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            let reply = handle_line(line.trim_end_matches(['\r', '\n']), backends);
            stream.write_all(reply.as_bytes())?;
            stream.write_all(b"\n")?;
            stream.flush()?;
        }
    }
    Ok(())
}

fn handle_line(line: &str, backends: &AgentBackends) -> String {
    let error_reply = |message: String| {
        serde_json::to_string(&WireResponse {
            payload: String::new(),
            end_token: String::new(),
            next_head_token: None,
            error: Some(message),
        })
        .expect("error replies serialize")
    };
    let wire: WireRequest = match serde_json::from_str(line) {
        Ok(w) => w,
        Err(e) => return error_reply(format!("bad request: {e}")),
    };
    let request = AgentRequest {
        agent: wire.agent,
        question: wire.question,
        state_text: wire.state_text,
        head_token: wire.head_token,
    };
    match backends.get(request.agent).invoke(&request) {
        Ok(response) => serde_json::to_string(&WireResponse {
            payload: response.payload,
            end_token: response.end_token,
            next_head_token: response.next_head_token,
            error: None,
        })
        .expect("responses serialize"),
        Err(e) => error_reply(e.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TokenTable;

    #[test]
    fn request_line_shape() {
        let wire = WireRequest {
            agent: AgentKind::KnowledgeRetriever,
            question: "q".into(),
            state_text: "s".into(),
            head_token: "⟨Retriever⟩".into(),
        };
        let line = serde_json::to_string(&wire).unwrap();
        assert!(line.contains("\"agent\":\"KnowledgeRetriever\""));
        assert!(line.contains("\"question\":\"q\""));
        assert!(line.contains("\"state_text\":\"s\""));
        assert!(line.contains("\"head_token\""));
        assert!(!line.contains('\n'));
    }

    #[test]
    fn fn_transport_round_trip_and_error_mapping() {
        let table = TokenTable::standard();
        let end = table.end(AgentKind::ResponseGenerator).to_owned();
        let next = table.head(AgentKind::AnswerVerifier).to_owned();
        let backend = RemoteBackend::new(
            Box::new(FnTransport(move |line: &str| {
                let req: WireRequest = serde_json::from_str(line).unwrap();
                assert_eq!(req.agent, AgentKind::ResponseGenerator);
                Ok(serde_json::to_string(&WireResponse {
                    payload: "42".into(),
                    end_token: end.clone(),
                    next_head_token: Some(next.clone()),
                    error: None,
                })
                .unwrap())
            })),
            0,
        );
        let request = AgentRequest {
            agent: AgentKind::ResponseGenerator,
            question: "q".into(),
            state_text: String::new(),
            head_token: table.head(AgentKind::ResponseGenerator).into(),
        };
        let response = backend.invoke(&request).unwrap();
        assert_eq!(response.payload, "42");
        assert_eq!(response.end_token, table.end(AgentKind::ResponseGenerator));

        let failing = RemoteBackend::new(
            Box::new(FnTransport(|_: &str| {
                Ok("{\"error\":\"agent offline\"}".to_owned())
            })),
            0,
        );
        let err = failing.invoke(&request).unwrap_err();
        assert!(err.0.contains("agent offline"));
    }

    #[test]
    fn io_errors_retry_then_fail() {
        let attempts = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let counter = attempts.clone();
        let backend = RemoteBackend::new(
            Box::new(FnTransport(move |_: &str| {
                counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                Err(std::io::Error::new(std::io::ErrorKind::TimedOut, "slow"))
            })),
            2,
        );
        let request = AgentRequest {
            agent: AgentKind::AnswerVerifier,
            question: "q".into(),
            state_text: String::new(),
            head_token: "⟨Verifier⟩".into(),
        };
        let err = backend.invoke(&request).unwrap_err();
        assert!(err.0.contains("3 attempts"), "{}", err.0);
        assert_eq!(attempts.load(std::sync::atomic::Ordering::SeqCst), 3);
    }
}
