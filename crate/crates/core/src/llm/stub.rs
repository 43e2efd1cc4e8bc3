//! A tiny local chat-completion server for tests, with programmable failures.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::{request_hash, ChatMessage};

#[derive(Debug, Clone, PartialEq)]
pub struct StubReply {
    pub status: u16,
    pub body: String,
    pub headers: Vec<(String, String)>,
    /// Held before answering, to provoke client timeouts.
    pub delay: Option<Duration>,
}

impl StubReply {
    /// A 200 chat-completion response carrying `content`.
    pub fn ok(content: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 0, "completion_tokens": 0},
        })
        .to_string();
        Self { status: 200, body, headers: vec![], delay: None }
    }

    pub fn status(status: u16) -> Self {
        Self { status, body: format!("{{\"error\":\"status {status}\"}}"), headers: vec![], delay: None }
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn delayed(mut self, d: Duration) -> Self {
        self.delay = Some(d);
        self
    }
}

#[derive(Debug, Clone)]
pub struct ReceivedRequest {
    pub path: String,
    pub body: String,
    pub authorization: Option<String>,
    /// Hash of the `messages` array as decoded from the body.
    pub messages_hash: Option<String>,
    pub received_at: Instant,
}

#[derive(Debug)]
struct StubState {
    queue: VecDeque<StubReply>,
    fallback: StubReply,
    required_token: Option<String>,
    received: Vec<ReceivedRequest>,
}

#[derive(Debug)]
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<Mutex<StubState>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

#[derive(Deserialize)]
struct Body {
    messages: Vec<ChatMessage>,
}

impl StubServer {
    /// Starts on an ephemeral localhost port; `fallback` answers once the queue is empty.
    pub fn start(fallback: StubReply) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let state = Arc::new(Mutex::new(StubState {
            queue: VecDeque::new(),
            fallback,
            required_token: None,
            received: vec![],
        }));
        let shutdown = Arc::new(AtomicBool::new(false));
        let handle = {
            let state = state.clone();
            let shutdown = shutdown.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(stream) = stream {
                        let state = state.clone();
                        std::thread::spawn(move || {
                            let _ = serve(stream, &state);
                        });
                    }
                }
            })
        };
        Ok(Self { addr, state, shutdown, handle: Some(handle) })
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Queues replies served before the fallback, in order.
    pub fn enqueue(&self, replies: impl IntoIterator<Item = StubReply>) {
        self.state.lock().unwrap().queue.extend(replies);
    }

    /// Requests without `Authorization: Bearer <token>` get a 401.
    pub fn require_token(&self, token: &str) {
        self.state.lock().unwrap().required_token = Some(token.into());
    }

    pub fn requests(&self) -> Vec<ReceivedRequest> {
        self.state.lock().unwrap().received.clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn serve(stream: TcpStream, state: &Mutex<StubState>) -> io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut content_length = 0usize;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" || line == "\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let value = value.trim().to_string();
            match name.trim().to_ascii_lowercase().as_str() {
                "content-length" => content_length = value.parse().unwrap_or(0),
                "authorization" => authorization = Some(value),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();
    let messages_hash = serde_json::from_str::<Body>(&body).ok().map(|b| request_hash(&b.messages));

    let reply = {
        let mut st = state.lock().unwrap();
        st.received.push(ReceivedRequest {
            path,
            body,
            authorization: authorization.clone(),
            messages_hash,
            received_at: Instant::now(),
        });
        let authorized = match &st.required_token {
            Some(t) => authorization.as_deref() == Some(format!("Bearer {t}").as_str()),
            None => true,
        };
        if authorized {
            st.queue.pop_front().unwrap_or_else(|| st.fallback.clone())
        } else {
            StubReply::status(401)
        }
    };
    if let Some(d) = reply.delay {
        std::thread::sleep(d);
    }
    let mut out = stream;
    let mut head = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        reply.status,
        reason(reply.status),
        reply.body.len()
    );
    for (k, v) in &reply.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    out.write_all(head.as_bytes())?;
    out.write_all(reply.body.as_bytes())?;
    out.flush()
}
