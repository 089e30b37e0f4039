//! Envelope delivery between agent endpoints.
//!
//! `MemoryTransport` keeps a FIFO inbox per endpoint. `SocketTransport` binds one
//! TCP listener per endpoint and accepts envelopes as HTTP `POST` bodies,
//! answering `202 Accepted` once the envelope is queued. Because `send` returns
//! only after that acknowledgement, delivery order is the same in both modes.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;
use thiserror::Error;

/// Largest envelope a socket endpoint accepts.
pub const MAX_BODY_BYTES: usize = 64 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("endpoint {0} is not reachable")]
    Unreachable(String),
    #[error("endpoint {0} is already bound")]
    AlreadyBound(String),
    #[error("endpoint {endpoint}: {reason}")]
    Io { endpoint: String, reason: String },
    #[error("endpoint {endpoint} answered {status}")]
    Rejected { endpoint: String, status: String },
}

pub trait Transport: Send + Sync {
    fn bind(&self, endpoint: &str) -> Result<(), TransportError>;
    fn send(&self, endpoint: &str, wire: Vec<u8>) -> Result<(), TransportError>;
    fn receive(&self, endpoint: &str) -> Option<Vec<u8>>;
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Default)]
pub struct MemoryTransport {
    inboxes: Mutex<BTreeMap<String, VecDeque<Vec<u8>>>>,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for MemoryTransport {
    fn bind(&self, endpoint: &str) -> Result<(), TransportError> {
        let mut inboxes = self.inboxes.lock().unwrap();
        if inboxes.contains_key(endpoint) {
            return Err(TransportError::AlreadyBound(endpoint.to_string()));
        }
        inboxes.insert(endpoint.to_string(), VecDeque::new());
        Ok(())
    }

    fn send(&self, endpoint: &str, wire: Vec<u8>) -> Result<(), TransportError> {
        self.inboxes
            .lock()
            .unwrap()
            .get_mut(endpoint)
            .ok_or_else(|| TransportError::Unreachable(endpoint.to_string()))?
            .push_back(wire);
        Ok(())
    }

    fn receive(&self, endpoint: &str) -> Option<Vec<u8>> {
        self.inboxes.lock().unwrap().get_mut(endpoint)?.pop_front()
    }

    fn kind(&self) -> &'static str {
        "mem"
    }
}

type Inbox = Arc<Mutex<VecDeque<Vec<u8>>>>;

struct Listener {
    addr: SocketAddr,
    inbox: Inbox,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

#[derive(Default)]
pub struct SocketTransport {
    listeners: Mutex<BTreeMap<String, Listener>>,
    timeout: Option<Duration>,
}

impl SocketTransport {
    pub fn new() -> Self {
        SocketTransport {
            listeners: Mutex::new(BTreeMap::new()),
            timeout: Some(Duration::from_secs(10)),
        }
    }
}

fn io_err(endpoint: &str, e: impl std::fmt::Display) -> TransportError {
    TransportError::Io {
        endpoint: endpoint.to_string(),
        reason: e.to_string(),
    }
}

/// Reads one HTTP/1.1 request and returns (method, body).
fn read_request(stream: &TcpStream) -> std::io::Result<(String, Vec<u8>)> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let method = line.split_whitespace().next().unwrap_or_default().to_string();
    let mut content_length = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let header = line.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value
                    .trim()
                    .parse()
                    .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad content-length"))?;
            }
        }
    }
    if content_length > MAX_BODY_BYTES {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "body too large"));
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    Ok((method, body))
}

fn serve(listener: TcpListener, inbox: Inbox, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(mut stream) = stream else { continue };
        let status = match read_request(&stream) {
            Ok((method, body)) if method == "POST" => {
                inbox.lock().unwrap().push_back(body);
                "202 Accepted"
            }
            Ok(_) => "405 Method Not Allowed",
            Err(_) => "400 Bad Request",
        };
        let _ = write!(stream, "HTTP/1.1 {status}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        let _ = stream.flush();
        let _ = stream.shutdown(Shutdown::Both);
    }
}

impl Transport for SocketTransport {
    fn bind(&self, endpoint: &str) -> Result<(), TransportError> {
        let mut listeners = self.listeners.lock().unwrap();
        if listeners.contains_key(endpoint) {
            return Err(TransportError::AlreadyBound(endpoint.to_string()));
        }
        let listener = TcpListener::bind(endpoint).map_err(|e| io_err(endpoint, e))?;
        let addr = listener.local_addr().map_err(|e| io_err(endpoint, e))?;
        let inbox: Inbox = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let (inbox, stop) = (inbox.clone(), stop.clone());
            std::thread::Builder::new()
                .name(format!("endpoint-{endpoint}"))
                .spawn(move || serve(listener, inbox, stop))
                .map_err(|e| io_err(endpoint, e))?
        };
        listeners.insert(
            endpoint.to_string(),
            Listener {
                addr,
                inbox,
                stop,
                handle: Some(handle),
            },
        );
        Ok(())
    }

    fn send(&self, endpoint: &str, wire: Vec<u8>) -> Result<(), TransportError> {
        let addr = endpoint
            .to_socket_addrs()
            .map_err(|_| TransportError::Unreachable(endpoint.to_string()))?
            .next()
            .ok_or_else(|| TransportError::Unreachable(endpoint.to_string()))?;
        let mut stream = match self.timeout {
            Some(t) => TcpStream::connect_timeout(&addr, t),
            None => TcpStream::connect(addr),
        }
        .map_err(|_| TransportError::Unreachable(endpoint.to_string()))?;
        stream.set_read_timeout(self.timeout).map_err(|e| io_err(endpoint, e))?;
        let head = format!(
            "POST /didcomm HTTP/1.1\r\nHost: {endpoint}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            wire.len()
        );
        stream.write_all(head.as_bytes()).map_err(|e| io_err(endpoint, e))?;
        stream.write_all(&wire).map_err(|e| io_err(endpoint, e))?;
        stream.flush().map_err(|e| io_err(endpoint, e))?;
        let mut status = String::new();
        BufReader::new(&stream)
            .read_line(&mut status)
            .map_err(|e| io_err(endpoint, e))?;
        let code = status.split_whitespace().nth(1).unwrap_or_default();
        if code != "202" {
            return Err(TransportError::Rejected {
                endpoint: endpoint.to_string(),
                status: status.trim().to_string(),
            });
        }
        Ok(())
    }

    fn receive(&self, endpoint: &str) -> Option<Vec<u8>> {
        let listeners = self.listeners.lock().unwrap();
        let inbox = listeners.get(endpoint)?.inbox.clone();
        drop(listeners);
        let mut queue = inbox.lock().unwrap();
        queue.pop_front()
    }

    fn kind(&self) -> &'static str {
        "socket"
    }
}

impl Drop for SocketTransport {
    fn drop(&mut self) {
        let mut listeners = self.listeners.lock().unwrap();
        for listener in listeners.values_mut() {
            listener.stop.store(true, Ordering::SeqCst);
            // wake the accept loop so it sees the flag
            let _ = TcpStream::connect_timeout(&listener.addr, Duration::from_millis(200));
            if let Some(handle) = listener.handle.take() {
                let _ = handle.join();
            }
        }
    }
}
