//! Bridge to a backend running in another process.
//!
//! Messages are a little-endian `u32` header length, a JSON [`Header`], then
//! one raw little-endian `f32` tensor per entry of `header.payloads` (element
//! counts). Token indices and mask flags travel as floats. The client opens a
//! Unix socket, either given directly or exported to a spawned command as
//! `PANOVID_SOCKET`, and starts with a `hello` handshake that returns the
//! backend descriptor.

use std::io::{Read, Write};
use std::os::unix::net::UnixStream;
use std::path::PathBuf;
use std::process::{Child, Command};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::backends::{
    BackendDescriptor, CategoricalField, Flavor, GaussianBackend, GaussianField, TokenBackend, TokenGrid,
    WindowRequest,
};
use crate::error::{Error, Result};
use crate::video::Video;

pub const API_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
const MAX_HEADER: usize = 1 << 20;
const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub api_version: u32,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flavor: Option<Flavor>,
    /// `[frames, height, width]` of the window or token grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_shape: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_reversed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<BackendDescriptor>,
    /// Whether the server accepts concurrent requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concurrent: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub payloads: Vec<usize>,
}

impl Header {
    pub fn new(op: &str) -> Self {
        Header {
            api_version: API_VERSION,
            op: op.to_string(),
            ..Header::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub header: Header,
    pub payloads: Vec<Vec<f32>>,
}

impl Message {
    pub fn new(mut header: Header, payloads: Vec<Vec<f32>>) -> Self {
        header.payloads = payloads.iter().map(Vec::len).collect();
        Message { header, payloads }
    }
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> std::io::Result<()> {
    let json = serde_json::to_vec(&msg.header)?;
    let mut buf = Vec::with_capacity(4 + json.len() + msg.payloads.iter().map(|p| p.len() * 4).sum::<usize>());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &msg.payloads {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn read_message(r: &mut impl Read) -> std::io::Result<Message> {
    let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_HEADER {
        return Err(invalid(format!("header of {len} bytes")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| invalid(format!("malformed header: {e}")))?;
    let mut payloads = Vec::with_capacity(header.payloads.len());
    for &n in &header.payloads {
        if n > MAX_PAYLOAD {
            return Err(invalid(format!("payload of {n} values")));
        }
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        payloads.push(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect());
    }
    Ok(Message { header, payloads })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Socket(PathBuf),
    /// Spawned with `PANOVID_SOCKET` set to `socket`, which it must listen on.
    Command {
        program: String,
        args: Vec<String>,
        socket: PathBuf,
    },
}

struct Connection {
    stream: Option<UnixStream>,
    child: Option<Child>,
}

/// A backend served by another process over a Unix socket.
pub struct ExternalBackend {
    endpoint: Endpoint,
    timeout: Duration,
    retries: usize,
    descriptor: BackendDescriptor,
    conn: Mutex<Connection>,
}

fn backend_err(context: &str, e: impl std::fmt::Display) -> Error {
    Error::Backend(format!("{context}: {e}"))
}

impl ExternalBackend {
    /// The descriptor reported by the server at handshake.
    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    pub fn connect(endpoint: Endpoint, timeout: Duration) -> Result<Self> {
        let mut conn = Connection {
            stream: None,
            child: None,
        };
        if let Endpoint::Command { program, args, socket } = &endpoint {
            let child = Command::new(program)
                .args(args)
                .env("PANOVID_SOCKET", socket)
                .spawn()
                .map_err(|e| backend_err(&format!("cannot start '{program}'"), e))?;
            conn.child = Some(child);
        }
        let mut backend = ExternalBackend {
            endpoint,
            timeout,
            retries: 1,
            descriptor: BackendDescriptor::gaussian_default(),
            conn: Mutex::new(conn),
        };
        let reply = backend.call(Message::new(Header::new("hello"), vec![]))?;
        backend.descriptor = reply
            .header
            .descriptor
            .ok_or_else(|| Error::Backend("handshake reply lacks a descriptor".into()))?;
        backend.descriptor.validate()?;
        Ok(backend)
    }

    fn open(&self) -> Result<UnixStream> {
        let path = match &self.endpoint {
            Endpoint::Socket(p) => p,
            Endpoint::Command { socket, .. } => socket,
        };
        let deadline = Instant::now() + self.timeout;
        let stream = loop {
            match UnixStream::connect(path) {
                Ok(s) => break s,
                Err(e) if Instant::now() >= deadline => {
                    return Err(backend_err(&format!("cannot connect to {}", path.display()), e))
                }
                Err(_) => std::thread::sleep(Duration::from_millis(20)),
            }
        };
        stream
            .set_read_timeout(Some(self.timeout))
            .and_then(|_| stream.set_write_timeout(Some(self.timeout)))
            .map_err(|e| backend_err("socket setup", e))?;
        Ok(stream)
    }

    fn exchange(&self, conn: &mut Connection, msg: &Message) -> std::io::Result<Message> {
        if conn.stream.is_none() {
            conn.stream = Some(self.open().map_err(std::io::Error::other)?);
        }
        let stream = conn.stream.as_mut().expect("connected");
        write_message(stream, msg)?;
        read_message(stream)
    }

    /// Sends one request, reconnecting on transport failure.
    pub fn call(&self, msg: Message) -> Result<Message> {
        let mut conn = self.conn.lock().map_err(|_| Error::Backend("connection lock poisoned".into()))?;
        let mut attempt = 0;
        let reply = loop {
            match self.exchange(&mut conn, &msg) {
                Ok(r) => break r,
                Err(e) => {
                    conn.stream = None;
                    if attempt >= self.retries || e.kind() == std::io::ErrorKind::InvalidData {
                        return Err(backend_err(&format!("'{}' request failed", msg.header.op), e));
                    }
                    warn!("backend request '{}' failed ({e}); reconnecting", msg.header.op);
                    attempt += 1;
                }
            }
        };
        if reply.header.api_version != API_VERSION {
            return Err(Error::Backend(format!(
                "handshake error: server speaks api version {}, client {API_VERSION}",
                reply.header.api_version
            )));
        }
        if let Some(e) = reply.header.error {
            return Err(Error::Backend(format!("server error: {e}")));
        }
        if reply.header.payloads.len() != reply.payloads.len() {
            return Err(Error::Backend("reply payload count mismatch".into()));
        }
        Ok(reply)
    }

    fn expect(reply: &Message, count: usize, len: usize) -> Result<()> {
        if reply.payloads.len() < count || reply.payloads[..count].iter().any(|p| p.len() != len) {
            return Err(Error::Backend(format!(
                "malformed reply to '{}': expected {count} payloads of {len} values",
                reply.header.op
            )));
        }
        Ok(())
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            conn.stream = None;
            if let Some(child) = &mut conn.child {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

fn flags(v: &[bool]) -> Vec<f32> {
    v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

impl GaussianBackend for ExternalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict(&self, req: &WindowRequest<'_>) -> Result<GaussianField> {
        let (n, h, w) = req.observed.dims();
        let mut header = Header::new("gaussian_predict");
        header.flavor = Some(Flavor::Gaussian);
        header.window_shape = Some([n, h, w]);
        header.step = Some(req.step);
        header.t = Some(req.t);
        header.alpha_bar = Some(req.noise.alpha_bar(req.t));
        header.seed = Some(req.seed);
        header.level = Some(req.level);
        header.x0 = Some(req.x0);
        header.time_reversed = Some(req.time_reversed);
        let mut payloads = vec![req.observed.data().to_vec(), flags(req.pinned.data())];
        if let Some(s) = req.state {
            payloads.push(s.data().to_vec());
        }
        let reply = self.call(Message::new(header, payloads))?;
        let len = n * h * w * 3;
        Self::expect(&reply, 1, len)?;
        let mut p = reply.payloads.into_iter();
        let mu = p.next().expect("checked");
        let sigma = p.next();
        if sigma.as_ref().is_some_and(|s| s.len() != len) {
            return Err(Error::Backend("variance payload has the wrong length".into()));
        }
        Ok(GaussianField {
            frames: n,
            height: h,
            width: w,
            mu,
            sigma,
        })
    }
}

impl TokenBackend for ExternalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode(&self, window: &Video) -> Result<TokenGrid> {
        let (n, h, w) = window.dims();
        let (p, g) = (self.descriptor.patch_size, self.descriptor.token_frames);
        let mut header = Header::new("token_encode");
        header.flavor = Some(Flavor::Token);
        header.window_shape = Some([n, h, w]);
        let reply = self.call(Message::new(header, vec![window.data().to_vec()]))?;
        let (tn, th, tw) = (n / g, h / p, w / p);
        Self::expect(&reply, 1, tn * th * tw)?;
        let v = self.descriptor.vocabulary_size as f32;
        let raw = &reply.payloads[0];
        if raw.iter().any(|&z| z < 0.0 || z >= v || z.fract() != 0.0) {
            return Err(Error::Backend("encoded token outside the vocabulary".into()));
        }
        Ok(TokenGrid {
            frames: tn,
            height: th,
            width: tw,
            tokens: raw.iter().map(|&z| z as u32).collect(),
        })
    }

    fn decode(&self, tokens: &TokenGrid, frame_rate: f64) -> Result<Video> {
        let (p, g) = (self.descriptor.patch_size, self.descriptor.token_frames);
        let mut header = Header::new("token_decode");
        header.flavor = Some(Flavor::Token);
        header.window_shape = Some([tokens.frames, tokens.height, tokens.width]);
        let reply = self.call(Message::new(header, vec![tokens.tokens.iter().map(|&z| z as f32).collect()]))?;
        let (n, h, w) = (tokens.frames * g, tokens.height * p, tokens.width * p);
        Self::expect(&reply, 1, n * h * w * 3)?;
        Video::from_data(n, h, w, frame_rate, reply.payloads.into_iter().next().expect("checked"))
    }

    fn predict(&self, tokens: &TokenGrid, known: &[bool]) -> Result<CategoricalField> {
        let mut header = Header::new("token_predict");
        header.flavor = Some(Flavor::Token);
        header.window_shape = Some([tokens.frames, tokens.height, tokens.width]);
        let payloads = vec![tokens.tokens.iter().map(|&z| z as f32).collect(), flags(known)];
        let reply = self.call(Message::new(header, payloads))?;
        let v = self.descriptor.vocabulary_size;
        Self::expect(&reply, 1, tokens.len() * v)?;
        let field = CategoricalField {
            frames: tokens.frames,
            height: tokens.height,
            width: tokens.width,
            vocab: v,
            probs: reply.payloads.into_iter().next().expect("checked"),
            committed: None,
        };
        field.check().map_err(|e| Error::Backend(format!("malformed reply: {e}")))?;
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::net::UnixListener;

    #[test]
    fn message_round_trip() {
        let mut h = Header::new("gaussian_predict");
        h.step = Some(3);
        let msg = Message::new(h, vec![vec![1.0, -2.5], vec![]]);
        let mut buf = Vec::new();
        write_message(&mut buf, &msg).unwrap();
        assert_eq!(read_message(&mut buf.as_slice()).unwrap(), msg);
    }

    #[test]
    fn truncated_message_is_error() {
        let msg = Message::new(Header::new("x"), vec![vec![1.0; 4]]);
        let mut buf = Vec::new();
        write_message(&mut buf, &msg).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_message(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn version_mismatch_is_handshake_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.sock");
        let listener = UnixListener::bind(&path).unwrap();
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let _ = read_message(&mut s).unwrap();
            let mut h = Header::new("hello");
            h.api_version = 99;
            write_message(&mut s, &Message::new(h, vec![])).unwrap();
        });
        let err = ExternalBackend::connect(Endpoint::Socket(path), Duration::from_secs(5))
            .err()
            .unwrap();
        assert!(err.to_string().contains("handshake"), "{err}");
        server.join().unwrap();
    }
}
