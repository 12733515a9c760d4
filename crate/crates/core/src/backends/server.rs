//! Serves an in-process backend over the external socket protocol.
//!
//! Useful for testing the client and as a template for model servers. The
//! protocol does not carry canvas placement, so requests are rebuilt with
//! window-local frame indices; backends that look at `frames` or `canvas`
//! (the oracle) see window coordinates only.

use std::io;
use std::os::unix::net::{UnixListener, UnixStream};

use crate::backends::external::{read_message, write_message, Header, Message, API_VERSION};
use crate::backends::{Backend, NoiseSchedule, TokenGrid, WindowRequest};
use crate::video::{Mask, Video};

fn error_reply(op: &str, e: impl std::fmt::Display) -> Message {
    let mut h = Header::new(op);
    h.error = Some(e.to_string());
    Message::new(h, vec![])
}

fn shape(h: &Header) -> Result<[usize; 3], String> {
    h.window_shape.ok_or_else(|| "missing window_shape".to_string())
}

fn handle(backend: &Backend, req: &Message) -> Result<Message, String> {
    let h = &req.header;
    if h.api_version != API_VERSION {
        return Err(format!("api version {} not supported", h.api_version));
    }
    let d = backend.descriptor();
    let payload = |i: usize| req.payloads.get(i).ok_or_else(|| format!("missing payload {i}"));
    let mut reply = Header::new(&h.op);
    match (h.op.as_str(), backend) {
        ("hello", _) => {
            reply.descriptor = Some(d.clone());
            reply.flavor = Some(d.flavor);
            reply.concurrent = Some(false);
            Ok(Message::new(reply, vec![]))
        }
        ("gaussian_predict", Backend::Gaussian(b)) => {
            let [n, hh, w] = shape(h)?;
            let observed = Video::from_data(n, hh, w, 1.0, payload(0)?.clone()).map_err(|e| e.to_string())?;
            let pinned = Mask::from_data(n, hh, w, payload(1)?.iter().map(|&v| v != 0.0).collect()).map_err(|e| e.to_string())?;
            let state = match req.payloads.get(2) {
                Some(s) => Some(Video::from_data(n, hh, w, 1.0, s.clone()).map_err(|e| e.to_string())?),
                None => None,
            };
            let noise = NoiseSchedule::linear(d.sampling_steps.max(1));
            let frames: Vec<usize> = (0..n).collect();
            let t = h.t.unwrap_or(1);
            let field = b
                .predict(&WindowRequest {
                    level: h.level.unwrap_or(0),
                    level_frames: n,
                    frames: &frames,
                    x0: h.x0.unwrap_or(0),
                    canvas: (hh, w),
                    observed: &observed,
                    pinned: &pinned,
                    state: state.as_ref(),
                    step: h.step.unwrap_or(0),
                    t,
                    noise: &noise,
                    time_reversed: h.time_reversed.unwrap_or(false),
                    seed: h.seed.unwrap_or(0),
                })
                .map_err(|e| e.to_string())?;
            let mut payloads = vec![field.mu];
            payloads.extend(field.sigma);
            Ok(Message::new(reply, payloads))
        }
        ("token_encode", Backend::Token(b)) => {
            let [n, hh, w] = shape(h)?;
            let v = Video::from_data(n, hh, w, 1.0, payload(0)?.clone()).map_err(|e| e.to_string())?;
            let g = b.encode(&v).map_err(|e| e.to_string())?;
            Ok(Message::new(reply, vec![g.tokens.iter().map(|&z| z as f32).collect()]))
        }
        ("token_decode", Backend::Token(b)) => {
            let [n, hh, w] = shape(h)?;
            let grid = TokenGrid {
                frames: n,
                height: hh,
                width: w,
                tokens: payload(0)?.iter().map(|&z| z as u32).collect(),
            };
            let v = b.decode(&grid, 1.0).map_err(|e| e.to_string())?;
            Ok(Message::new(reply, vec![v.into_data()]))
        }
        ("token_predict", Backend::Token(b)) => {
            let [n, hh, w] = shape(h)?;
            let grid = TokenGrid {
                frames: n,
                height: hh,
                width: w,
                tokens: payload(0)?.iter().map(|&z| z as u32).collect(),
            };
            let known: Vec<bool> = payload(1)?.iter().map(|&v| v != 0.0).collect();
            let f = b.predict(&grid, &known).map_err(|e| e.to_string())?;
            Ok(Message::new(reply, vec![f.probs]))
        }
        (op, _) => Err(format!("unsupported op '{op}' for a {} backend", d.flavor)),
    }
}

/// Answers requests on one connection until the peer hangs up.
pub fn serve_connection(backend: &Backend, mut stream: UnixStream) -> io::Result<()> {
    loop {
        let req = match read_message(&mut stream) {
            Ok(r) => r,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        let reply = handle(backend, &req).unwrap_or_else(|e| error_reply(&req.header.op, e));
        write_message(&mut stream, &reply)?;
    }
}

/// Accepts connections one at a time; returns after `max_connections` when
/// given, otherwise runs until the listener fails.
pub fn serve(backend: &Backend, listener: &UnixListener, max_connections: Option<usize>) -> io::Result<()> {
    let mut served = 0;
    while max_connections.is_none_or(|m| served < m) {
        let (stream, _) = listener.accept()?;
        if let Err(e) = serve_connection(backend, stream) {
            log::warn!("connection ended: {e}");
        }
        served += 1;
    }
    Ok(())
}
