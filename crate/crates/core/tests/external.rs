//! External backend over a real Unix socket, served in-process.

use std::os::unix::net::UnixListener;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use panovid_core::backends::external::{read_message, write_message, Header, Message};
use panovid_core::backends::server::{serve, serve_connection};
use panovid_core::backends::{
    Backend, BackendDescriptor, DiffusionMock, Endpoint, ExternalBackend, Flavor, InterpolationBackend, TokenMock,
};
use panovid_core::complete::{complete_base, PassKey};
use panovid_core::config::PipelineConfig;
use panovid_core::{Mask, Video};

fn gaussian_descriptor() -> BackendDescriptor {
    BackendDescriptor {
        context_frames: 4,
        native_height: 8,
        native_width: 16,
        sampling_steps: 6,
        ..BackendDescriptor::gaussian_default()
    }
}

fn token_descriptor() -> BackendDescriptor {
    BackendDescriptor {
        context_frames: 4,
        native_height: 8,
        native_width: 16,
        vocabulary_size: 16,
        patch_size: 4,
        ..BackendDescriptor::token_default()
    }
}

fn config(flavor: Flavor) -> PipelineConfig {
    PipelineConfig {
        spatial_stride: 8,
        temporal_overlap: 2,
        ..PipelineConfig::defaults_for(flavor)
    }
}

fn scene(n: usize, h: usize, w: usize) -> Video {
    Video::from_fn(n, h, w, 15.0, |t, y, x| {
        let v = 0.5 + 0.3 * ((x as f32 * 0.3 + t as f32 * 0.2).sin() * (y as f32 * 0.2).cos());
        [v, 1.0 - v, 0.25 + 0.5 * (x as f32 / w as f32)]
    })
}

fn pan_mask(n: usize, h: usize, w: usize) -> Mask {
    Mask::from_fn(n, h, w, |t, _, x| (t * 3..t * 3 + 16).contains(&x))
}

fn key() -> PassKey {
    PassKey { level: 0, pass: 0, seed: 4 }
}

/// The server gets its own pool: client workers block on the socket, so a
/// shared global pool could starve it.
fn spawn_server(backend: Backend, path: &Path, connections: usize) -> JoinHandle<()> {
    let listener = UnixListener::bind(path).unwrap();
    std::thread::spawn(move || {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        pool.install(|| serve(&backend, &listener, Some(connections))).unwrap()
    })
}

fn connect(path: &Path) -> Arc<ExternalBackend> {
    Arc::new(ExternalBackend::connect(Endpoint::Socket(path.to_path_buf()), Duration::from_secs(10)).unwrap())
}

#[test]
fn gaussian_over_socket_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("g.sock");
    let (x, m) = (scene(6, 8, 32), pan_mask(6, 8, 32));
    let local = Backend::Gaussian(Arc::new(DiffusionMock::new(gaussian_descriptor())));
    let server = spawn_server(local.clone(), &sock, 1);
    let remote = connect(&sock);
    assert_eq!(remote.descriptor(), &gaussian_descriptor());
    let cfg = config(Flavor::Gaussian);
    let a = complete_base(&x, &m, &local, &cfg, key()).unwrap();
    let b = complete_base(&x, &m, &Backend::Gaussian(remote), &cfg, key()).unwrap();
    assert_eq!(a, b);
    server.join().unwrap();
}

#[test]
fn token_over_socket_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("t.sock");
    let (x, m) = (scene(6, 8, 32), pan_mask(6, 8, 32));
    let mock = TokenMock::fit(token_descriptor(), &x, &m, 2).unwrap();
    let local = Backend::Token(Arc::new(mock));
    let server = spawn_server(local.clone(), &sock, 1);
    let remote = connect(&sock);
    let cfg = config(Flavor::Token);
    let a = complete_base(&x, &m, &local, &cfg, key()).unwrap();
    let b = complete_base(&x, &m, &Backend::Token(remote), &cfg, key()).unwrap();
    assert_eq!(a, b);
    server.join().unwrap();
}

/// Answers the handshake, then hangs up on the first `drops` requests
/// (one per connection) before serving normally.
fn flaky_server(backend: Backend, path: &Path, drops: usize) -> JoinHandle<()> {
    let listener = UnixListener::bind(path).unwrap();
    std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let hello = read_message(&mut s).unwrap();
        assert_eq!(hello.header.op, "hello");
        let mut h = Header::new("hello");
        h.descriptor = Some(backend.descriptor().clone());
        write_message(&mut s, &Message::new(h, vec![])).unwrap();
        let _ = read_message(&mut s);
        drop(s);
        for _ in 1..drops {
            let (mut s, _) = listener.accept().unwrap();
            let _ = read_message(&mut s);
        }
        if let Ok((s, _)) = listener.accept() {
            let _ = serve_connection(&backend, s);
        }
    })
}

#[test]
fn dropped_connection_is_retried() {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("f.sock");
    let (x, m) = (scene(4, 8, 16), pan_mask(4, 8, 16));
    let local = Backend::Gaussian(Arc::new(InterpolationBackend::new(gaussian_descriptor(), 0.0)));
    let server = flaky_server(local.clone(), &sock, 1);
    let remote = Backend::Gaussian(connect(&sock));
    let cfg = config(Flavor::Gaussian);
    let a = complete_base(&x, &m, &remote, &cfg, key()).unwrap();
    assert_eq!(a, complete_base(&x, &m, &local, &cfg, key()).unwrap());
    drop(remote);
    server.join().unwrap();
}

#[test]
fn repeated_drops_are_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("d.sock");
    let (x, m) = (scene(4, 8, 16), pan_mask(4, 8, 16));
    let local = Backend::Gaussian(Arc::new(InterpolationBackend::new(gaussian_descriptor(), 0.0)));
    let server = flaky_server(local, &sock, 2);
    let remote = Backend::Gaussian(connect(&sock));
    let err = complete_base(&x, &m, &remote, &config(Flavor::Gaussian), key()).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
    drop(remote);
    // unblock the final accept
    let _ = std::os::unix::net::UnixStream::connect(&sock);
    server.join().unwrap();
}

#[test]
fn server_errors_surface() {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("e.sock");
    let local = Backend::Gaussian(Arc::new(InterpolationBackend::new(gaussian_descriptor(), 0.0)));
    let server = spawn_server(local, &sock, 1);
    let remote = connect(&sock);
    let err = remote.call(Message::new(Header::new("token_encode"), vec![])).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("server error"), "{err}");
    drop(remote);
    server.join().unwrap();
}

#[test]
fn missing_socket_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let err = ExternalBackend::connect(Endpoint::Socket(dir.path().join("none.sock")), Duration::from_millis(100))
        .err()
        .unwrap();
    assert_eq!(err.exit_code(), 4);
}
