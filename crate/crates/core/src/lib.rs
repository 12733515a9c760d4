//! Panoramic video completion.
//!
//! A casually panned video is registered onto an equirectangular canvas and
//! the unobserved space-time volume is filled by a temporal coarse-to-fine
//! driver that delegates synthesis to pluggable generative backends.

pub mod aggregate;
pub mod align;
pub mod backends;
pub mod bench;
pub mod c2f;
pub mod complete;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod job;
pub mod pyramid;
pub mod registration;
pub mod rng;
pub mod video;

pub use error::{Error, Result};
pub use video::{Mask, Video};
