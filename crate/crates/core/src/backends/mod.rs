//! Generative backend contract and reference implementations.
//!
//! Two flavors exist. Gaussian-iterative backends predict, for each sampling
//! step, the mean and diagonal variance of the next (less noisy) state of a
//! window; the shared sampler in [`sampler`] averages those predictions over
//! overlapping windows and draws one canvas-wide sample. Token-categorical
//! backends encode windows to a token grid, predict categorical distributions
//! over masked tokens, and decode back to pixels.
//!
//! The reference backends need no model weights: an oracle that replays
//! ground truth, a per-pixel temporal interpolator, a closed-form denoiser,
//! a constant-field backend, a k-means token codec with a histogram predictor,
//! and a bridge to an external process.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{Mask, Video};

pub mod external;
pub mod reference;
pub mod sampler;
pub mod schedule;
pub mod server;
pub mod token;

pub use external::{Endpoint, ExternalBackend};
pub use reference::{ConstantBackend, DiffusionMock, InterpolationBackend, OracleBackend};
pub use sampler::{ddpm_sample, SamplerJob};
pub use schedule::{MaskMode, MaskSchedule, NoiseSchedule};
pub use token::{decode_canvas, derive_token_mask, encode_canvas, token_iterative_sample, TokenGrid, TokenMock, TokenPassKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    #[serde(rename = "gaussian-iterative")]
    Gaussian,
    #[serde(rename = "token-categorical")]
    Token,
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flavor::Gaussian => "gaussian-iterative",
            Flavor::Token => "token-categorical",
        })
    }
}

/// Static shape and sampling parameters of a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub flavor: Flavor,
    pub context_frames: usize,
    pub native_height: usize,
    pub native_width: usize,
    pub causal: bool,
    /// Sampling steps `T_s` (gaussian flavor).
    pub sampling_steps: usize,
    /// Vocabulary size `V` (token flavor).
    pub vocabulary_size: usize,
    /// Token patch edge `p` in pixels (token flavor).
    pub patch_size: usize,
    /// Frames per token (token flavor).
    pub token_frames: usize,
}

impl BackendDescriptor {
    /// 80 frames of 128x128, 256 steps per pass.
    pub fn gaussian_default() -> Self {
        BackendDescriptor {
            flavor: Flavor::Gaussian,
            context_frames: 80,
            native_height: 128,
            native_width: 128,
            causal: false,
            sampling_steps: 256,
            vocabulary_size: 0,
            patch_size: 1,
            token_frames: 1,
        }
    }

    /// 11 frames of 160x96 (width x height), causal.
    pub fn token_default() -> Self {
        BackendDescriptor {
            flavor: Flavor::Token,
            context_frames: 11,
            native_height: 96,
            native_width: 160,
            causal: true,
            sampling_steps: 1,
            vocabulary_size: 256,
            patch_size: 8,
            token_frames: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_frames < 2 {
            return Err(Error::Config(format!(
                "context window must hold at least 2 frames, got {}",
                self.context_frames
            )));
        }
        if self.native_height == 0 || self.native_width == 0 {
            return Err(Error::Config("native window dimensions must be positive".into()));
        }
        match self.flavor {
            Flavor::Gaussian if self.sampling_steps == 0 => {
                Err(Error::Config("gaussian backends need at least one sampling step".into()))
            }
            Flavor::Token => {
                if self.vocabulary_size < 2 {
                    return Err(Error::Config(format!(
                        "vocabulary size {} is below 2",
                        self.vocabulary_size
                    )));
                }
                let p = self.patch_size;
                if p == 0 || self.native_height % p != 0 || self.native_width % p != 0 {
                    return Err(Error::Config(format!(
                        "patch size {p} does not divide the native window {}x{}",
                        self.native_width, self.native_height
                    )));
                }
                let g = self.token_frames;
                if g == 0 || self.context_frames % g != 0 {
                    return Err(Error::Config(format!(
                        "token frame grouping {g} does not divide the context window {}",
                        self.context_frames
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Per-pixel mean and optional diagonal variance of a window volume.
/// Layouts match [`Video`]: frame, row, column, channel. A missing variance
/// means a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub mu: Vec<f32>,
    pub sigma: Option<Vec<f32>>,
}

impl GaussianField {
    pub fn point_mass(video: &Video) -> Self {
        GaussianField {
            frames: video.frames(),
            height: video.height(),
            width: video.width(),
            mu: video.data().to_vec(),
            sigma: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * 3
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the shape against `(frames, height, width)` and that every
    /// variance is non-negative and every value finite.
    pub fn check(&self, frames: usize, height: usize, width: usize) -> Result<()> {
        if (self.frames, self.height, self.width) != (frames, height, width) || self.mu.len() != self.len() {
            return Err(Error::Contract(format!(
                "field is {}x{}x{} ({} values), expected {frames}x{height}x{width}",
                self.frames,
                self.height,
                self.width,
                self.mu.len()
            )));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite mean".into()));
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.len() || s.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Contract("variance must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Categorical distributions over a token grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalField {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub vocab: usize,
    /// `vocab` probabilities per position.
    pub probs: Vec<f32>,
    pub committed: Option<Vec<u32>>,
}

impl CategoricalField {
    pub fn positions(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn distribution(&self, position: usize) -> &[f32] {
        &self.probs[position * self.vocab..(position + 1) * self.vocab]
    }

    pub fn check(&self) -> Result<()> {
        if self.probs.len() != self.positions() * self.vocab {
            return Err(Error::Contract("probability tensor has the wrong length".into()));
        }
        for (i, d) in self.probs.chunks_exact(self.vocab).enumerate() {
            let s: f32 = d.iter().sum();
            if (s - 1.0).abs() > 1e-4 || d.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::Contract(format!(
                    "distribution at position {i} sums to {s}"
                )));
            }
        }
        if let Some(c) = &self.committed {
            if c.len() != self.positions() || c.iter().any(|&z| z as usize >= self.vocab) {
                return Err(Error::Contract("committed token out of range".into()));
            }
        }
        Ok(())
    }
}

/// One window's prediction request for a gaussian backend.
#[derive(Debug, Clone, Copy)]
pub struct WindowRequest<'a> {
    pub level: usize,
    /// Frames in the level (after any time reversal, before padding).
    pub level_frames: usize,
    /// Level frame index of each window frame; padding repeats the last one.
    pub frames: &'a [usize],
    /// Canvas column of the window's left edge.
    pub x0: usize,
    /// Working canvas size `(height, width)`.
    pub canvas: (usize, usize),
    /// Observed content cropped to the window.
    pub observed: &'a Video,
    /// Pixels pinned to `observed` at this step.
    pub pinned: &'a Mask,
    /// Current noisy state `x_t` cropped to the window, when the backend uses it.
    pub state: Option<&'a Video>,
    /// Step index, counting from 0 at the noisiest step.
    pub step: usize,
    /// Diffusion time `t = T_s - step`.
    pub t: usize,
    pub noise: &'a NoiseSchedule,
    pub time_reversed: bool,
    pub seed: u64,
}

/// Predicts the distribution of `x_{t-1}` for one window.
pub trait GaussianBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Whether predictions read the noisy state. When they do not, only the
    /// final step can affect the sample and the sampler skips the rest.
    fn uses_state(&self) -> bool {
        true
    }

    fn predict(&self, request: &WindowRequest<'_>) -> Result<GaussianField>;
}

/// Encode, predict and decode over token grids.
pub trait TokenBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Tokenizes a window of `context_frames` frames at native size.
    fn encode(&self, window: &Video) -> Result<TokenGrid>;

    fn decode(&self, tokens: &TokenGrid, frame_rate: f64) -> Result<Video>;

    /// Distributions at every position; `known[i]` marks the conditioning
    /// tokens. Predictions at known positions are unspecified.
    fn predict(&self, tokens: &TokenGrid, known: &[bool]) -> Result<CategoricalField>;
}

#[derive(Clone)]
pub enum Backend {
    Gaussian(Arc<dyn GaussianBackend>),
    Token(Arc<dyn TokenBackend>),
}

impl Backend {
    pub fn descriptor(&self) -> &BackendDescriptor {
        match self {
            Backend::Gaussian(b) => b.descriptor(),
            Backend::Token(b) => b.descriptor(),
        }
    }
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Backend").field(self.descriptor()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_descriptors_validate() {
        BackendDescriptor::gaussian_default().validate().unwrap();
        BackendDescriptor::token_default().validate().unwrap();
    }

    #[test]
    fn bad_descriptors() {
        let mut d = BackendDescriptor::token_default();
        d.patch_size = 7;
        assert!(matches!(d.validate(), Err(Error::Config(_))));
        let mut d = BackendDescriptor::gaussian_default();
        d.context_frames = 1;
        assert!(d.validate().is_err());
        d.context_frames = 2;
        d.sampling_steps = 0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn negative_variance_is_contract_error() {
        let f = GaussianField {
            frames: 1,
            height: 1,
            width: 1,
            mu: vec![0.0; 3],
            sigma: Some(vec![0.1, -0.1, 0.0]),
        };
        assert!(matches!(f.check(1, 1, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn flavor_serde_names() {
        assert_eq!(serde_json::to_string(&Flavor::Token).unwrap(), "\"token-categorical\"");
    }
}
