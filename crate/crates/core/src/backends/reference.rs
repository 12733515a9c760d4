//! Reference gaussian-flavor backends.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::backends::{BackendDescriptor, GaussianBackend, GaussianField, WindowRequest};
use crate::error::{Error, Result};
use crate::pyramid::{box_filter, level_windows};
use crate::video::{resize_video, Mask, Video, CHANNELS};

/// Replays ground truth: each level is the ground truth box-filtered with the
/// pyramid's windows and resized to the working canvas. A point mass.
pub struct OracleBackend {
    descriptor: BackendDescriptor,
    truth: Video,
    cache: Mutex<HashMap<(usize, usize, usize, bool), Arc<Video>>>,
}

impl OracleBackend {
    /// `truth` is the full-resolution level-0 canvas video.
    pub fn new(descriptor: BackendDescriptor, truth: Video) -> Self {
        OracleBackend {
            descriptor,
            truth,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn level(&self, frames: usize, h: usize, w: usize, reversed: bool) -> Result<Arc<Video>> {
        let key = (frames, h, w, reversed);
        if let Some(v) = self.cache.lock().expect("oracle cache").get(&key) {
            return Ok(v.clone());
        }
        let n0 = self.truth.frames();
        if frames > n0 {
            return Err(Error::Contract(format!(
                "oracle holds {n0} frames, level asks for {frames}"
            )));
        }
        let filtered = if frames == n0 {
            self.truth.clone()
        } else {
            let all = Mask::new(n0, self.truth.height(), self.truth.width(), true);
            box_filter(&self.truth, &all, &level_windows(n0, frames))
        };
        let mut v = resize_video(&filtered, h, w);
        if reversed {
            v = v.reversed();
        }
        let v = Arc::new(v);
        self.cache.lock().expect("oracle cache").insert(key, v.clone());
        Ok(v)
    }
}

impl GaussianBackend for OracleBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn uses_state(&self) -> bool {
        false
    }

    fn predict(&self, req: &WindowRequest<'_>) -> Result<GaussianField> {
        let (h, w) = req.canvas;
        let level = self.level(req.level_frames, h, w, req.time_reversed)?;
        Ok(GaussianField::point_mass(&level.window(req.frames, req.x0, self.descriptor.native_width)))
    }
}

/// Per-pixel linear interpolation in time between the closest pinned frames
/// before and after, copying the nearest one at the window ends. Pixels never
/// pinned in the window take the mean of all pinned samples (or mid-gray).
pub fn interpolate_in_time(observed: &Video, pinned: &Mask) -> Video {
    let (n, h, w) = observed.dims();
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for (i, &m) in pinned.data().iter().enumerate() {
        if m {
            count += 1;
            for (c, s) in sum.iter_mut().enumerate() {
                *s += observed.data()[i * CHANNELS + c] as f64;
            }
        }
    }
    let fallback = if count > 0 {
        sum.map(|s| (s / count as f64) as f32)
    } else {
        [0.5; 3]
    };
    let mut out = observed.clone();
    let mut known = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            known.clear();
            known.extend((0..n).filter(|&t| pinned.get(t, y, x)));
            if known.len() == n {
                continue;
            }
            let mut k = 0;
            for t in 0..n {
                while k < known.len() && known[k] < t {
                    k += 1;
                }
                if k < known.len() && known[k] == t {
                    continue;
                }
                let before = k.checked_sub(1).map(|i| known[i]);
                let after = known.get(k).copied();
                let v = match (before, after) {
                    (Some(a), Some(b)) => {
                        let f = (t - a) as f32 / (b - a) as f32;
                        let (pa, pb) = (observed.pixel(a, y, x), observed.pixel(b, y, x));
                        [0, 1, 2].map(|c| pa[c] + (pb[c] - pa[c]) * f)
                    }
                    (Some(a), None) => observed.pixel(a, y, x),
                    (None, Some(b)) => observed.pixel(b, y, x),
                    (None, None) => fallback,
                };
                out.set_pixel(t, y, x, v);
            }
        }
    }
    out
}

/// The interpolation baseline as a generative backend: the mean is
/// [`interpolate_in_time`] over the pinned pixels and the variance is a
/// constant `sigma0^2` until the final step, which is a point estimate.
pub struct InterpolationBackend {
    descriptor: BackendDescriptor,
    variance: f32,
}

impl InterpolationBackend {
    pub fn new(descriptor: BackendDescriptor, sigma0: f32) -> Self {
        InterpolationBackend {
            descriptor,
            variance: sigma0 * sigma0,
        }
    }
}

impl GaussianBackend for InterpolationBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn uses_state(&self) -> bool {
        false
    }

    fn predict(&self, req: &WindowRequest<'_>) -> Result<GaussianField> {
        let mut f = GaussianField::point_mass(&interpolate_in_time(req.observed, req.pinned));
        if req.t > 1 && self.variance > 0.0 {
            f.sigma = Some(vec![self.variance; f.len()]);
        }
        Ok(f)
    }
}

/// Closed-form denoiser for a per-pixel Gaussian prior `N(target, s^2)`
/// centered on the temporal interpolation of the pinned pixels. The clean
/// estimate is the exact posterior mean of `x0` given `x_t`, and the
/// prediction is the DDPM posterior given that estimate.
pub struct DiffusionMock {
    descriptor: BackendDescriptor,
    prior_variance: f64,
}

impl DiffusionMock {
    pub fn new(descriptor: BackendDescriptor) -> Self {
        Self::with_prior_std(descriptor, 0.05)
    }

    pub fn with_prior_std(descriptor: BackendDescriptor, std: f64) -> Self {
        DiffusionMock {
            descriptor,
            prior_variance: std * std,
        }
    }
}

impl GaussianBackend for DiffusionMock {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn predict(&self, req: &WindowRequest<'_>) -> Result<GaussianField> {
        let state = req
            .state
            .ok_or_else(|| Error::Contract("diffusion mock needs the noisy state".into()))?;
        let target = interpolate_in_time(req.observed, req.pinned);
        let ab = req.noise.alpha_bar(req.t);
        let s2 = self.prior_variance;
        // E[x0 | x_t] = target + gain * (x_t - sqrt(ab) * target)
        let gain = (s2 * ab.sqrt() / (ab * s2 + 1.0 - ab)) as f32;
        let sab = ab.sqrt() as f32;
        let (c1, c2, var) = req.noise.posterior(req.t);
        let (c1, c2) = (c1 as f32, c2 as f32);
        let mu = target
            .data()
            .iter()
            .zip(state.data())
            .map(|(&m, &xt)| {
                let x0 = m + gain * (xt - sab * m);
                c1 * x0 + c2 * xt
            })
            .collect::<Vec<_>>();
        let n = mu.len();
        Ok(GaussianField {
            frames: target.frames(),
            height: target.height(),
            width: target.width(),
            mu,
            sigma: (var > 0.0).then(|| vec![var as f32; n]),
        })
    }
}

/// Predicts the same `(mu, sigma^2)` everywhere.
pub struct ConstantBackend {
    descriptor: BackendDescriptor,
    mu: f32,
    variance: f32,
}

impl ConstantBackend {
    pub fn new(descriptor: BackendDescriptor, mu: f32, variance: f32) -> Self {
        ConstantBackend {
            descriptor,
            mu,
            variance,
        }
    }
}

impl GaussianBackend for ConstantBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn uses_state(&self) -> bool {
        false
    }

    fn predict(&self, req: &WindowRequest<'_>) -> Result<GaussianField> {
        let len = req.frames.len() * self.descriptor.native_height * self.descriptor.native_width * CHANNELS;
        Ok(GaussianField {
            frames: req.frames.len(),
            height: self.descriptor.native_height,
            width: self.descriptor.native_width,
            mu: vec![self.mu; len],
            sigma: (self.variance > 0.0).then(|| vec![self.variance; len]),
        })
    }
}
