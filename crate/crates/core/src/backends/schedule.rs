//! Noise and mask schedules for iterative sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::Mask;

/// Linear-beta DDPM schedule. Betas are scaled by `1000 / T` so that short
/// schedules still end near pure noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize) -> Self {
        let steps = steps.max(1);
        let scale = 1000.0 / steps as f64;
        let (start, end) = ((1e-4 * scale).min(0.999), (0.02 * scale).min(0.999));
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    end
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let last = *alpha_bars.last().unwrap();
            alpha_bars.push(last * (1.0 - b));
        }
        NoiseSchedule { betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Coefficients of the posterior mean `c1 * x0 + c2 * x_t` and the
    /// posterior variance of `q(x_{t-1} | x_t, x0)`.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let ab_t = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let c1 = ab_prev.sqrt() * beta / (1.0 - ab_t);
        let c2 = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
        (c1, c2, var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    #[default]
    Standard,
    FastMotion,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(MaskMode::Standard),
            "fast-motion" => Ok(MaskMode::FastMotion),
            other => Err(Error::Config(format!("unknown mask mode '{other}'"))),
        }
    }
}

/// Which pixels are pinned to the observed content at each sampling step.
///
/// Frames flagged `full_frame` are pinned everywhere for the first
/// `full_frame_steps` steps; all other pixels follow `base` throughout.
#[derive(Debug, Clone)]
pub struct MaskSchedule {
    steps: usize,
    full_frame_steps: usize,
    full_frame: Vec<bool>,
    early: Mask,
    late: Mask,
}

impl MaskSchedule {
    pub fn new(base: Mask, full_frame: Vec<bool>, full_frame_steps: usize, steps: usize) -> Result<Self> {
        if full_frame.len() != base.frames() {
            return Err(Error::Dimension(format!(
                "{} full-frame flags for {} frames",
                full_frame.len(),
                base.frames()
            )));
        }
        let mut early = base.clone();
        for (t, &f) in full_frame.iter().enumerate() {
            if f {
                early.frame_mut(t).iter_mut().for_each(|m| *m = true);
            }
        }
        Ok(MaskSchedule {
            steps,
            full_frame_steps: full_frame_steps.min(steps),
            full_frame,
            early,
            late: base,
        })
    }

    /// The same mask at every step.
    pub fn constant(mask: Mask, steps: usize) -> Self {
        let n = mask.frames();
        MaskSchedule::new(mask, vec![false; n], 0, steps).expect("flag count matches")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn full_frame_steps(&self) -> usize {
        self.full_frame_steps
    }

    pub fn full_frame(&self) -> &[bool] {
        &self.full_frame
    }

    pub fn frames(&self) -> usize {
        self.late.frames()
    }

    pub fn mask_at(&self, step: usize) -> &Mask {
        if step < self.full_frame_steps {
            &self.early
        } else {
            &self.late
        }
    }

    /// Mask pinned at the last step, which decides which samples equal the
    /// observed content exactly.
    pub fn final_mask(&self) -> &Mask {
        self.mask_at(self.steps.saturating_sub(1))
    }

    /// Restricts the schedule to a range of frames.
    pub fn select_frames(&self, frames: &[usize]) -> MaskSchedule {
        MaskSchedule {
            steps: self.steps,
            full_frame_steps: self.full_frame_steps,
            full_frame: frames.iter().map(|&t| self.full_frame[t]).collect(),
            early: self.early.select_frames(frames),
            late: self.late.select_frames(frames),
        }
    }

    pub fn reversed(&self) -> MaskSchedule {
        MaskSchedule {
            steps: self.steps,
            full_frame_steps: self.full_frame_steps,
            full_frame: self.full_frame.iter().rev().cloned().collect(),
            early: self.early.reversed(),
            late: self.late.reversed(),
        }
    }

    /// Applies a transform (crop, resize) to both materialized masks.
    pub fn map_masks(&self, f: impl Fn(&Mask) -> Mask) -> MaskSchedule {
        MaskSchedule {
            steps: self.steps,
            full_frame_steps: self.full_frame_steps,
            full_frame: self.full_frame.clone(),
            early: f(&self.early),
            late: f(&self.late),
        }
    }
}
