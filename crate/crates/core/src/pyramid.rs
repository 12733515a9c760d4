//! Temporal pyramid with mask-normalized box prefiltering.
//!
//! Level `k` has `N^k = ceil(N^{k-1} / 2)` frames and stops at the first level
//! that fits the backend context window. Every level is filtered directly from
//! level 0 with disjoint box windows of width `round(N^0 / N^k)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::video::{Mask, Video, CHANNELS};

#[derive(Debug, Clone)]
pub struct Level {
    pub video: Video,
    pub mask: Mask,
    /// Level-0 frame whose mask this level inherits, per retained frame.
    pub center_indices: Vec<usize>,
    /// Window centers in level-0 frame units.
    pub times: Vec<f64>,
    /// Clipped `[start, end)` level-0 ranges averaged into each frame.
    pub windows: Vec<(usize, usize)>,
    pub filter_width: usize,
}

impl Level {
    pub fn frames(&self) -> usize {
        self.video.frames()
    }
}

#[derive(Debug, Clone)]
pub struct TemporalPyramid {
    pub levels: Vec<Level>,
}

impl TemporalPyramid {
    /// Index of the coarsest level.
    pub fn coarsest(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Level::frames).collect()
    }
}

/// Frame counts per level, finest first.
pub fn level_sizes(n0: usize, w_ctx: usize) -> Result<Vec<usize>> {
    if w_ctx < 2 {
        return Err(Error::Config(format!(
            "context window must hold at least 2 frames, got {w_ctx}"
        )));
    }
    if n0 == 0 {
        return Err(Error::Dimension("empty video".into()));
    }
    let mut sizes = vec![n0];
    while *sizes.last().unwrap() > w_ctx {
        let n = *sizes.last().unwrap();
        sizes.push(n.div_ceil(2));
    }
    Ok(sizes)
}

/// `round(n0 / nk)`, halves rounding up.
pub fn filter_width(n0: usize, nk: usize) -> usize {
    ((2 * n0 + nk) / (2 * nk)).max(1)
}

/// Box windows of a level with `nk` frames, clipped to `[0, n0)`.
pub fn level_windows(n0: usize, nk: usize) -> Vec<(usize, usize)> {
    let w = filter_width(n0, nk);
    (0..nk)
        .map(|j| {
            let start = (j * w).min(n0 - 1);
            (start, (start + w).min(n0))
        })
        .collect()
}

/// Center of each retained frame's window in level-0 frame units.
pub fn level_frame_times(n0: usize, nk: usize) -> Vec<f64> {
    level_windows(n0, nk)
        .iter()
        .map(|&(s, e)| (s + e - 1) as f64 / 2.0)
        .collect()
}

/// Mask-normalized temporal box average of `x0` over each window. Pixels with
/// no valid sample in a window fall back to the plain average.
pub fn box_filter(x0: &Video, m0: &Mask, windows: &[(usize, usize)]) -> Video {
    let (h, w) = (x0.height(), x0.width());
    let mut out = x0.like(windows.len(), h, w);
    let frame_len = x0.frame_len();
    out.data_mut()
        .par_chunks_mut(frame_len)
        .zip(windows.par_iter())
        .for_each(|(frame, &(s, e))| {
            let mut valid_sum = vec![0.0f64; frame_len];
            let mut all_sum = vec![0.0f64; frame_len];
            let mut count = vec![0u32; h * w];
            for t in s..e {
                let src = x0.frame(t);
                let mt = m0.frame(t);
                for p in 0..h * w {
                    let valid = mt[p];
                    count[p] += valid as u32;
                    for c in 0..CHANNELS {
                        let v = src[p * CHANNELS + c] as f64;
                        all_sum[p * CHANNELS + c] += v;
                        if valid {
                            valid_sum[p * CHANNELS + c] += v;
                        }
                    }
                }
            }
            let n_all = (e - s) as f64;
            for p in 0..h * w {
                for c in 0..CHANNELS {
                    let i = p * CHANNELS + c;
                    frame[i] = if count[p] > 0 {
                        (valid_sum[i] / count[p] as f64) as f32
                    } else {
                        (all_sum[i] / n_all) as f32
                    };
                }
            }
        });
    out
}

pub fn build_pyramid(x0: &Video, m0: &Mask, w_ctx: usize) -> Result<TemporalPyramid> {
    crate::video::check_same_dims(x0, m0)?;
    let n0 = x0.frames();
    let sizes = level_sizes(n0, w_ctx)?;
    let mut levels = vec![Level {
        video: x0.clone(),
        mask: m0.clone(),
        center_indices: (0..n0).collect(),
        times: (0..n0).map(|t| t as f64).collect(),
        windows: (0..n0).map(|t| (t, t + 1)).collect(),
        filter_width: 1,
    }];
    for &nk in &sizes[1..] {
        let windows = level_windows(n0, nk);
        let times = level_frame_times(n0, nk);
        let center_indices: Vec<usize> = times.iter().map(|t| t.floor() as usize).collect();
        levels.push(Level {
            video: box_filter(x0, m0, &windows),
            mask: m0.select_frames(&center_indices),
            center_indices,
            times,
            windows,
            filter_width: filter_width(n0, nk),
        });
    }
    Ok(TemporalPyramid { levels })
}
