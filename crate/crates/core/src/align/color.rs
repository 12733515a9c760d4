//! Color alignment by exchanging Laplacian pyramid bands.
//!
//! The pyramid uses 2x2 block averaging down and pixel replication up. With
//! that pair the coarse bands (level 2 and up) of an image sum to its level-2
//! Gaussian image replicated back to full size, so swapping those bands
//! amounts to swapping that low-pass. Averages are mask-weighted, so only
//! valid pixels of `x` contribute, and a piecewise-constant correction
//! survives a second pass unchanged: the exchange is exactly idempotent.

use crate::error::{Error, Result};
use crate::video::CHANNELS;

/// A weighted interleaved RGB image.
#[derive(Debug, Clone)]
struct Weighted {
    w: usize,
    h: usize,
    data: Vec<f32>,
    weight: Vec<f32>,
}

fn down(img: &Weighted) -> Weighted {
    let (w, h) = (img.w.div_ceil(2), img.h.div_ceil(2));
    let mut data = vec![0.0; w * h * CHANNELS];
    let mut weight = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0.0;
            let mut acc = [0.0f32; CHANNELS];
            for yy in 2 * y..(2 * y + 2).min(img.h) {
                for xx in 2 * x..(2 * x + 2).min(img.w) {
                    let wt = img.weight[yy * img.w + xx];
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += wt * img.data[(yy * img.w + xx) * CHANNELS + c];
                    }
                    n += wt;
                }
            }
            weight[y * w + x] = n;
            if n > 0.0 {
                for c in 0..CHANNELS {
                    data[(y * w + x) * CHANNELS + c] = acc[c] / n;
                }
            }
        }
    }
    Weighted { w, h, data, weight }
}

/// Mask-weighted low-pass: two block-average steps, replicated back up.
fn low_pass(data: Vec<f32>, valid: &[bool], width: usize, height: usize) -> Vec<f32> {
    let img = Weighted {
        w: width,
        h: height,
        data,
        weight: valid.iter().map(|&v| v as u8 as f32).collect(),
    };
    let g2 = down(&down(&img));
    let mut out = vec![0.0; width * height * CHANNELS];
    for y in 0..height {
        for x in 0..width {
            let s = ((y / 4) * g2.w + x / 4) * CHANNELS;
            out[(y * width + x) * CHANNELS..][..CHANNELS].copy_from_slice(&g2.data[s..s + CHANNELS]);
        }
    }
    out
}

/// Default number of levels for an image, `floor(log2(min(h, w))) - 1`.
pub fn default_levels(height: usize, width: usize) -> usize {
    (height.min(width).max(1).ilog2() as usize).saturating_sub(1)
}

/// Keeps the two finest bands of `x` and takes the coarser bands from `y`,
/// so `x`'s detail is re-toned to `y`'s colors. Bands are measured over the
/// `valid` pixels only; pixels outside `valid` are copied from `y`.
///
/// Every band at level 2 or coarser is exchanged, so any `levels >= 3` gives
/// the same result.
pub fn color_align(x: &[f32], y: &[f32], valid: &[bool], width: usize, height: usize, levels: usize) -> Result<Vec<f32>> {
    if levels < 3 {
        return Err(Error::Config(format!("color alignment needs at least 3 pyramid levels, got {levels}")));
    }
    let diff: Vec<f32> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let correction = low_pass(diff, valid, width, height);
    let mut out = y.to_vec();
    for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
        for c in i * CHANNELS..(i + 1) * CHANNELS {
            out[c] = x[c] - correction[c];
        }
    }
    Ok(out)
}
