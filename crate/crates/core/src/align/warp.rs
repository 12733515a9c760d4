//! Backward warping of frames and masks by a dense flow.

use crate::video::{sample_plane, sample_rgb, Mask, Video, CHANNELS};

/// `out(p) = src(p - flow(p))`, bilinear, borders clamped.
pub fn warp_frame(src: &Video, t: usize, flow: &[[f32; 2]]) -> Vec<f32> {
    let (w, h) = (src.width(), src.height());
    let mut out = vec![0.0; w * h * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let d = flow[y * w + x];
            let px = sample_rgb(src, t, x as f32 - d[0], y as f32 - d[1]);
            out[(y * w + x) * CHANNELS..][..CHANNELS].copy_from_slice(&px);
        }
    }
    out
}

/// Warps a mask frame like [`warp_frame`] and keeps pixels whose bilinear
/// coverage is at least 0.999. Samples outside the frame count as invalid.
pub fn warp_mask_frame(mask: &Mask, t: usize, flow: &[[f32; 2]]) -> Vec<bool> {
    let (w, h) = (mask.width(), mask.height());
    let plane: Vec<f32> = mask.frame(t).iter().map(|&m| m as u8 as f32).collect();
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = flow[y * w + x];
            let (sx, sy) = (x as f32 - d[0], y as f32 - d[1]);
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f32 || sy > (h - 1) as f32 {
                continue;
            }
            out[y * w + x] = sample_plane(&plane, w, h, sx, sy) >= 0.999;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Video {
        Video::from_fn(1, 4, 6, 1.0, |_, y, x| [x as f32 * 0.1, y as f32 * 0.2, 0.5])
    }

    #[test]
    fn zero_flow_is_identity() {
        let v = ramp();
        assert_eq!(warp_frame(&v, 0, &vec![[0.0; 2]; 24]), v.frame(0));
    }

    #[test]
    fn integer_shift_is_exact() {
        let v = ramp();
        let out = warp_frame(&v, 0, &vec![[1.0, 0.0]; 24]);
        for y in 0..4 {
            for x in 1..6 {
                assert_eq!(&out[(y * 6 + x) * 3..][..3], v.pixel(0, y, x - 1));
            }
        }
    }

    #[test]
    fn warped_mask_within_dilated_source() {
        let m = Mask::from_fn(1, 5, 8, |_, y, x| (2..5).contains(&x) && y > 0);
        let flow: Vec<[f32; 2]> = (0..40).map(|i| [((i * 7) % 5) as f32 * 0.3 - 0.6, 0.4]).collect();
        let out = warp_mask_frame(&m, 0, &flow);
        for y in 0..5 {
            for x in 0..8 {
                if out[y * 8 + x] {
                    let near = (y.saturating_sub(1)..=(y + 1).min(4)).any(|yy| (x.saturating_sub(1)..=(x + 1).min(7)).any(|xx| m.get(0, yy, xx)));
                    assert!(near);
                }
            }
        }
    }
}
