//! Spatial and color alignment of observed content to an upsampled estimate.

use rayon::prelude::*;

use crate::error::Result;
use crate::registration::Plane;
use crate::video::{Mask, Video};

pub mod color;
pub mod flow;
pub mod warp;

pub use color::{color_align, default_levels};
pub use flow::{dense_flow, estimate_grid_flow, FlowParams, GridFlowField};
pub use warp::{warp_frame, warp_mask_frame};

/// Warps each frame of `x` (valid where `m`) onto `target` with grid flow,
/// then re-tones it with [`color_align`]. Returns the aligned video and the
/// warped mask.
pub fn align_to(x: &Video, m: &Mask, target: &Video, params: &FlowParams, levels: Option<usize>) -> Result<(Video, Mask)> {
    crate::video::check_same_dims(x, m)?;
    let (n, h, w) = x.dims();
    let levels = levels.unwrap_or_else(|| default_levels(h, w));
    let frames: Vec<Result<(Vec<f32>, Vec<bool>)>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let (src, dst) = (Plane::luma(x, t), Plane::luma(target, t));
            let field = estimate_grid_flow(&src, &dst, Some(m.frame(t)), params);
            let dense = dense_flow(&src, &dst, Some(m.frame(t)), &field);
            let warped = warp_frame(x, t, &dense);
            let mask = warp_mask_frame(m, t, &dense);
            let toned = color_align(&warped, target.frame(t), &mask, w, h, levels)?;
            Ok((toned, mask))
        })
        .collect();
    let mut out = x.like(n, h, w);
    let mut mask = Mask::new(n, h, w, false);
    for (t, f) in frames.into_iter().enumerate() {
        let (px, mk) = f?;
        out.frame_mut(t).copy_from_slice(&px);
        mask.frame_mut(t).copy_from_slice(&mk);
    }
    Ok((out, mask))
}
