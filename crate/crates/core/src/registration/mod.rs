//! Rotation-only registration of a panning video onto an equirectangular
//! canvas.

pub mod camera;
pub mod canvas;
pub mod features;
pub mod homography;

pub use camera::{decompose_rotation, CameraMode, CameraModel};
pub use canvas::{auto_fit_canvas, fit_canvas, project_to_canvas, CanvasGeometry};
pub use homography::{estimate_homographies, Homography};
pub use features::Plane;

use crate::error::Result;
use crate::video::Video;

/// Estimates a camera for `video`: chained homographies, focal length from
/// `focal` or self-calibration, and per-frame rotations.
pub fn register_video(video: &Video, focal: Option<f64>, seed: u64) -> Result<CameraModel> {
    let hs = estimate_homographies(video, &features::FeatureParams::default(), seed)?;
    let pp = [video.width() as f64 / 2.0, video.height() as f64 / 2.0];
    let f = match focal {
        Some(f) => f,
        None => homography::estimate_focal(
            &homography::pairwise_from_chained(&hs),
            pp,
            video.width(),
        ),
    };
    let k = camera::intrinsics(f, pp);
    let mut cam = CameraModel::identity(video.frames(), f, pp);
    for (t, h) in hs.iter().enumerate().skip(1) {
        cam.rotations[t] = decompose_rotation(h, &k).0;
    }
    Ok(cam)
}
