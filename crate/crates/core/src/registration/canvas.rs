//! Equirectangular canvas geometry and inverse-warp projection of frames.
//!
//! Rays use camera coordinates with x right, y down and z forward. Azimuth is
//! `phi = atan2(X, Z)` and elevation `theta = atan2(-Y, hypot(X, Z))`, so
//! `(theta, phi) = (0, 0)` is the optical axis of frame 0 and elevation grows
//! upward. Canvas column `c` has its center at `phi_min + (c + 0.5) / ppr`;
//! row `r` at `theta_max - (r + 0.5) / ppr`.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::{CameraMode, CameraModel};
use crate::error::{Error, Result};
use crate::video::{Mask, Video, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasGeometry {
    pub theta_min: f64,
    pub theta_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub pixels_per_radian: f64,
    pub width: usize,
    pub height: usize,
}

impl CanvasGeometry {
    #[inline]
    pub fn column_phi(&self, c: f64) -> f64 {
        self.phi_min + (c + 0.5) / self.pixels_per_radian
    }

    #[inline]
    pub fn row_theta(&self, r: f64) -> f64 {
        self.theta_max - (r + 0.5) / self.pixels_per_radian
    }

    /// Fractional canvas `(column, row)` of a direction.
    pub fn locate(&self, theta: f64, phi: f64) -> (f64, f64) {
        (
            (phi - self.phi_min) * self.pixels_per_radian - 0.5,
            (self.theta_max - theta) * self.pixels_per_radian - 0.5,
        )
    }
}

#[inline]
pub fn ray_angles(d: &Vector3<f64>) -> (f64, f64) {
    let theta = (-d.y).atan2((d.x * d.x + d.z * d.z).sqrt());
    let phi = d.x.atan2(d.z);
    (theta, phi)
}

#[inline]
pub fn angles_ray(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.cos() * phi.sin(), -theta.sin(), theta.cos() * phi.cos())
}

fn unwrap_near(phi: f64, reference: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    phi - ((phi - reference) / tau).round() * tau
}

/// Tight `(theta_lo, theta_hi, phi_lo, phi_hi)` over every frame's image
/// boundary rays.
pub fn footprint_bounds(cam: &CameraModel, width: usize, height: usize) -> (f64, f64, f64, f64) {
    let (w, h) = (width as f64, height as f64);
    let steps = 16;
    let mut boundary = Vec::new();
    for i in 0..=steps {
        let s = i as f64 / steps as f64;
        boundary.extend([[s * w, 0.0], [s * w, h], [0.0, s * h], [w, s * h]]);
    }
    let (mut tl, mut th, mut pl, mut ph) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let mut prev_center = 0.0;
    for t in 0..cam.frames() {
        let (_, center) = ray_angles(&cam.pixel_ray(t, cam.principal[0], cam.principal[1]));
        let center = unwrap_near(center, prev_center);
        prev_center = center;
        for p in &boundary {
            let (theta, phi) = ray_angles(&cam.pixel_ray(t, p[0], p[1]));
            let phi = unwrap_near(phi, center);
            tl = tl.min(theta);
            th = th.max(theta);
            pl = pl.min(phi);
            ph = ph.max(phi);
        }
    }
    (tl, th, pl, ph)
}

/// Smallest canvas covering all frames plus a one-pixel margin, at
/// `pixels_per_radian = f`, snapped so the frame-0 optical axis falls on a
/// pixel center.
pub fn auto_fit_canvas(cam: &CameraModel, width: usize, height: usize) -> CanvasGeometry {
    let ppr = cam.focal;
    let (tl, th, pl, ph) = footprint_bounds(cam, width, height);
    let margin = 1.0;
    // index of the column/row whose center is at phi = 0 / theta = 0
    let left = (-pl * ppr).ceil().max(0.0) + margin;
    let right = (ph * ppr).ceil().max(0.0) + margin;
    let top = (th * ppr).ceil().max(0.0) + margin;
    let bottom = (-tl * ppr).ceil().max(0.0) + margin;
    let w = (left + right + 1.0) as usize;
    let h = (top + bottom + 1.0) as usize;
    let phi_min = -(left + 0.5) / ppr;
    let theta_max = (top + 0.5) / ppr;
    CanvasGeometry {
        theta_min: theta_max - h as f64 / ppr,
        theta_max,
        phi_min,
        phi_max: phi_min + w as f64 / ppr,
        pixels_per_radian: ppr,
        width: w,
        height: h,
    }
}

/// Geometry for canvas-crop cameras: the canvas size comes from the camera
/// file and the scale from its focal length.
pub fn crop_geometry(cam: &CameraModel) -> Result<CanvasGeometry> {
    let (w, h) = cam
        .canvas
        .ok_or_else(|| Error::Config("canvas-crop camera without canvas size".into()))?;
    let ppr = cam.focal;
    let phi_min = -(w as f64) / (2.0 * ppr);
    let theta_max = h as f64 / (2.0 * ppr);
    Ok(CanvasGeometry {
        theta_min: theta_max - h as f64 / ppr,
        theta_max,
        phi_min,
        phi_max: phi_min + w as f64 / ppr,
        pixels_per_radian: ppr,
        width: w,
        height: h,
    })
}

/// Canvas geometry appropriate for the camera's mode.
pub fn fit_canvas(cam: &CameraModel, width: usize, height: usize) -> Result<CanvasGeometry> {
    match cam.mode {
        CameraMode::Rotation => Ok(auto_fit_canvas(cam, width, height)),
        CameraMode::CanvasCrop => crop_geometry(cam),
    }
}

/// Where canvas pixel `(col, row)` lands in frame `t`, in continuous pixel
/// coordinates, or `None` when the ray points behind the camera.
pub fn canvas_to_frame(cam: &CameraModel, geom: &CanvasGeometry, t: usize, col: usize, row: usize) -> Option<[f64; 2]> {
    let d = angles_ray(geom.row_theta(row as f64), geom.column_phi(col as f64));
    let c = cam.rotations[t].transpose() * d;
    if c.z <= 1e-9 {
        return None;
    }
    Some([
        cam.focal * c.x / c.z + cam.principal[0],
        cam.focal * c.y / c.z + cam.principal[1],
    ])
}

/// Inverse-warps each frame onto the canvas. A canvas pixel is valid in frame
/// `t` iff its source location has full bilinear support inside frame `t`.
/// Each canvas frame uses only the matching input frame.
pub fn project_to_canvas(video: &Video, cam: &CameraModel, geom: &CanvasGeometry) -> Result<(Video, Mask)> {
    if cam.frames() != video.frames() {
        return Err(Error::Dimension(format!(
            "camera has {} frames, video has {}",
            cam.frames(),
            video.frames()
        )));
    }
    if cam.mode == CameraMode::CanvasCrop {
        return project_crop(video, cam, geom);
    }
    let (cw, ch) = (geom.width, geom.height);
    let (fw, fh) = (video.width() as f64, video.height() as f64);
    let mut out = video.like(video.frames(), ch, cw);
    let mut mask = Mask::new(video.frames(), ch, cw, false);
    let frame_len = ch * cw;
    out.data_mut()
        .par_chunks_mut(frame_len * CHANNELS)
        .zip(mask.data_mut().par_chunks_mut(frame_len))
        .enumerate()
        .for_each(|(t, (frame, mframe))| {
            for row in 0..ch {
                for col in 0..cw {
                    let Some([u, v]) = canvas_to_frame(cam, geom, t, col, row) else {
                        continue;
                    };
                    let (x, y) = (u - 0.5, v - 0.5);
                    if x < 0.0 || y < 0.0 || x > fw - 1.0 || y > fh - 1.0 {
                        continue;
                    }
                    let rgb = crate::video::sample_rgb(video, t, x as f32, y as f32);
                    let i = row * cw + col;
                    frame[i * CHANNELS..i * CHANNELS + CHANNELS].copy_from_slice(&rgb);
                    mframe[i] = true;
                }
            }
        });
    Ok((out, mask))
}

fn project_crop(video: &Video, cam: &CameraModel, geom: &CanvasGeometry) -> Result<(Video, Mask)> {
    let (cw, ch) = (geom.width, geom.height);
    let mut out = video.like(video.frames(), ch, cw);
    let mut mask = Mask::new(video.frames(), ch, cw, false);
    for t in 0..video.frames() {
        let (ox, oy) = cam.offsets[t];
        for y in 0..video.height() {
            let cy = oy + y as i64;
            if cy < 0 || cy >= ch as i64 {
                continue;
            }
            for x in 0..video.width() {
                let cx = ox + x as i64;
                if cx < 0 || cx >= cw as i64 {
                    continue;
                }
                out.set_pixel(t, cy as usize, cx as usize, video.pixel(t, y, x));
                mask.set(t, cy as usize, cx as usize, true);
            }
        }
    }
    Ok((out, mask))
}

/// Renders frame-sized views of a canvas video through the camera (the
/// forward model of [`project_to_canvas`]). Used to synthesize test input.
pub fn render_from_canvas(canvas: &Video, cam: &CameraModel, geom: &CanvasGeometry, width: usize, height: usize) -> Video {
    let mut out = canvas.like(cam.frames(), height, width);
    for t in 0..cam.frames() {
        let ct = t.min(canvas.frames() - 1);
        for y in 0..height {
            for x in 0..width {
                let d = cam.pixel_ray(t, x as f64 + 0.5, y as f64 + 0.5);
                let (theta, phi) = ray_angles(&d);
                let (c, r) = geom.locate(theta, phi);
                out.set_pixel(t, y, x, crate::video::sample_rgb(canvas, ct, c as f32, r as f32));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::camera::yaw;

    #[test]
    fn frame0_center_is_canvas_origin() {
        let cam = CameraModel::identity(1, 64.0, [32.0, 24.0]);
        let g = auto_fit_canvas(&cam, 64, 48);
        let (c, r) = g.locate(0.0, 0.0);
        assert!((c - c.round()).abs() < 1e-9 && (r - r.round()).abs() < 1e-9);
        let [u, v] = canvas_to_frame(&cam, &g, 0, c.round() as usize, r.round() as usize).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 24.0).abs() < 1e-9);
    }

    #[test]
    fn right_edge_azimuth_matches_pinhole() {
        let w = 100.0;
        let cam = CameraModel::identity(1, w, [50.0, 40.0]);
        let (theta, phi) = ray_angles(&cam.pixel_ray(0, 100.0, 40.0));
        assert!(theta.abs() < 1e-12);
        assert!((phi - 0.5f64.atan()).abs() < 1e-12);
    }

    #[test]
    fn single_frame_span() {
        let cam = CameraModel::identity(1, 100.0, [50.0, 40.0]);
        let (_, _, pl, ph) = footprint_bounds(&cam, 100, 80);
        assert!((ph - pl - 2.0 * 0.5f64.atan()).abs() < 1e-12);
        let g = auto_fit_canvas(&cam, 100, 80);
        let span = g.phi_max - g.phi_min;
        assert!(span >= ph - pl && span <= ph - pl + 5.0 / 100.0);
        assert_eq!(g.width, ((g.phi_max - g.phi_min) * g.pixels_per_radian).round() as usize);
    }

    #[test]
    fn pan_frame_centers_land_at_expected_azimuth() {
        let mut cam = CameraModel::identity(3, 200.0, [80.0, 60.0]);
        for t in 0..3 {
            cam.rotations[t] = yaw((10.0 * t as f64).to_radians());
        }
        let (_, phi) = ray_angles(&cam.pixel_ray(2, 80.0, 60.0));
        assert!((phi.to_degrees() - 20.0).abs() < 0.1);
    }

    #[test]
    fn projection_mask_has_bilinear_support() {
        let v = Video::filled(1, 20, 30, 1.0, 0.5);
        let cam = CameraModel::identity(1, 30.0, [15.0, 10.0]);
        let g = auto_fit_canvas(&cam, 30, 20);
        let (x, m) = project_to_canvas(&v, &cam, &g).unwrap();
        for r in 0..g.height {
            for c in 0..g.width {
                if let Some([u, vv]) = canvas_to_frame(&cam, &g, 0, c, r) {
                    let inside = u >= 0.5 && u <= 29.5 && vv >= 0.5 && vv <= 19.5;
                    assert_eq!(m.get(0, r, c), inside);
                    if inside {
                        assert!((x.pixel(0, r, c)[0] - 0.5).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
