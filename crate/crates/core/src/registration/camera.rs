//! Rotation-only camera model and its JSON camera-path file.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::homography::{normalize, Homography};
use crate::error::{Error, Result};

/// How frames relate to the canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CameraMode {
    /// Per-frame rotations projected onto an equirectangular canvas.
    #[default]
    Rotation,
    /// Frames are axis-aligned crops of a canvas at integer offsets.
    CanvasCrop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub focal: f64,
    pub principal: [f64; 2],
    /// Camera-to-reference rotations, `rotations[0] = I`.
    pub rotations: Vec<Matrix3<f64>>,
    pub mode: CameraMode,
    /// Canvas size `(width, height)` for canvas-crop cameras.
    pub canvas: Option<(usize, usize)>,
    /// Per-frame integer canvas offsets `(x, y)` for canvas-crop cameras.
    pub offsets: Vec<(i64, i64)>,
}

impl CameraModel {
    pub fn identity(frames: usize, focal: f64, principal: [f64; 2]) -> Self {
        CameraModel {
            focal,
            principal,
            rotations: vec![Matrix3::identity(); frames],
            mode: CameraMode::Rotation,
            canvas: None,
            offsets: Vec::new(),
        }
    }

    pub fn canvas_crop(focal: f64, principal: [f64; 2], canvas: (usize, usize), offsets: Vec<(i64, i64)>) -> Self {
        CameraModel {
            focal,
            principal,
            rotations: vec![Matrix3::identity(); offsets.len()],
            mode: CameraMode::CanvasCrop,
            canvas: Some(canvas),
            offsets,
        }
    }

    pub fn frames(&self) -> usize {
        self.rotations.len()
    }

    pub fn k(&self) -> Matrix3<f64> {
        intrinsics(self.focal, self.principal)
    }

    /// `H_t = K R_t K^-1`, mapping frame-t pixels into frame 0.
    pub fn homography(&self, t: usize) -> Homography {
        let k = self.k();
        normalize(&(k * self.rotations[t] * k.try_inverse().expect("f > 0")))
    }

    /// Unit ray in the reference (frame 0) camera for a frame-t pixel.
    pub fn pixel_ray(&self, t: usize, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new(
            (u - self.principal[0]) / self.focal,
            (v - self.principal[1]) / self.focal,
            1.0,
        );
        (self.rotations[t] * d).normalize()
    }

    pub fn load(path: &Path) -> Result<CameraModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<CameraModel> {
        let file: CameraFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            reason: e.to_string(),
        })?;
        file.into_model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CameraFile::from_model(self)).expect("serializable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::save_json(&CameraFile::from_model(self), path)
    }
}

pub fn intrinsics(f: f64, principal: [f64; 2]) -> Matrix3<f64> {
    Matrix3::new(f, 0.0, principal[0], 0.0, f, principal[1], 0.0, 0.0, 1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanvasSize {
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    index: usize,
    rotation_rowmajor_9: [f64; 9],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    canvas_offset: Option<[i64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    focal_px: f64,
    principal: [f64; 2],
    #[serde(default)]
    mode: CameraMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    canvas: Option<CanvasSize>,
    frames: Vec<FrameEntry>,
}

impl CameraFile {
    fn from_model(m: &CameraModel) -> Self {
        let frames = m
            .rotations
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut rm = [0.0; 9];
                for row in 0..3 {
                    for col in 0..3 {
                        rm[row * 3 + col] = r[(row, col)];
                    }
                }
                FrameEntry {
                    index: i,
                    rotation_rowmajor_9: rm,
                    canvas_offset: m.offsets.get(i).map(|o| [o.0, o.1]),
                }
            })
            .collect();
        CameraFile {
            focal_px: m.focal,
            principal: m.principal,
            mode: m.mode,
            canvas: m.canvas.map(|(width, height)| CanvasSize { width, height }),
            frames,
        }
    }

    fn into_model(mut self) -> Result<CameraModel> {
        if !(self.focal_px > 0.0) {
            return Err(Error::Config(format!(
                "focal_px must be positive, got {}",
                self.focal_px
            )));
        }
        self.frames.sort_by_key(|f| f.index);
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i {
                return Err(Error::Config(format!(
                    "camera frames must be indexed 0..n without gaps; missing {i}"
                )));
            }
        }
        let rotations: Vec<Matrix3<f64>> = self
            .frames
            .iter()
            .map(|f| reorthonormalize(&Matrix3::from_row_slice(&f.rotation_rowmajor_9)))
            .collect();
        let mut model = CameraModel {
            focal: self.focal_px,
            principal: self.principal,
            rotations,
            mode: self.mode,
            canvas: None,
            offsets: Vec::new(),
        };
        if self.mode == CameraMode::CanvasCrop {
            let canvas = self.canvas.ok_or_else(|| {
                Error::Config("canvas-crop camera requires a canvas size".into())
            })?;
            model.canvas = Some((canvas.width, canvas.height));
            model.offsets = self
                .frames
                .iter()
                .map(|f| {
                    f.canvas_offset.map(|o| (o[0], o[1])).ok_or_else(|| {
                        Error::Config(format!("frame {} lacks canvas_offset", f.index))
                    })
                })
                .collect::<Result<_>>()?;
        }
        Ok(model)
    }
}

/// Nearest rotation (polar decomposition via SVD) with `det = +1`.
pub fn reorthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    nearest_rotation(m).0
}

/// Nearest rotation to `m` in the Frobenius sense and the residual
/// `||m - R||_F`.
pub fn nearest_rotation(m: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let (smallest, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three singular values");
        let mut fix = Matrix3::identity();
        fix[(smallest, smallest)] = -1.0;
        r = u * fix * v_t;
    }
    (r, (m - r).norm())
}

/// Rotation implied by a homography and intrinsics: `K^-1 H K`, scaled to unit
/// determinant and projected onto SO(3). Returns the rotation and the
/// projection residual; residuals above 0.1 are logged.
pub fn decompose_rotation(h: &Homography, k: &Matrix3<f64>) -> (Matrix3<f64>, f64) {
    let k_inv = k.try_inverse().expect("invertible intrinsics");
    let mut m = k_inv * h * k;
    let det = m.determinant();
    if det.abs() > 1e-300 {
        m /= det.cbrt();
    }
    let (r, residual) = nearest_rotation(&m);
    if residual > 0.1 {
        log::warn!("homography is far from a pure rotation (residual {residual:.3})");
    }
    (r, residual)
}

/// Rotation angle of `r` in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Rotation about the vertical (image y) axis; positive yaw turns the camera
/// toward +x.
pub fn yaw(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle).into_inner()
}

/// Rotation about the image x axis; positive pitch turns the camera downward
/// (toward +y).
pub fn pitch(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), -angle).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_homography_gives_identity() {
        let k = intrinsics(500.0, [320.0, 240.0]);
        let (r, res) = decompose_rotation(&Homography::identity(), &k);
        assert!((r - Matrix3::identity()).norm() < 1e-12);
        assert!(res < 1e-12);
    }

    #[test]
    fn ten_degree_yaw_round_trips() {
        let f = 400.0;
        let k = intrinsics(f, [320.0, 240.0]);
        let truth = yaw(10f64.to_radians());
        let h = normalize(&(k * truth * k.try_inverse().unwrap()));
        let (r, _) = decompose_rotation(&h, &k);
        let err = rotation_angle(&(r.transpose() * truth)).to_degrees();
        assert!(err < 0.05, "{err}");
    }

    /// Brute-force nearest pure yaw under a wrong focal length.
    fn best_yaw(m: &Matrix3<f64>) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in -40000..=40000 {
            let a = i as f64 * 1e-5;
            let d = (m - yaw(a)).norm();
            if d < best.0 {
                best = (d, a);
            }
        }
        best.1
    }

    #[test]
    fn doubled_focal_matches_nearest_rotation_oracle() {
        let f = 400.0;
        let truth = yaw(10f64.to_radians());
        let k = intrinsics(f, [0.0, 0.0]);
        let h = normalize(&(k * truth * k.try_inverse().unwrap()));
        let k2 = intrinsics(2.0 * f, [0.0, 0.0]);
        let (r, residual) = decompose_rotation(&h, &k2);
        let mut m = k2.try_inverse().unwrap() * h * k2;
        m /= m.determinant().cbrt();
        let oracle = best_yaw(&m);
        let got = rotation_angle(&r) * yaw_sign(&r);
        assert!((got - oracle).abs() < 2e-4, "{got} vs {oracle}");
        // The image-space shift of the optical axis implies an angle close to
        // half the true one; the polar factor itself does not halve.
        let shift = super::super::homography::transfer(&h, [0.0, 0.0])[0];
        let implied = (shift / (2.0 * f)).atan();
        assert!((implied / 10f64.to_radians() - 0.5).abs() < 0.02);
        assert!(residual > 0.1);
    }

    fn yaw_sign(r: &Matrix3<f64>) -> f64 {
        r[(0, 2)].signum()
    }

    #[test]
    fn json_round_trip() {
        let mut m = CameraModel::identity(3, 512.0, [256.0, 64.0]);
        m.rotations[1] = yaw(0.1);
        m.rotations[2] = yaw(0.2) * pitch(0.05);
        let back = CameraModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back.frames(), 3);
        assert!((back.rotations[2] - m.rotations[2]).norm() < 1e-12);
        assert_eq!(back.focal, 512.0);
    }

    #[test]
    fn canvas_crop_round_trip() {
        let m = CameraModel::canvas_crop(128.0, [64.0, 64.0], (512, 128), vec![(0, 0), (4, 0)]);
        let back = CameraModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_focal_is_parse_error_with_line() {
        let text = "{\n  \"principal\": [1, 2],\n  \"frames\": []\n}";
        match CameraModel::from_json(text) {
            Err(Error::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("{other:?}"),
        }
    }
}
