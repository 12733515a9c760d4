//! Synthetic panning benchmark: a moving crop window over a wide video.
//!
//! The crop is the input, its footprint on the full-width canvas is the
//! input mask, and the full-width video is the ground truth. Cameras are
//! written in canvas-crop mode so registration is bypassed.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{save_json, save_mask, save_video, VideoFormat};
use crate::registration::CameraModel;
use crate::video::{Mask, Video};

/// Default benchmark length and rate.
pub const DEFAULT_FRAMES: usize = 88;
pub const DEFAULT_FRAME_RATE: f64 = 15.0;
/// Default crop width as a fraction of the source width.
pub const DEFAULT_CROP_RATIO: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPoint {
    pub frame: f64,
    /// Left edge of the crop in source pixels.
    pub left: f64,
}

/// A crop window whose left edge moves piecewise-linearly between control
/// points (held constant outside them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanTrajectory {
    pub control_points: Vec<ControlPoint>,
    pub crop_width: usize,
    pub crop_height: usize,
    pub frames: usize,
    pub frame_rate: f64,
}

impl PanTrajectory {
    /// Integer left edge at frame `t`.
    pub fn left(&self, t: usize) -> i64 {
        let pts = &self.control_points;
        let tf = t as f64;
        let i = pts.partition_point(|p| p.frame <= tf);
        let x = if i == 0 {
            pts[0].left
        } else if i == pts.len() {
            pts[i - 1].left
        } else {
            let (a, b) = (pts[i - 1], pts[i]);
            a.left + (b.left - a.left) * (tf - a.frame) / (b.frame - a.frame)
        };
        x.round() as i64
    }

    pub fn validate(&self, src_width: usize, src_height: usize) -> Result<()> {
        if self.control_points.is_empty() || self.frames == 0 || self.crop_width == 0 || self.crop_height == 0 {
            return Err(Error::Config("trajectory needs control points, frames and a crop size".into()));
        }
        if self.control_points.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return Err(Error::Config("trajectory control points must have increasing frames".into()));
        }
        if self.crop_height > src_height {
            return Err(Error::Config(format!(
                "crop height {} exceeds source height {src_height}",
                self.crop_height
            )));
        }
        for t in 0..self.frames {
            let l = self.left(t);
            if l < 0 || l as usize + self.crop_width > src_width {
                return Err(Error::Config(format!(
                    "crop [{l}, {}) leaves the {src_width}-pixel source at frame {t}",
                    l + self.crop_width as i64
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::load_json(path)
    }
}

/// Built-in trajectory names (plus `custom`, read from a file).
pub fn trajectory_presets() -> &'static [&'static str] {
    &["left-right", "left-right-left", "static", "custom"]
}

/// Constant-speed preset over a `src_width`-wide source with a full-height
/// crop of `crop_width` pixels.
pub fn preset(name: &str, src_width: usize, src_height: usize, crop_width: usize, frames: usize, frame_rate: f64) -> Result<PanTrajectory> {
    if crop_width > src_width || frames == 0 {
        return Err(Error::Config(format!("crop {crop_width} wider than source {src_width}")));
    }
    let span = (src_width - crop_width) as f64;
    let end = (frames - 1).max(1) as f64;
    let cp = |frame: f64, left: f64| ControlPoint { frame, left };
    let control_points = match name {
        "left-right" => vec![cp(0.0, 0.0), cp(end, span)],
        // the turn lands on an even frame for even lengths, so it survives halving
        "left-right-left" => vec![cp(0.0, 0.0), cp((end / 2.0).round(), span), cp(end, 0.0)],
        "static" => vec![cp(0.0, (span / 2.0).floor())],
        "custom" => return Err(Error::Config("the custom preset is read from a trajectory file".into())),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}', expected one of {:?}",
                trajectory_presets()
            )))
        }
    };
    Ok(PanTrajectory {
        control_points,
        crop_width,
        crop_height: src_height,
        frames,
        frame_rate,
    })
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub input: Video,
    /// Crop footprint on the canvas.
    pub mask: Mask,
    pub camera: CameraModel,
    pub truth: Video,
    pub trajectory: PanTrajectory,
}

/// Crops `src` along `traj`. The canvas is the source frame; crops are
/// vertically centered.
pub fn make_synthetic(src: &Video, traj: &PanTrajectory) -> Result<Synthetic> {
    let (n, h, w) = src.dims();
    if n < traj.frames {
        return Err(Error::Config(format!("source has {n} frames, trajectory needs {}", traj.frames)));
    }
    traj.validate(w, h)?;
    let frames: Vec<usize> = (0..traj.frames).collect();
    let mut truth = src.select_frames(&frames);
    truth.frame_rate = traj.frame_rate;
    let top = (h - traj.crop_height) / 2;
    let (cw, ch) = (traj.crop_width, traj.crop_height);
    let mut input = Video::zeros(traj.frames, ch, cw, traj.frame_rate);
    let mut mask = Mask::new(traj.frames, h, w, false);
    let mut offsets = Vec::with_capacity(traj.frames);
    for t in 0..traj.frames {
        let left = traj.left(t) as usize;
        for y in 0..ch {
            input.row_mut(t, y).copy_from_slice(&truth.row(t, top + y)[left * 3..(left + cw) * 3]);
            for x in left..left + cw {
                mask.set(t, top + y, x, true);
            }
        }
        offsets.push((left as i64, top as i64));
    }
    let camera = CameraModel::canvas_crop(cw as f64, [cw as f64 / 2.0, ch as f64 / 2.0], (w, h), offsets);
    Ok(Synthetic {
        input,
        mask,
        camera,
        truth,
        trajectory: traj.clone(),
    })
}

/// Writes `input/`, `mask/`, `gt/` (PNG directories), `camera.json` and
/// `trajectory.json` under `dir`.
pub fn write_synthetic(s: &Synthetic, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_video(&s.input, &dir.join("input"), VideoFormat::PngDir)?;
    save_mask(&s.mask, &dir.join("mask"))?;
    save_video(&s.truth, &dir.join("gt"), VideoFormat::PngDir)?;
    s.camera.save(&dir.join("camera.json"))?;
    save_json(&s.trajectory, &dir.join("trajectory.json"))
}

/// Motion content of a procedural source video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneMotion {
    /// Nothing moves.
    Static,
    /// The whole scene translates horizontally by this many pixels per frame.
    Drift(f64),
    /// The right half translates by this many pixels per frame; the left
    /// half is static.
    HalfMoving(f64),
    /// A static backdrop with a blob crossing it at this many pixels per
    /// frame.
    Object(f64),
}

impl std::str::FromStr for SceneMotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, speed) = match s.split_once(':') {
            Some((k, v)) => (k, v.parse::<f64>().map_err(|_| Error::Config(format!("bad speed in '{s}'")))?),
            None => (s, 1.0),
        };
        match kind {
            "static" => Ok(SceneMotion::Static),
            "drift" => Ok(SceneMotion::Drift(speed)),
            "half-moving" => Ok(SceneMotion::HalfMoving(speed)),
            "object" => Ok(SceneMotion::Object(speed)),
            other => Err(Error::Config(format!("unknown scene '{other}'"))),
        }
    }
}

/// Smooth band-limited color texture.
pub fn texture(x: f64, y: f64) -> [f32; 3] {
    let a = (0.071 * x + 0.043 * y).sin() + 0.6 * (0.029 * x - 0.087 * y + 1.3).sin();
    let b = (0.053 * x + 0.017 * y + 0.7).cos() + 0.5 * (0.11 * x * 0.5 + 0.061 * y).sin();
    let c = (0.031 * x - 0.047 * y + 2.1).sin() + 0.4 * (0.137 * y + 0.019 * x).cos();
    [
        (0.5 + 0.22 * a) as f32,
        (0.5 + 0.25 * b) as f32,
        (0.45 + 0.25 * c) as f32,
    ]
}

/// Procedural wide source video.
pub fn procedural_source(frames: usize, height: usize, width: usize, frame_rate: f64, motion: SceneMotion) -> Video {
    Video::from_fn(frames, height, width, frame_rate, |t, y, x| {
        let (xf, yf, tf) = (x as f64, y as f64, t as f64);
        match motion {
            SceneMotion::Static => texture(xf, yf),
            SceneMotion::Drift(v) => texture(xf - v * tf, yf),
            SceneMotion::HalfMoving(v) => {
                if x < width / 2 {
                    texture(xf, yf)
                } else {
                    texture(xf - v * tf + 1000.0, yf)
                }
            }
            SceneMotion::Object(v) => {
                let cx = width as f64 * 0.2 + v * tf;
                let cy = height as f64 * 0.5 + 0.15 * height as f64 * (2.0 * PI * tf / frames.max(1) as f64).sin();
                let r = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
                let k = (1.0 - (r - 8.0).clamp(0.0, 2.0) / 2.0) as f32;
                let bg = texture(xf, yf);
                let fg = [0.9, 0.2, 0.15];
                [0, 1, 2].map(|c| bg[c] * (1.0 - k) + fg[c] * k)
            }
        }
    })
}
