//! In-memory video and mask volumes.
//!
//! Samples are RGB `f32` in `[0, 1]`, laid out frame-major then row-major with
//! interleaved channels (`[t][y][x][c]`). Quantization to 8 or 16 bits only
//! happens when a volume is written to disk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BitDepth {
    #[default]
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f32 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    #[default]
    Srgb,
}

/// A `T x H x W x 3` video volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    pub frame_rate: f64,
    pub color_space: ColorSpace,
    pub bit_depth: BitDepth,
}

impl Video {
    pub fn zeros(frames: usize, height: usize, width: usize, frame_rate: f64) -> Self {
        Self::filled(frames, height, width, frame_rate, 0.0)
    }

    pub fn filled(frames: usize, height: usize, width: usize, frame_rate: f64, value: f32) -> Self {
        Video {
            frames,
            height,
            width,
            data: vec![value; frames * height * width * CHANNELS],
            frame_rate,
            color_space: ColorSpace::Srgb,
            bit_depth: BitDepth::Eight,
        }
    }

    pub fn from_data(
        frames: usize,
        height: usize,
        width: usize,
        frame_rate: f64,
        data: Vec<f32>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "video must be non-empty, got {frames}x{height}x{width}"
            )));
        }
        if data.len() != frames * height * width * CHANNELS {
            return Err(Error::Dimension(format!(
                "expected {} samples for {frames}x{height}x{width}x3, got {}",
                frames * height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Video {
            frames,
            height,
            width,
            data,
            frame_rate,
            color_space: ColorSpace::Srgb,
            bit_depth: BitDepth::Eight,
        })
    }

    /// Builds a video frame by frame from a per-pixel function.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        frame_rate: f64,
        mut f: impl FnMut(usize, usize, usize) -> [f32; 3],
    ) -> Self {
        let mut v = Video::zeros(frames, height, width, frame_rate);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    v.set_pixel(t, y, x, f(t, y, x));
                }
            }
        }
        v
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn row(&self, t: usize, y: usize) -> &[f32] {
        let start = self.index(t, y, 0);
        &self.data[start..start + self.width * CHANNELS]
    }

    pub fn row_mut(&mut self, t: usize, y: usize) -> &mut [f32] {
        let start = self.index(t, y, 0);
        let w = self.width;
        &mut self.data[start..start + w * CHANNELS]
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize) -> usize {
        ((t * self.height + y) * self.width + x) * CHANNELS
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [f32; 3] {
        let i = self.index(t, y, x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, t: usize, y: usize, x: usize, rgb: [f32; 3]) {
        let i = self.index(t, y, x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the header metadata with a new geometry and zeroed samples.
    pub fn like(&self, frames: usize, height: usize, width: usize) -> Self {
        let mut v = Video::zeros(frames, height, width, self.frame_rate);
        v.color_space = self.color_space;
        v.bit_depth = self.bit_depth;
        v
    }

    pub fn select_frames(&self, indices: &[usize]) -> Video {
        let mut out = self.like(indices.len(), self.height, self.width);
        for (dst, &src) in indices.iter().enumerate() {
            out.frame_mut(dst).copy_from_slice(self.frame(src));
        }
        out
    }

    pub fn reversed(&self) -> Video {
        let idx: Vec<usize> = (0..self.frames).rev().collect();
        self.select_frames(&idx)
    }

    /// Columns `[x0, x0 + width)` of every frame.
    pub fn crop_columns(&self, x0: usize, width: usize) -> Video {
        let mut out = self.like(self.frames, self.height, width);
        for t in 0..self.frames {
            for y in 0..self.height {
                let src = &self.row(t, y)[x0 * CHANNELS..(x0 + width) * CHANNELS];
                out.row_mut(t, y).copy_from_slice(src);
            }
        }
        out
    }

    /// Columns `[x0, x0 + width)` of the listed frames.
    pub fn window(&self, frames: &[usize], x0: usize, width: usize) -> Video {
        let mut out = self.like(frames.len(), self.height, width);
        for (dst, &t) in frames.iter().enumerate() {
            for y in 0..self.height {
                let src = &self.row(t, y)[x0 * CHANNELS..(x0 + width) * CHANNELS];
                out.row_mut(dst, y).copy_from_slice(src);
            }
        }
        out
    }

    /// Luma (Rec. 601 weights) of one frame as a `H x W` plane.
    pub fn luma(&self, t: usize) -> Vec<f32> {
        self.frame(t)
            .chunks_exact(CHANNELS)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }
}

/// A `T x H x W` binary validity volume (`true` = observed input pixel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(frames: usize, height: usize, width: usize, value: bool) -> Self {
        Mask {
            frames,
            height,
            width,
            data: vec![value; frames * height * width],
        }
    }

    pub fn from_data(frames: usize, height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != frames * height * width {
            return Err(Error::Dimension(format!(
                "mask expects {} entries, got {}",
                frames * height * width,
                data.len()
            )));
        }
        Ok(Mask {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Self {
        let mut data = Vec::with_capacity(frames * height * width);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(t, y, x));
                }
            }
        }
        Mask {
            frames,
            height,
            width,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize) -> usize {
        (t * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.data[self.index(t, y, x)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, v: bool) {
        let i = self.index(t, y, x);
        self.data[i] = v;
    }

    pub fn frame(&self, t: usize) -> &[bool] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [bool] {
        let n = self.height * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn select_frames(&self, indices: &[usize]) -> Mask {
        let mut out = Mask::new(indices.len(), self.height, self.width, false);
        for (dst, &src) in indices.iter().enumerate() {
            out.frame_mut(dst).copy_from_slice(self.frame(src));
        }
        out
    }

    pub fn reversed(&self) -> Mask {
        let idx: Vec<usize> = (0..self.frames).rev().collect();
        self.select_frames(&idx)
    }

    pub fn crop_columns(&self, x0: usize, width: usize) -> Mask {
        Mask::from_fn(self.frames, self.height, width, |t, y, x| self.get(t, y, x0 + x))
    }

    /// Columns `[x0, x0 + width)` of the listed frames.
    pub fn window(&self, frames: &[usize], x0: usize, width: usize) -> Mask {
        let mut out = Mask::new(frames.len(), self.height, width, false);
        for (dst, &t) in frames.iter().enumerate() {
            for y in 0..self.height {
                let row = (t * self.height + y) * self.width;
                let o = (dst * self.height + y) * width;
                out.data[o..o + width].copy_from_slice(&self.data[row + x0..row + x0 + width]);
            }
        }
        out
    }

    pub fn not(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|v| !v).collect(),
            ..self.clone()
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert_eq!(self.dims(), other.dims());
        Mask {
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
            ..self.clone()
        }
    }
}

pub fn check_same_dims(video: &Video, mask: &Mask) -> Result<()> {
    if video.dims() != mask.dims() {
        return Err(Error::Dimension(format!(
            "video is {:?} but mask is {:?}",
            video.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

/// `mask ? fg : bg`, sample-exact.
pub fn composite(fg: &Video, mask: &Mask, bg: &Video) -> Result<Video> {
    check_same_dims(fg, mask)?;
    if fg.dims() != bg.dims() {
        return Err(Error::Dimension(format!(
            "foreground {:?} vs background {:?}",
            fg.dims(),
            bg.dims()
        )));
    }
    let mut out = bg.clone();
    for (i, &m) in mask.data().iter().enumerate() {
        if m {
            let s = i * CHANNELS;
            out.data[s..s + CHANNELS].copy_from_slice(&fg.data[s..s + CHANNELS]);
        }
    }
    Ok(out)
}

/// Bilinear sample of a single-channel plane at continuous coordinates where
/// pixel centers sit on integers. Coordinates are clamped to the border.
#[inline]
pub fn sample_plane(plane: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let a = plane[y0 * width + x0];
    let b = plane[y0 * width + x1];
    let c = plane[y1 * width + x0];
    let d = plane[y1 * width + x1];
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

/// Bilinear RGB sample of frame `t` (pixel centers on integers, clamped).
#[inline]
pub fn sample_rgb(video: &Video, t: usize, x: f32, y: f32) -> [f32; 3] {
    let (w, h) = (video.width(), video.height());
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let mut out = [0.0f32; 3];
    let a = video.pixel(t, y0, x0);
    let b = video.pixel(t, y0, x1);
    let c = video.pixel(t, y1, x0);
    let d = video.pixel(t, y1, x1);
    for ch in 0..3 {
        let top = a[ch] + (b[ch] - a[ch]) * fx;
        let bot = c[ch] + (d[ch] - c[ch]) * fx;
        out[ch] = top + (bot - top) * fy;
    }
    out
}

fn source_coord(dst: usize, dst_len: usize, src_len: usize) -> f32 {
    // Align pixel areas: centers map through (i + 0.5) * src/dst - 0.5.
    ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5) as f32
}

/// Spatial bilinear resize of every frame. Returns a clone when the size is
/// unchanged so the identity path stays sample-exact.
pub fn resize_video(video: &Video, height: usize, width: usize) -> Video {
    if video.height() == height && video.width() == width {
        return video.clone();
    }
    let mut out = video.like(video.frames(), height, width);
    for t in 0..video.frames() {
        for y in 0..height {
            let sy = source_coord(y, height, video.height());
            for x in 0..width {
                let sx = source_coord(x, width, video.width());
                out.set_pixel(t, y, x, sample_rgb(video, t, sx, sy));
            }
        }
    }
    out
}

/// Spatial resize of a mask: bilinear on `{0, 1}` then `>= threshold`.
pub fn resize_mask(mask: &Mask, height: usize, width: usize, threshold: f32) -> Mask {
    if mask.height() == height && mask.width() == width {
        return mask.clone();
    }
    let (h0, w0) = (mask.height(), mask.width());
    let mut plane = vec![0.0f32; h0 * w0];
    let mut out = Mask::new(mask.frames(), height, width, false);
    for t in 0..mask.frames() {
        for (p, &m) in plane.iter_mut().zip(mask.frame(t)) {
            *p = if m { 1.0 } else { 0.0 };
        }
        for y in 0..height {
            let sy = source_coord(y, height, h0);
            for x in 0..width {
                let sx = source_coord(x, width, w0);
                out.set(t, y, x, sample_plane(&plane, w0, h0, sx, sy) >= threshold);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_data_rejects_wrong_length() {
        assert!(Video::from_data(1, 2, 2, 30.0, vec![0.0; 11]).is_err());
        assert!(Video::from_data(0, 2, 2, 30.0, vec![]).is_err());
    }

    #[test]
    fn composite_is_exact() {
        let fg = Video::filled(2, 2, 3, 1.0, 0.3);
        let bg = Video::filled(2, 2, 3, 1.0, 0.7);
        let m = Mask::from_fn(2, 2, 3, |_, _, x| x == 1);
        let out = composite(&fg, &m, &bg).unwrap();
        assert_eq!(out.pixel(1, 1, 1), [0.3; 3]);
        assert_eq!(out.pixel(1, 1, 2), [0.7; 3]);
    }

    #[test]
    fn resize_identity_is_clone() {
        let v = Video::from_fn(1, 3, 4, 1.0, |_, y, x| [(y * 4 + x) as f32 / 12.0; 3]);
        assert_eq!(resize_video(&v, 3, 4), v);
    }

    #[test]
    fn resize_keeps_constants() {
        let v = Video::filled(1, 8, 8, 1.0, 0.25);
        let r = resize_video(&v, 5, 3);
        assert!(r.data().iter().all(|&s| (s - 0.25).abs() < 1e-7));
    }

    #[test]
    fn mask_resize_is_conservative() {
        let m = Mask::from_fn(1, 4, 8, |_, _, x| x < 4);
        let r = resize_mask(&m, 2, 4, 0.999);
        // Columns straddling the edge blend to < 1 and drop out.
        assert!(r.get(0, 0, 0));
        assert!(!r.get(0, 0, 2));
    }
}
