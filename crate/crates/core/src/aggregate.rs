//! Blending overlapping window predictions.
//!
//! Spatial windows are full-height strips `native_width` wide. Each window
//! weighs its pixels with a tent (or flat) profile and weights are normalized
//! per column so they sum to one. Temporal windows use the same profile along
//! time. All reductions accumulate in `f64` in window order, which keeps
//! identical inputs exact and makes the result independent of how window
//! predictions were scheduled.

use serde::{Deserialize, Serialize};

use crate::backends::{CategoricalField, GaussianField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    #[default]
    Tent,
    Uniform,
}

/// Raw profile value of position `x` (a cell index) in a window `[left,
/// left + len)`.
#[inline]
fn raw_weight(kind: WeightKind, x: usize, left: usize, len: usize) -> f64 {
    match kind {
        WeightKind::Uniform => 1.0,
        WeightKind::Tent => {
            let pos = x as f64 + 0.5;
            (pos - left as f64).min((left + len) as f64 - pos)
        }
    }
}

/// Normalized per-cell weights of overlapping 1-D windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights1d {
    pub starts: Vec<usize>,
    pub len: usize,
    pub extent: usize,
    /// `weights[i][x - starts[i]]`.
    pub weights: Vec<Vec<f64>>,
}

impl Weights1d {
    fn new(starts: Vec<usize>, len: usize, extent: usize, kind: WeightKind) -> Self {
        let mut total = vec![0.0f64; extent];
        for &s in &starts {
            for x in s..s + len {
                total[x] += raw_weight(kind, x, s, len);
            }
        }
        let weights = starts
            .iter()
            .map(|&s| {
                (s..s + len)
                    .map(|x| raw_weight(kind, x, s, len) / total[x])
                    .collect()
            })
            .collect();
        Weights1d {
            starts,
            len,
            extent,
            weights,
        }
    }

    pub fn count(&self) -> usize {
        self.starts.len()
    }

    /// Weight of window `i` at cell `x` (zero outside the window).
    pub fn weight(&self, i: usize, x: usize) -> f64 {
        let s = self.starts[i];
        if x < s || x >= s + self.len {
            0.0
        } else {
            self.weights[i][x - s]
        }
    }

    /// Windows covering cell `x`, in order.
    pub fn covering(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.starts.len()).filter(move |&i| x >= self.starts[i] && x < self.starts[i] + self.len)
    }
}

/// Spatial strips over the canvas width.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowLayout {
    pub canvas_width: usize,
    pub native_width: usize,
    pub stride: usize,
    pub kind: WeightKind,
    pub columns: Weights1d,
}

impl WindowLayout {
    pub fn lefts(&self) -> &[usize] {
        &self.columns.starts
    }

    pub fn len(&self) -> usize {
        self.columns.count()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.count() == 0
    }

    pub fn weight(&self, window: usize, x: usize) -> f64 {
        self.columns.weight(window, x)
    }

    /// The same layout expressed on a token lattice of `patch`-pixel cells.
    pub fn to_token_lattice(&self, patch: usize) -> Result<WindowLayout> {
        if self.native_width % patch != 0 || self.canvas_width % patch != 0 {
            return Err(Error::Layout(format!(
                "native width {} / canvas width {} not multiples of patch {patch}",
                self.native_width, self.canvas_width
            )));
        }
        if let Some(l) = self.lefts().iter().find(|&&l| l % patch != 0) {
            return Err(Error::Layout(format!(
                "window at x = {l} is off the {patch}-pixel token lattice"
            )));
        }
        let starts = self.lefts().iter().map(|l| l / patch).collect();
        Ok(WindowLayout {
            canvas_width: self.canvas_width / patch,
            native_width: self.native_width / patch,
            stride: self.stride.div_ceil(patch),
            kind: self.kind,
            columns: Weights1d::new(starts, self.native_width / patch, self.canvas_width / patch, self.kind),
        })
    }
}

/// Left edges at `0, s, 2s, ...` with the last window right-aligned to the
/// canvas.
pub fn make_layout(canvas_width: usize, native_width: usize, stride: usize, kind: WeightKind) -> Result<WindowLayout> {
    if native_width == 0 || native_width > canvas_width {
        return Err(Error::Layout(format!(
            "native width {native_width} does not fit canvas width {canvas_width}"
        )));
    }
    if stride == 0 || stride > native_width {
        return Err(Error::Layout(format!(
            "stride {stride} leaves gaps between {native_width}-wide windows"
        )));
    }
    let mut lefts = Vec::new();
    let mut left = 0;
    while left + native_width < canvas_width {
        lefts.push(left);
        left += stride;
    }
    let last = canvas_width - native_width;
    if lefts.last() != Some(&last) {
        lefts.push(last);
    }
    Ok(WindowLayout {
        canvas_width,
        native_width,
        stride,
        kind,
        columns: Weights1d::new(lefts, native_width, canvas_width, kind),
    })
}

/// Temporal windows of `w` frames with the given overlap; the last window is
/// right-aligned to `n`. A video no longer than `w` is one window.
pub fn temporal_windows(n: usize, w: usize, overlap: usize) -> Result<Vec<(usize, usize)>> {
    if w == 0 || overlap >= w {
        return Err(Error::Config(format!(
            "temporal overlap {overlap} must be smaller than the window {w}"
        )));
    }
    if n <= w {
        return Ok(vec![(0, n)]);
    }
    let stride = w - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    while start + w < n {
        out.push((start, start + w));
        start += stride;
    }
    if out.last().map(|r| r.0) != Some(n - w) {
        out.push((n - w, n));
    }
    Ok(out)
}

/// Per-frame normalized weights for temporal windows.
pub fn temporal_weights(ranges: &[(usize, usize)], n: usize, kind: WeightKind) -> Weights1d {
    let len = ranges.first().map(|r| r.1 - r.0).unwrap_or(0);
    debug_assert!(ranges.iter().all(|r| r.1 - r.0 == len));
    Weights1d::new(ranges.iter().map(|r| r.0).collect(), len, n, kind)
}

/// Running weighted sum of Gaussian fields over a canvas.
#[derive(Debug, Clone)]
pub struct GaussianAccumulator {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub mu: Vec<f64>,
    pub var: Option<Vec<f64>>,
}

impl GaussianAccumulator {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        GaussianAccumulator {
            frames,
            height,
            width,
            mu: vec![0.0; frames * height * width * 3],
            var: None,
        }
    }

    pub fn reset(&mut self) {
        self.mu.iter_mut().for_each(|v| *v = 0.0);
        if let Some(v) = &mut self.var {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `field` placed at canvas column `x0`, with canvas frame
    /// `frames[i]` for field frame `i` and combined weight `w(t, x)`.
    pub fn add(&mut self, field: &GaussianField, frames: &[usize], x0: usize, weight: impl Fn(usize, usize) -> f64) {
        let (h, fw) = (field.height, field.width);
        if field.sigma.is_some() && self.var.is_none() {
            self.var = Some(vec![0.0; self.mu.len()]);
        }
        for (i, &t) in frames.iter().enumerate() {
            for y in 0..h {
                for x in 0..fw {
                    let cx = x0 + x;
                    let w = weight(t, cx);
                    if w == 0.0 {
                        continue;
                    }
                    let src = ((i * h + y) * fw + x) * 3;
                    let dst = ((t * self.height + y) * self.width + cx) * 3;
                    for c in 0..3 {
                        self.mu[dst + c] += w * field.mu[src + c] as f64;
                    }
                    if let (Some(sig), Some(var)) = (&field.sigma, &mut self.var) {
                        for c in 0..3 {
                            var[dst + c] += w * sig[src + c] as f64;
                        }
                    }
                }
            }
        }
    }

    pub fn finish(&self) -> GaussianField {
        GaussianField {
            frames: self.frames,
            height: self.height,
            width: self.width,
            mu: self.mu.iter().map(|&v| v as f32).collect(),
            sigma: self
                .var
                .as_ref()
                .map(|v| v.iter().map(|&s| s.max(0.0) as f32).collect()),
        }
    }
}

/// Weighted mixture moments of per-window fields (one field per layout
/// window, all covering the same frames).
pub fn aggregate_gaussian(fields: &[GaussianField], layout: &WindowLayout) -> Result<GaussianField> {
    if fields.len() != layout.len() {
        return Err(Error::Layout(format!(
            "{} fields for {} windows",
            fields.len(),
            layout.len()
        )));
    }
    let first = &fields[0];
    let mut acc = GaussianAccumulator::new(first.frames, first.height, layout.canvas_width);
    let frames: Vec<usize> = (0..first.frames).collect();
    for (i, f) in fields.iter().enumerate() {
        if f.width != layout.native_width || f.frames != first.frames || f.height != first.height {
            return Err(Error::Contract(format!(
                "field {i} is {}x{}x{}, expected {}x{}x{}",
                f.frames, f.height, f.width, first.frames, first.height, layout.native_width
            )));
        }
        acc.add(f, &frames, layout.lefts()[i], |_, x| layout.weight(i, x));
    }
    Ok(acc.finish())
}

/// Weighted average of per-window categorical fields on the token lattice,
/// renormalized per position. `layout` is in pixel units; windows must sit on
/// the `patch` lattice.
pub fn aggregate_categorical(fields: &[CategoricalField], layout: &WindowLayout, patch: usize) -> Result<CategoricalField> {
    let lattice = layout.to_token_lattice(patch)?;
    if fields.len() != lattice.len() {
        return Err(Error::Layout(format!(
            "{} fields for {} windows",
            fields.len(),
            lattice.len()
        )));
    }
    let first = &fields[0];
    let (g, h, v) = (first.frames, first.height, first.vocab);
    let cw = lattice.canvas_width;
    let mut acc = vec![0.0f64; g * h * cw * v];
    for (i, f) in fields.iter().enumerate() {
        if f.width != lattice.native_width || f.frames != g || f.height != h || f.vocab != v {
            return Err(Error::Contract(format!("categorical field {i} has mismatched shape")));
        }
        let left = lattice.lefts()[i];
        for t in 0..g {
            for y in 0..h {
                for x in 0..f.width {
                    let w = lattice.weight(i, left + x);
                    let src = ((t * h + y) * f.width + x) * v;
                    let dst = ((t * h + y) * cw + left + x) * v;
                    for k in 0..v {
                        acc[dst + k] += w * f.probs[src + k] as f64;
                    }
                }
            }
        }
    }
    let mut probs = Vec::with_capacity(acc.len());
    for cell in acc.chunks_exact(v) {
        let s: f64 = cell.iter().sum();
        if s > 0.0 {
            probs.extend(cell.iter().map(|&p| (p / s) as f32));
        } else {
            probs.extend(std::iter::repeat_n(1.0 / v as f32, v));
        }
    }
    Ok(CategoricalField {
        frames: g,
        height: h,
        width: cw,
        vocab: v,
        probs,
        committed: None,
    })
}
