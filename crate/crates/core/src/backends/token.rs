//! Token-flavor reference backend and confidence-ordered iterative sampling.
//!
//! The codec is a k-means codebook over `g x p x p` RGB patches fitted to the
//! observed pixels of the current job. The predictor is a smoothed histogram
//! of known tokens in a space-time neighborhood, optionally restricted to
//! current and earlier token frames.

use std::f64::consts::FRAC_PI_2;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::aggregate::{aggregate_categorical, WindowLayout};
use crate::backends::{BackendDescriptor, CategoricalField, TokenBackend};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::video::{Mask, Video, CHANNELS};

/// Integer tokens on a `frames x height x width` lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: Vec<u32>,
}

impl TokenGrid {
    pub fn new(frames: usize, height: usize, width: usize, value: u32) -> Self {
        TokenGrid {
            frames,
            height,
            width,
            tokens: vec![value; frames * height * width],
        }
    }

    pub fn index(&self, t: usize, y: usize, x: usize) -> usize {
        (t * self.height + y) * self.width + x
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token columns `[x0, x0 + width)` of token frames `[t0, t0 + frames)`.
    pub fn crop(&self, t0: usize, frames: usize, x0: usize, width: usize) -> TokenGrid {
        let mut out = TokenGrid::new(frames, self.height, width, 0);
        for t in 0..frames {
            for y in 0..self.height {
                let s = self.index(t0 + t, y, x0);
                let d = out.index(t, y, 0);
                out.tokens[d..d + width].copy_from_slice(&self.tokens[s..s + width]);
            }
        }
        out
    }
}

/// Crops a per-position flag vector laid out like `grid`.
pub fn crop_flags(flags: &[bool], grid: &TokenGrid, t0: usize, frames: usize, x0: usize, width: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(frames * grid.height * width);
    for t in 0..frames {
        for y in 0..grid.height {
            let s = grid.index(t0 + t, y, x0);
            out.extend_from_slice(&flags[s..s + width]);
        }
    }
    out
}

/// A token is known iff every pixel it covers, in every grouped frame, is.
pub fn derive_token_mask(mask: &Mask, patch: usize, group: usize) -> Result<Vec<bool>> {
    let (n, h, w) = mask.dims();
    if n % group != 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Layout(format!(
            "mask {n}x{h}x{w} does not tile into {group}x{patch}x{patch} tokens"
        )));
    }
    let (tn, th, tw) = (n / group, h / patch, w / patch);
    let mut out = vec![true; tn * th * tw];
    for t in 0..n {
        for y in 0..h {
            for x in 0..w {
                if !mask.get(t, y, x) {
                    out[((t / group) * th + y / patch) * tw + x / patch] = false;
                }
            }
        }
    }
    Ok(out)
}

/// k-means patch codec with a neighborhood-histogram predictor.
#[derive(Debug, Clone)]
pub struct TokenMock {
    descriptor: BackendDescriptor,
    /// `vocab x dim` centroids.
    codebook: Vec<f32>,
    dim: usize,
    pub spatial_radius: usize,
    pub temporal_radius: usize,
    pub smoothing: f32,
}

const MAX_SAMPLES: usize = 4096;
const KMEANS_ITERATIONS: usize = 10;

fn patch_at(video: &Video, t0: usize, y0: usize, x0: usize, g: usize, p: usize, out: &mut Vec<f32>) {
    out.clear();
    for t in t0..t0 + g {
        for y in y0..y0 + p {
            out.extend_from_slice(&video.row(t, y)[x0 * CHANNELS..(x0 + p) * CHANNELS]);
        }
    }
}

fn nearest(codebook: &[f32], dim: usize, v: &[f32]) -> u32 {
    let mut best = (f32::INFINITY, 0u32);
    for (k, c) in codebook.chunks_exact(dim).enumerate() {
        let d: f32 = c.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, k as u32);
        }
    }
    best.1
}

impl TokenMock {
    /// Fits the codebook to fully observed patches of `video`. When fewer
    /// than `V` distinct patches exist the vocabulary shrinks to match.
    pub fn fit(mut descriptor: BackendDescriptor, video: &Video, mask: &Mask, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        crate::video::check_same_dims(video, mask)?;
        let (p, g) = (descriptor.patch_size, descriptor.token_frames);
        let (n, h, w) = video.dims();
        if n < g || h < p || w < p {
            return Err(Error::Dimension(format!(
                "video {n}x{h}x{w} holds no {g}x{p}x{p} patch"
            )));
        }
        let dim = g * p * p * CHANNELS;
        let mut origins = Vec::new();
        let mut fallback = Vec::new();
        for t in (0..=n - g).step_by(g) {
            for y in (0..=h - p).step_by(p) {
                for x in (0..=w - p).step_by(p) {
                    let full = (t..t + g).all(|tt| (y..y + p).all(|yy| (x..x + p).all(|xx| mask.get(tt, yy, xx))));
                    if full {
                        origins.push((t, y, x));
                    } else {
                        fallback.push((t, y, x));
                    }
                }
            }
        }
        if origins.is_empty() {
            origins = fallback;
        }
        let mut r = rng::keyed(&[seed, tag::CODEBOOK]);
        origins.shuffle(&mut r);
        origins.truncate(MAX_SAMPLES);
        let mut samples = Vec::with_capacity(origins.len() * dim);
        let mut buf = Vec::with_capacity(dim);
        for &(t, y, x) in &origins {
            patch_at(video, t, y, x, g, p, &mut buf);
            samples.extend_from_slice(&buf);
        }
        // distinct patches seed the centroids in shuffled order
        let mut seen = std::collections::HashSet::new();
        let mut codebook = Vec::new();
        for s in samples.chunks_exact(dim) {
            let key: Vec<u32> = s.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                codebook.extend_from_slice(s);
                if codebook.len() == descriptor.vocabulary_size * dim {
                    break;
                }
            }
        }
        let vocab = codebook.len() / dim;
        if vocab < descriptor.vocabulary_size {
            warn!(
                "only {vocab} distinct patches; shrinking vocabulary from {}",
                descriptor.vocabulary_size
            );
            descriptor.vocabulary_size = vocab.max(1);
        }
        for _ in 0..KMEANS_ITERATIONS {
            let assign: Vec<u32> = samples.par_chunks_exact(dim).map(|s| nearest(&codebook, dim, s)).collect();
            let mut sums = vec![0.0f64; codebook.len()];
            let mut counts = vec![0usize; vocab];
            for (s, &k) in samples.chunks_exact(dim).zip(&assign) {
                counts[k as usize] += 1;
                for (acc, v) in sums[k as usize * dim..(k as usize + 1) * dim].iter_mut().zip(s) {
                    *acc += *v as f64;
                }
            }
            let mut moved = false;
            for k in 0..vocab {
                if counts[k] == 0 {
                    continue;
                }
                for d in 0..dim {
                    let v = (sums[k * dim + d] / counts[k] as f64) as f32;
                    moved |= v != codebook[k * dim + d];
                    codebook[k * dim + d] = v;
                }
            }
            if !moved {
                break;
            }
        }
        Ok(TokenMock {
            descriptor,
            codebook,
            dim,
            spatial_radius: 3,
            temporal_radius: 2,
            smoothing: 0.01,
        })
    }

    pub fn vocabulary(&self) -> usize {
        self.descriptor.vocabulary_size
    }

    /// Distribution at one position from the known tokens around it.
    fn histogram(&self, grid: &TokenGrid, known: &[bool], t: usize, y: usize, x: usize, out: &mut [f32]) {
        let v = self.vocabulary();
        let (rs, rt) = (self.spatial_radius as isize, self.temporal_radius as isize);
        let t_hi = if self.descriptor.causal { 0 } else { rt };
        out.iter_mut().for_each(|p| *p = 0.0);
        let mut total = 0.0f32;
        for dt in -rt..=t_hi {
            let tt = t as isize + dt;
            if tt < 0 || tt >= grid.frames as isize {
                continue;
            }
            for dy in -rs..=rs {
                let yy = y as isize + dy;
                if yy < 0 || yy >= grid.height as isize {
                    continue;
                }
                for dx in -rs..=rs {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= grid.width as isize {
                        continue;
                    }
                    let i = grid.index(tt as usize, yy as usize, xx as usize);
                    if known[i] {
                        out[grid.tokens[i] as usize] += 1.0;
                        total += 1.0;
                    }
                }
            }
        }
        if total == 0.0 {
            out.iter_mut().for_each(|p| *p = 1.0 / v as f32);
        } else {
            let eps = self.smoothing;
            out.iter_mut().for_each(|p| *p = (1.0 - eps) * *p / total + eps / v as f32);
        }
    }
}

impl TokenBackend for TokenMock {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn encode(&self, window: &Video) -> Result<TokenGrid> {
        let (p, g) = (self.descriptor.patch_size, self.descriptor.token_frames);
        let (n, h, w) = window.dims();
        if n % g != 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Contract(format!(
                "window {n}x{h}x{w} does not tile into {g}x{p}x{p} tokens"
            )));
        }
        let (tn, th, tw) = (n / g, h / p, w / p);
        let tokens = (0..tn * th * tw)
            .into_par_iter()
            .map_init(
                || Vec::with_capacity(self.dim),
                |buf, i| {
                    let (t, y, x) = (i / (th * tw), (i / tw) % th, i % tw);
                    patch_at(window, t * g, y * p, x * p, g, p, buf);
                    nearest(&self.codebook, self.dim, buf)
                },
            )
            .collect();
        Ok(TokenGrid {
            frames: tn,
            height: th,
            width: tw,
            tokens,
        })
    }

    fn decode(&self, grid: &TokenGrid, frame_rate: f64) -> Result<Video> {
        let (p, g) = (self.descriptor.patch_size, self.descriptor.token_frames);
        if let Some(&z) = grid.tokens.iter().find(|&&z| z as usize >= self.vocabulary()) {
            return Err(Error::Contract(format!("token {z} outside the vocabulary")));
        }
        let mut out = Video::zeros(grid.frames * g, grid.height * p, grid.width * p, frame_rate);
        for t in 0..grid.frames {
            for y in 0..grid.height {
                for x in 0..grid.width {
                    let z = grid.tokens[grid.index(t, y, x)] as usize;
                    let code = &self.codebook[z * self.dim..(z + 1) * self.dim];
                    let mut k = 0;
                    for ft in 0..g {
                        for py in 0..p {
                            let row = out.row_mut(t * g + ft, y * p + py);
                            row[x * p * CHANNELS..(x + 1) * p * CHANNELS].copy_from_slice(&code[k..k + p * CHANNELS]);
                            k += p * CHANNELS;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn predict(&self, grid: &TokenGrid, known: &[bool]) -> Result<CategoricalField> {
        if known.len() != grid.len() {
            return Err(Error::Contract("token mask length differs from the grid".into()));
        }
        let v = self.vocabulary();
        let mut probs = vec![0.0f32; grid.len() * v];
        probs.par_chunks_mut(v).enumerate().for_each(|(i, out)| {
            if known[i] {
                out[grid.tokens[i] as usize] = 1.0;
            } else {
                let (t, y, x) = (i / (grid.height * grid.width), (i / grid.width) % grid.height, i % grid.width);
                self.histogram(grid, known, t, y, x, out);
            }
        });
        Ok(CategoricalField {
            frames: grid.frames,
            height: grid.height,
            width: grid.width,
            vocab: v,
            probs,
            committed: None,
        })
    }
}

/// Key of a token sampling pass.
#[derive(Debug, Clone, Copy)]
pub struct TokenPassKey {
    pub seed: u64,
    pub level: usize,
    pub pass: u64,
    pub window: usize,
}

/// Confidence-ordered unmasking over a canvas-wide token grid. Every round
/// predicts each spatial window, averages the distributions over overlaps,
/// samples every still-masked token, and commits the most confident ones so
/// that the masked fraction follows a cosine schedule.
pub fn token_iterative_sample(
    backend: &dyn TokenBackend,
    tokens: &TokenGrid,
    known: &[bool],
    layout: &WindowLayout,
    iterations: usize,
    key: TokenPassKey,
) -> Result<TokenGrid> {
    let p = backend.descriptor().patch_size;
    let lattice = layout.to_token_lattice(p)?;
    if lattice.canvas_width != tokens.width || known.len() != tokens.len() {
        return Err(Error::Layout(format!(
            "token grid {} wide, layout {} wide",
            tokens.width, lattice.canvas_width
        )));
    }
    let mut grid = tokens.clone();
    let mut known = known.to_vec();
    let initial = known.iter().filter(|&&k| !k).count();
    let iterations = iterations.max(1);
    for round in 0..iterations {
        let masked: Vec<usize> = (0..known.len()).filter(|&i| !known[i]).collect();
        if masked.is_empty() {
            break;
        }
        let fields: Vec<Result<CategoricalField>> = lattice
            .lefts()
            .par_iter()
            .map(|&x0| {
                let crop = grid.crop(0, grid.frames, x0, lattice.native_width);
                let flags = crop_flags(&known, &grid, 0, grid.frames, x0, lattice.native_width);
                let f = backend.predict(&crop, &flags)?;
                f.check()?;
                Ok(f)
            })
            .collect();
        let fields = fields.into_iter().collect::<Result<Vec<_>>>()?;
        let probs = aggregate_categorical(&fields, layout, p)?;
        let mut draws: Vec<(usize, u32, f32)> = masked
            .par_iter()
            .map(|&i| {
                let mut r = rng::keyed(&[key.seed, tag::TOKEN, key.level as u64, key.pass, key.window as u64, round as u64, i as u64]);
                let d = probs.distribution(i);
                let u: f32 = r.random();
                let mut acc = 0.0;
                let mut z = d.len() - 1;
                for (k, &pk) in d.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        z = k;
                        break;
                    }
                }
                (i, z as u32, d[z])
            })
            .collect();
        let remaining = if round + 1 == iterations {
            0
        } else {
            let frac = (FRAC_PI_2 * (round + 1) as f64 / iterations as f64).cos();
            ((initial as f64 * frac).floor() as usize).min(masked.len() - 1)
        };
        let commit = masked.len() - remaining;
        draws.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        for &(i, z, _) in &draws[..commit] {
            grid.tokens[i] = z;
            known[i] = true;
        }
    }
    Ok(grid)
}

/// Encodes a canvas-wide video window by window; each token column comes from
/// the window whose center is nearest.
pub fn encode_canvas(backend: &dyn TokenBackend, video: &Video, layout: &WindowLayout) -> Result<TokenGrid> {
    let p = backend.descriptor().patch_size;
    let lattice = layout.to_token_lattice(p)?;
    let frames: Vec<usize> = (0..video.frames()).collect();
    let grids: Vec<Result<TokenGrid>> = layout
        .lefts()
        .par_iter()
        .map(|&x0| backend.encode(&video.window(&frames, x0, layout.native_width)))
        .collect();
    let grids = grids.into_iter().collect::<Result<Vec<_>>>()?;
    let first = &grids[0];
    let mut out = TokenGrid::new(first.frames, first.height, lattice.canvas_width, 0);
    let half = lattice.native_width as f64 / 2.0;
    for c in 0..lattice.canvas_width {
        let owner = (0..lattice.len())
            .filter(|&i| c >= lattice.lefts()[i] && c < lattice.lefts()[i] + lattice.native_width)
            .min_by(|&a, &b| {
                let da = (lattice.lefts()[a] as f64 + half - c as f64 - 0.5).abs();
                let db = (lattice.lefts()[b] as f64 + half - c as f64 - 0.5).abs();
                da.total_cmp(&db)
            })
            .expect("layout covers every column");
        let g = &grids[owner];
        let lx = c - lattice.lefts()[owner];
        for t in 0..out.frames {
            for y in 0..out.height {
                let i = out.index(t, y, c);
                out.tokens[i] = g.tokens[g.index(t, y, lx)];
            }
        }
    }
    Ok(out)
}

/// Decodes each window's tokens and blends the pixels with the layout weights.
pub fn decode_canvas(backend: &dyn TokenBackend, grid: &TokenGrid, layout: &WindowLayout, frame_rate: f64) -> Result<Video> {
    let p = backend.descriptor().patch_size;
    let lattice = layout.to_token_lattice(p)?;
    let parts: Vec<Result<Video>> = lattice
        .lefts()
        .par_iter()
        .map(|&x0| backend.decode(&grid.crop(0, grid.frames, x0, lattice.native_width), frame_rate))
        .collect();
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let (n, h) = (parts[0].frames(), parts[0].height());
    let w = layout.canvas_width;
    let mut acc = vec![0.0f64; n * h * w * CHANNELS];
    for (i, part) in parts.iter().enumerate() {
        let x0 = layout.lefts()[i];
        for t in 0..n {
            for y in 0..h {
                let row = part.row(t, y);
                for x in 0..part.width() {
                    let wt = layout.weight(i, x0 + x);
                    let d = ((t * h + y) * w + x0 + x) * CHANNELS;
                    for c in 0..CHANNELS {
                        acc[d + c] += wt * row[x * CHANNELS + c] as f64;
                    }
                }
            }
        }
    }
    Video::from_data(n, h, w, frame_rate, acc.into_iter().map(|v| v as f32).collect())
}
