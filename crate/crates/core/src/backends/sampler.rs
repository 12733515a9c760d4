//! Ancestral sampling over a canvas of overlapping windows.
//!
//! One shared state covers the whole working canvas. At every step each
//! (temporal, spatial) window is predicted independently, the predictions are
//! blended with the layout weights, one sample is drawn from the blend, and
//! pinned pixels are replaced by the observed content noised to the new step.

use rayon::prelude::*;

use crate::aggregate::{temporal_weights, GaussianAccumulator, WeightKind, WindowLayout};
use crate::backends::{GaussianBackend, GaussianField, MaskSchedule, NoiseSchedule, WindowRequest};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::video::Video;

/// Everything a sampling pass needs besides the backend.
#[derive(Debug, Clone, Copy)]
pub struct SamplerJob<'a> {
    pub level: usize,
    /// Distinguishes passes over the same level (forward/backward).
    pub pass: u64,
    pub seed: u64,
    /// Observed content over the working canvas, in processing order.
    pub observed: &'a Video,
    pub schedule: &'a MaskSchedule,
    pub layout: &'a WindowLayout,
    /// Temporal frame ranges, all of equal length.
    pub temporal: &'a [(usize, usize)],
    pub temporal_weights: WeightKind,
    pub time_reversed: bool,
}

struct Window {
    temporal: usize,
    spatial: usize,
    frames: Vec<usize>,
    real: usize,
}

fn windows(job: &SamplerJob<'_>, context: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (j, &(s, e)) in job.temporal.iter().enumerate() {
        let mut frames: Vec<usize> = (s..e).collect();
        let real = frames.len();
        // short levels are padded by repeating their last frame
        frames.resize(context.max(real), e - 1);
        for i in 0..job.layout.len() {
            out.push(Window {
                temporal: j,
                spatial: i,
                frames: frames.clone(),
                real,
            });
        }
    }
    out
}

fn check(job: &SamplerJob<'_>, backend: &dyn GaussianBackend) -> Result<()> {
    let d = backend.descriptor();
    let (n, h, w) = job.observed.dims();
    if job.schedule.frames() != n || job.schedule.mask_at(0).dims() != (n, h, w) {
        return Err(Error::Dimension("mask schedule does not match the observed canvas".into()));
    }
    if h != d.native_height || job.layout.native_width != d.native_width || job.layout.canvas_width != w {
        return Err(Error::Contract(format!(
            "canvas {h}x{w} with {}-wide windows does not fit a {}x{} backend",
            job.layout.native_width, d.native_height, d.native_width
        )));
    }
    if job.temporal.is_empty() || job.temporal.iter().any(|r| r.1 - r.0 > d.context_frames || r.1 > n || r.0 >= r.1) {
        return Err(Error::Contract(format!(
            "temporal windows {:?} exceed the {}-frame context or {n} frames",
            job.temporal, d.context_frames
        )));
    }
    Ok(())
}

/// Runs the full schedule and returns the final sample.
pub fn ddpm_sample(backend: &dyn GaussianBackend, job: &SamplerJob<'_>) -> Result<Video> {
    check(job, backend)?;
    let d = backend.descriptor();
    let steps = job.schedule.steps();
    let noise = NoiseSchedule::linear(steps);
    let (n, h, w) = job.observed.dims();
    let tw = temporal_weights(job.temporal, n, job.temporal_weights);
    let wins = windows(job, d.context_frames);
    let chunk = rayon::current_num_threads().clamp(1, 8);
    let frame_len = h * w * 3;
    let key = |t: u64, step: usize, frame: usize| [job.seed, t, job.level as u64, job.pass, step as u64, frame as u64];

    let uses_state = backend.uses_state();
    let mut state = job.observed.like(n, h, w);
    if uses_state {
        state
            .data_mut()
            .par_chunks_mut(frame_len)
            .enumerate()
            .for_each(|(t, f)| rng::fill_normal(&key(tag::INIT, 0, t), f));
    }
    // With a state-blind backend every step but the last is overwritten
    // without being read.
    let first = if uses_state { 0 } else { steps - 1 };
    let mut acc = GaussianAccumulator::new(n, h, w);

    for step in first..steps {
        let t = steps - step;
        let pinned = job.schedule.mask_at(step);
        acc.reset();
        for group in wins.chunks(chunk) {
            let fields: Vec<Result<GaussianField>> = group
                .par_iter()
                .map(|win| {
                    let x0 = job.layout.lefts()[win.spatial];
                    let observed = job.observed.window(&win.frames, x0, d.native_width);
                    let mask = pinned.window(&win.frames, x0, d.native_width);
                    let crop = uses_state.then(|| state.window(&win.frames, x0, d.native_width));
                    let req = WindowRequest {
                        level: job.level,
                        level_frames: n,
                        frames: &win.frames,
                        x0,
                        canvas: (h, w),
                        observed: &observed,
                        pinned: &mask,
                        state: crop.as_ref(),
                        step,
                        t,
                        noise: &noise,
                        time_reversed: job.time_reversed,
                        seed: job.seed,
                    };
                    let field = backend.predict(&req)?;
                    field.check(win.frames.len(), d.native_height, d.native_width)?;
                    Ok(field)
                })
                .collect();
            for (win, field) in group.iter().zip(fields) {
                let mut field = field?;
                // drop padded frames before blending
                field.frames = win.real;
                field.mu.truncate(win.real * h * d.native_width * 3);
                if let Some(s) = &mut field.sigma {
                    s.truncate(win.real * h * d.native_width * 3);
                }
                let x0 = job.layout.lefts()[win.spatial];
                acc.add(&field, &win.frames[..win.real], x0, |f, x| {
                    tw.weight(win.temporal, f) * job.layout.weight(win.spatial, x)
                });
            }
        }
        let blended = acc.finish();
        let ab_prev = noise.alpha_bar(t - 1);
        state
            .data_mut()
            .par_chunks_mut(frame_len)
            .enumerate()
            .for_each(|(f, out)| {
                let range = f * frame_len..(f + 1) * frame_len;
                out.copy_from_slice(&blended.mu[range.clone()]);
                if let Some(var) = &blended.sigma {
                    let var = &var[range];
                    if var.iter().any(|&v| v > 0.0) {
                        let mut eps = vec![0.0f32; frame_len];
                        rng::fill_normal(&key(tag::STEP, step, f), &mut eps);
                        for ((o, v), e) in out.iter_mut().zip(var).zip(&eps) {
                            *o += v.sqrt() * e;
                        }
                    }
                }
                let obs = job.observed.frame(f);
                let m = pinned.frame(f);
                if t == 1 {
                    for (p, &on) in m.iter().enumerate() {
                        if on {
                            out[p * 3..p * 3 + 3].copy_from_slice(&obs[p * 3..p * 3 + 3]);
                        }
                    }
                } else if m.iter().any(|&v| v) {
                    let mut eps = vec![0.0f32; frame_len];
                    rng::fill_normal(&key(tag::PIN, step, f), &mut eps);
                    let (a, b) = (ab_prev.sqrt() as f32, (1.0 - ab_prev).sqrt() as f32);
                    for (p, &on) in m.iter().enumerate() {
                        if on {
                            for c in p * 3..p * 3 + 3 {
                                out[c] = a * obs[c] + b * eps[c];
                            }
                        }
                    }
                }
            });
    }
    Ok(state)
}
