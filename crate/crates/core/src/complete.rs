//! Completion of a level on a reduced working canvas.
//!
//! Content is resized to the backend's native height, synthesized across
//! overlapping spatial (and, when needed, temporal) windows, resized back,
//! and the pixels pinned by the final mask are restored from the full-size
//! input. The coarsest level is completed from its input mask alone; causal
//! backends complete it twice, forward and time-reversed.

use crate::aggregate::temporal_windows;
use crate::backends::{
    ddpm_sample, decode_canvas, derive_token_mask, encode_canvas, token_iterative_sample, Backend, GaussianBackend, MaskSchedule,
    SamplerJob, TokenBackend, TokenPassKey,
};
use crate::backends::token::crop_flags;
use crate::config::{working_canvas, PipelineConfig, WorkingCanvas};
use crate::error::{Error, Result};
use crate::video::{check_same_dims, composite, resize_mask, resize_video, Mask, Video};

/// Identifies one synthesis pass for keyed randomness.
#[derive(Debug, Clone, Copy)]
pub struct PassKey {
    pub level: usize,
    pub pass: u64,
    pub seed: u64,
}

/// Pass ids used by the driver.
pub mod pass {
    pub const FORWARD: u64 = 0;
    pub const BACKWARD: u64 = 1;
}

/// Synthesizes `observed` under `schedule` (both full size) and returns the
/// full-size result with the schedule's final mask restored from `observed`.
pub fn synthesize(
    backend: &Backend,
    observed: &Video,
    schedule: &MaskSchedule,
    config: &PipelineConfig,
    key: PassKey,
    time_reversed: bool,
) -> Result<Video> {
    check_same_dims(observed, schedule.final_mask())?;
    let d = backend.descriptor();
    config.validate(d)?;
    let (_, h, w) = observed.dims();
    let wc = working_canvas(h, w, d, config)?;
    let obs = resize_video(observed, wc.height, wc.width);
    let sched = schedule.map_masks(|m| resize_mask(m, wc.height, wc.width, 0.999));
    let work = match backend {
        Backend::Gaussian(b) => gaussian_pass(b.as_ref(), &obs, &sched, &wc, config, key, time_reversed)?,
        Backend::Token(b) => token_pass(b.as_ref(), &obs, &sched, &wc, config, key)?,
    };
    let mut full = resize_video(&work, h, w);
    full.frame_rate = observed.frame_rate;
    composite(observed, schedule.final_mask(), &full)
}

fn gaussian_pass(
    backend: &dyn GaussianBackend,
    observed: &Video,
    schedule: &MaskSchedule,
    wc: &WorkingCanvas,
    config: &PipelineConfig,
    key: PassKey,
    time_reversed: bool,
) -> Result<Video> {
    let n = observed.frames();
    let ctx = backend.descriptor().context_frames;
    let temporal = temporal_windows(n, ctx, config.temporal_overlap)?;
    ddpm_sample(
        backend,
        &SamplerJob {
            level: key.level,
            pass: key.pass,
            seed: key.seed,
            observed,
            schedule,
            layout: &wc.layout,
            temporal: &temporal,
            temporal_weights: config.aggregate_weights,
            time_reversed,
        },
    )
}

/// Encodes, resamples the unknown tokens and decodes, one temporal window at
/// a time. Each window after the first keeps the tokens the previous window
/// committed on their shared frames.
fn token_pass(
    backend: &dyn TokenBackend,
    observed: &Video,
    schedule: &MaskSchedule,
    wc: &WorkingCanvas,
    config: &PipelineConfig,
    key: PassKey,
) -> Result<Video> {
    let d = backend.descriptor();
    let (p, g) = (d.patch_size, d.token_frames);
    let n = observed.frames();
    if n % g != 0 {
        return Err(Error::Dimension(format!("{n} frames do not split into {g}-frame token groups")));
    }
    let known = derive_token_mask(schedule.mask_at(0), p, g)?;
    let ranges = temporal_windows(n / g, d.context_frames / g, config.temporal_overlap / g)?;
    let mut out = observed.clone();
    let mut prev: Option<(usize, usize, crate::backends::TokenGrid)> = None;
    for (j, &(s, e)) in ranges.iter().enumerate() {
        let frames: Vec<usize> = (s * g..e * g).collect();
        let mut grid = encode_canvas(backend, &observed.select_frames(&frames), &wc.layout)?;
        let full = crate::backends::TokenGrid {
            frames: n / g,
            ..grid.clone()
        };
        let mut flags = crop_flags(&known, &full, s, e - s, 0, grid.width);
        if let Some((ps, pe, ref pg)) = prev {
            // continuation: the overlap is conditioning, not resampled
            for t in s..pe.min(e) {
                for y in 0..grid.height {
                    for x in 0..grid.width {
                        let i = grid.index(t - s, y, x);
                        grid.tokens[i] = pg.tokens[pg.index(t - ps, y, x)];
                        flags[i] = true;
                    }
                }
            }
        }
        let sampled = token_iterative_sample(
            backend,
            &grid,
            &flags,
            &wc.layout,
            config.token_iterations,
            TokenPassKey {
                seed: key.seed,
                level: key.level,
                pass: key.pass,
                window: j,
            },
        )?;
        let decoded = decode_canvas(backend, &sampled, &wc.layout, observed.frame_rate)?;
        let first_new = prev.as_ref().map_or(s, |&(_, pe, _)| pe.max(s));
        for t in first_new * g..e * g {
            out.frame_mut(t).copy_from_slice(decoded.frame(t - s * g));
        }
        prev = Some((s, e, sampled));
    }
    Ok(out)
}

/// Completes the coarsest level from its input alone.
pub fn complete_base(x: &Video, m: &Mask, backend: &Backend, config: &PipelineConfig, key: PassKey) -> Result<Video> {
    let schedule = MaskSchedule::constant(m.clone(), backend.descriptor().sampling_steps.max(1));
    synthesize(backend, x, &schedule, config, key, false)
}

/// Pixels observed at or before each frame: where the forward pass of a
/// causal completion is used.
pub fn forward_region(m: &Mask) -> Mask {
    let (n, h, w) = m.dims();
    let mut out = Mask::new(n, h, w, false);
    let mut seen = vec![false; h * w];
    for t in 0..n {
        for (s, &v) in seen.iter_mut().zip(m.frame(t)) {
            *s |= v;
        }
        out.frame_mut(t).copy_from_slice(&seen);
    }
    out
}

/// Result of a two-pass completion.
#[derive(Debug, Clone)]
pub struct CausalCompletion {
    pub video: Video,
    pub forward: Video,
    pub backward: Video,
    /// True where the output was taken from the forward pass.
    pub from_forward: Mask,
}

/// Completes the coarsest level forward and time-reversed, taking the
/// forward result wherever the pixel had been observed at or before the
/// frame and the backward result elsewhere.
pub fn complete_base_causal(x: &Video, m: &Mask, backend: &Backend, config: &PipelineConfig, key: PassKey) -> Result<CausalCompletion> {
    let fwd_key = PassKey {
        pass: pass::FORWARD,
        ..key
    };
    let bwd_key = PassKey {
        pass: pass::BACKWARD,
        ..key
    };
    let steps = backend.descriptor().sampling_steps.max(1);
    let forward = synthesize(backend, x, &MaskSchedule::constant(m.clone(), steps), config, fwd_key, false)?;
    let backward = synthesize(
        backend,
        &x.reversed(),
        &MaskSchedule::constant(m.reversed(), steps),
        config,
        bwd_key,
        true,
    )?
    .reversed();
    let from_forward = forward_region(m);
    let video = composite(&forward, &from_forward, &backward)?;
    Ok(CausalCompletion {
        video,
        forward,
        backward,
        from_forward,
    })
}
