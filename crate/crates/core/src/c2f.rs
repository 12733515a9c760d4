//! Temporal coarse-to-fine driver.
//!
//! The coarsest pyramid level is completed first. Each finer level then
//! starts from the completed coarser level upsampled in time, with the
//! level's input composited over it, and is resynthesized under a mask
//! schedule that keeps the frames carried over from the coarser level. The
//! input pixels are composited over the finest result at the end.

use crate::align::{align_to, FlowParams};
use crate::backends::{Backend, MaskMode, MaskSchedule};
use crate::complete::{complete_base, complete_base_causal, pass, synthesize, PassKey};
use crate::config::{PipelineConfig, UpsampleMode};
use crate::error::{Error, Result};
use crate::pyramid::TemporalPyramid;
use crate::video::{check_same_dims, composite, Mask, Video};

/// Resamples `coarse` (frames at `coarse_times`) at `fine_times`.
///
/// Blending is linear between the bracketing coarse frames and copies the
/// end frames beyond the coarse range; a fine time equal to a coarse time
/// copies that frame exactly.
pub fn upsample_temporal(coarse: &Video, coarse_times: &[f64], fine_times: &[f64], mode: UpsampleMode) -> Result<Video> {
    if coarse_times.len() != coarse.frames() || coarse_times.is_empty() {
        return Err(Error::Dimension(format!(
            "{} coarse times for {} frames",
            coarse_times.len(),
            coarse.frames()
        )));
    }
    let (_, h, w) = coarse.dims();
    let mut out = coarse.like(fine_times.len(), h, w);
    let last = coarse_times.len() - 1;
    for (f, &tf) in fine_times.iter().enumerate() {
        // last coarse frame at or before tf
        let i = coarse_times.partition_point(|&c| c <= tf);
        let dst = out.frame_mut(f);
        if i == 0 || i > last {
            let k = if i == 0 { 0 } else { last };
            dst.copy_from_slice(coarse.frame(k));
            continue;
        }
        let (a, b) = (i - 1, i);
        let frac = ((tf - coarse_times[a]) / (coarse_times[b] - coarse_times[a])) as f32;
        match mode {
            UpsampleMode::Repeat => {
                let k = if frac > 0.5 { b } else { a };
                dst.copy_from_slice(coarse.frame(k));
            }
            UpsampleMode::Blend if frac == 0.0 => dst.copy_from_slice(coarse.frame(a)),
            UpsampleMode::Blend => {
                for ((o, &pa), &pb) in dst.iter_mut().zip(coarse.frame(a)).zip(coarse.frame(b)) {
                    *o = pa + (pb - pa) * frac;
                }
            }
        }
    }
    Ok(out)
}

/// Composites `x` over `up` where `m` holds. With `align`, `x` is first
/// warped and re-toned onto `up` and the warped mask is used instead.
/// Returns the merged video and the mask that was composited.
pub fn merge_input(x: &Video, m: &Mask, up: &Video, align: Option<&FlowParams>) -> Result<(Video, Mask)> {
    check_same_dims(x, m)?;
    match align {
        None => Ok((composite(x, m, up)?, m.clone())),
        Some(params) => {
            let (aligned, mask) = align_to(x, m, up, params, None)?;
            Ok((composite(&aligned, &mask, up)?, mask))
        }
    }
}

/// Frames of a level that also exist at the next coarser level. Halving
/// keeps every second frame, so these are the even indices.
pub fn coincident_frames(frames: usize) -> Vec<bool> {
    (0..frames).map(|t| t % 2 == 0).collect()
}

/// Coincident frames are pinned everywhere (for all steps in standard mode,
/// for the first `steps / 8` in fast-motion mode); other pixels follow `m`.
pub fn build_mask_schedule(m: &Mask, steps: usize, mode: MaskMode) -> Result<MaskSchedule> {
    let full_frame_steps = match mode {
        MaskMode::Standard => steps,
        MaskMode::FastMotion => steps / 8,
    };
    MaskSchedule::new(m.clone(), coincident_frames(m.frames()), full_frame_steps, steps)
}

/// Resynthesizes a merged level under `schedule`. Every level above the base
/// starts from a complete video, so a single forward pass is used even for
/// causal backends.
pub fn resynthesize(merged: &Video, schedule: &MaskSchedule, backend: &Backend, config: &PipelineConfig, level: usize, seed: u64) -> Result<Video> {
    let key = PassKey {
        level,
        pass: pass::FORWARD,
        seed,
    };
    synthesize(backend, merged, schedule, config, key, false)
}

/// Intermediate products reported to a checkpoint sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Coarser result upsampled to this level's frame rate.
    Up,
    /// Input composited over the upsampled video.
    Merge,
    /// Completed level.
    Out,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Up => "up",
            Stage::Merge => "merge",
            Stage::Out => "out",
        }
    }
}

/// Receives every intermediate video as `(level, stage, video)`.
pub type Checkpoint<'a> = &'a mut dyn FnMut(usize, Stage, &Video) -> Result<()>;

/// Completes the whole pyramid and composites the level-0 input over the
/// result.
pub fn run_coarse_to_fine(
    pyramid: &TemporalPyramid,
    backend: &Backend,
    config: &PipelineConfig,
    seed: u64,
    checkpoint: Checkpoint<'_>,
) -> Result<Video> {
    let d = backend.descriptor();
    config.validate(d)?;
    let k_max = pyramid.coarsest();
    let base = &pyramid.levels[k_max];
    log::info!("completing base level {k_max} ({} frames)", base.frames());
    let key = PassKey {
        level: k_max,
        pass: pass::FORWARD,
        seed,
    };
    let mut y = if d.causal {
        complete_base_causal(&base.video, &base.mask, backend, config, key)?.video
    } else {
        complete_base(&base.video, &base.mask, backend, config, key)?
    };
    checkpoint(k_max, Stage::Out, &y)?;

    let steps = d.sampling_steps.max(1);
    for k in (0..k_max).rev() {
        let level = &pyramid.levels[k];
        let coarse = &pyramid.levels[k + 1];
        log::info!("level {k}: {} frames", level.frames());
        let mut up = upsample_temporal(&y, &coarse.times, &level.times, config.upsample)?;
        up.frame_rate = level.video.frame_rate;
        checkpoint(k, Stage::Up, &up)?;
        let (merged, mask) = merge_input(&level.video, &level.mask, &up, config.align.then_some(&config.flow))?;
        checkpoint(k, Stage::Merge, &merged)?;
        y = if config.resynthesize {
            let schedule = build_mask_schedule(&mask, steps, config.mask_mode)?;
            resynthesize(&merged, &schedule, backend, config, k, seed)?
        } else {
            merged
        };
        checkpoint(k, Stage::Out, &y)?;
    }
    let level0 = &pyramid.levels[0];
    composite(&level0.video, &level0.mask, &y)
}
