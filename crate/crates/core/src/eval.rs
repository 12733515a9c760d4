//! Evaluation against ground truth: region PSNR, flow endpoint error, and a
//! static/dynamic split by ground-truth flow magnitude.
//!
//! Scores are computed over the inpainted region (outside the input mask).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{dense_flow, estimate_grid_flow, FlowParams};
use crate::error::{Error, Result};
use crate::io::{save_json, save_png_rgb};
use crate::registration::Plane;
use crate::video::{check_same_dims, Mask, Video, CHANNELS};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
/// Flow magnitude (pixels per frame) above which a pixel is dynamic.
pub const DYNAMIC_THRESHOLD: f32 = 0.2;
pub const PSNR_CAP: f64 = 99.0;

/// Dense flow from frame `t` to frame `t + 1`.
pub fn frame_flow(v: &Video, t: usize, params: &FlowParams) -> Vec<[f32; 2]> {
    let (a, b) = (Plane::luma(v, t), Plane::luma(v, t + 1));
    let field = estimate_grid_flow(&a, &b, None, params);
    dense_flow(&a, &b, None, &field)
}

fn all_flows(v: &Video, params: &FlowParams) -> Vec<Vec<[f32; 2]>> {
    (0..v.frames().saturating_sub(1))
        .into_par_iter()
        .map(|t| frame_flow(v, t, params))
        .collect()
}

/// Per-pixel dynamic mask: flow magnitude to the next ground-truth frame
/// above `threshold`. The last frame reuses the previous frame's split; a
/// single frame is all static. Static is the complement.
pub fn split_static_dynamic(gt: &Video, params: &FlowParams, threshold: f32) -> Mask {
    let (n, h, w) = gt.dims();
    let mut dynamic = Mask::new(n, h, w, false);
    for (t, flow) in all_flows(gt, params).into_iter().enumerate() {
        for (m, f) in dynamic.frame_mut(t).iter_mut().zip(&flow) {
            *m = f[0].hypot(f[1]) > threshold;
        }
    }
    if n >= 2 {
        let prev = dynamic.frame(n - 2).to_vec();
        dynamic.frame_mut(n - 1).copy_from_slice(&prev);
    }
    dynamic
}

/// `10 log10(1 / MSE)` over pixels in both `region` and `eval`, capped at
/// 99 dB. `None` when no pixel qualifies.
pub fn psnr_region(out: &Video, gt: &Video, region: &Mask, eval: &Mask) -> Result<Option<f64>> {
    check_same_dims(out, region)?;
    check_same_dims(gt, eval)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, (&r, &e)) in region.data().iter().zip(eval.data()).enumerate() {
        if r && e {
            for c in i * CHANNELS..(i + 1) * CHANNELS {
                let d = (out.data()[c] - gt.data()[c]) as f64;
                sum += d * d;
            }
            count += CHANNELS;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    let mse = sum / count as f64;
    Ok(Some(if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }))
}

/// Mean L2 difference between consecutive-frame flows of `out` and `gt`
/// over pixels (of the first frame of each pair) in `region` and `eval`.
pub fn flow_epe(out: &Video, gt: &Video, region: &Mask, eval: &Mask, params: &FlowParams) -> Result<Option<f64>> {
    check_same_dims(out, region)?;
    check_same_dims(gt, eval)?;
    Ok(epe_from_flows(&all_flows(out, params), &all_flows(gt, params), region, eval))
}

fn epe_from_flows(fo: &[Vec<[f32; 2]>], fg: &[Vec<[f32; 2]>], region: &Mask, eval: &Mask) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (t, (a, b)) in fo.iter().zip(fg).enumerate() {
        for (p, (da, db)) in a.iter().zip(b).enumerate() {
            if region.frame(t)[p] && eval.frame(t)[p] {
                sum += ((da[0] - db[0]) as f64).hypot((da[1] - db[1]) as f64);
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Mean SSIM of luma over 7x7 box windows centered on pixels in `eval`.
pub fn ssim(out: &Video, gt: &Video, eval: &Mask) -> Result<Option<f64>> {
    check_same_dims(out, eval)?;
    check_same_dims(gt, eval)?;
    let (n, h, w) = out.dims();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let per_frame: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|t| {
            let (a, b) = (out.luma(t), gt.luma(t));
            let mut acc = (0.0, 0);
            for y in 0..h {
                for x in 0..w {
                    if !eval.get(t, y, x) {
                        continue;
                    }
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    for yy in y.saturating_sub(3)..(y + 4).min(h) {
                        for xx in x.saturating_sub(3)..(x + 4).min(w) {
                            let (p, q) = (a[yy * w + xx] as f64, b[yy * w + xx] as f64);
                            sa += p;
                            sb += q;
                            saa += p * p;
                            sbb += q * q;
                            sab += p * q;
                            k += 1.0;
                        }
                    }
                    let (ma, mb) = (sa / k, sb / k);
                    let (va, vb, cov) = (saa / k - ma * ma, sbb / k - mb * mb, sab / k - ma * mb);
                    acc.0 += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    acc.1 += 1;
                }
            }
            acc
        })
        .collect();
    let (s, c) = per_frame.iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((c > 0).then(|| s / c as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScores {
    pub all: Option<f64>,
    #[serde(rename = "static")]
    pub static_: Option<f64>,
    pub dynamic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub frame: usize,
    pub psnr: Option<f64>,
    pub psnr_static: Option<f64>,
    pub psnr_dynamic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFidelity {
    /// Largest absolute sample difference inside the input mask.
    pub max_abs_error: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub frames: usize,
    /// Fraction of canvas samples outside the input mask.
    pub inpainted_fraction: f64,
    pub psnr: Option<RegionScores>,
    pub epe: Option<RegionScores>,
    /// Auxiliary metric, not part of the benchmark protocol.
    pub ssim_aux: Option<f64>,
    pub input_fidelity: Option<InputFidelity>,
    pub per_frame: Vec<FrameScores>,
    pub dynamic_threshold: f32,
    pub flow: FlowParams,
}

/// Largest difference between `out` and `input` inside `mask`.
pub fn input_fidelity(out: &Video, input: &Video, mask: &Mask) -> Result<InputFidelity> {
    check_same_dims(out, mask)?;
    check_same_dims(input, mask)?;
    let mut worst = 0.0f64;
    for (i, &m) in mask.data().iter().enumerate() {
        if m {
            for c in i * CHANNELS..(i + 1) * CHANNELS {
                worst = worst.max((out.data()[c] - input.data()[c]).abs() as f64);
            }
        }
    }
    Ok(InputFidelity {
        max_abs_error: worst,
        exact: worst == 0.0,
    })
}

/// Scores `out` against `gt` outside `mask`. Without ground truth only input
/// fidelity (against `input`) is reported.
pub fn evaluate(out: &Video, gt: Option<&Video>, mask: &Mask, input: Option<&Video>, params: &FlowParams) -> Result<MetricsReport> {
    check_same_dims(out, mask)?;
    let (n, h, w) = out.dims();
    let eval = mask.not();
    let inpainted_fraction = eval.count() as f64 / (n * h * w) as f64;
    let input_fidelity = input.map(|x| input_fidelity(out, x, mask)).transpose()?;
    let mut report = MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        frames: n,
        inpainted_fraction,
        psnr: None,
        epe: None,
        ssim_aux: None,
        input_fidelity,
        per_frame: Vec::new(),
        dynamic_threshold: DYNAMIC_THRESHOLD,
        flow: *params,
    };
    let Some(gt) = gt else {
        return Ok(report);
    };
    if gt.dims() != out.dims() {
        return Err(Error::Dimension(format!("output {:?} vs ground truth {:?}", out.dims(), gt.dims())));
    }
    let fg = all_flows(gt, params);
    let fo = all_flows(out, params);
    let mut dynamic = Mask::new(n, h, w, false);
    for (t, flow) in fg.iter().enumerate() {
        for (m, f) in dynamic.frame_mut(t).iter_mut().zip(flow) {
            *m = f[0].hypot(f[1]) > DYNAMIC_THRESHOLD;
        }
    }
    if n >= 2 {
        let prev = dynamic.frame(n - 2).to_vec();
        dynamic.frame_mut(n - 1).copy_from_slice(&prev);
    }
    let stat = dynamic.not();
    let all = Mask::new(n, h, w, true);
    report.psnr = Some(RegionScores {
        all: psnr_region(out, gt, &all, &eval)?,
        static_: psnr_region(out, gt, &stat, &eval)?,
        dynamic: psnr_region(out, gt, &dynamic, &eval)?,
    });
    report.epe = Some(RegionScores {
        all: epe_from_flows(&fo, &fg, &all, &eval),
        static_: epe_from_flows(&fo, &fg, &stat, &eval),
        dynamic: epe_from_flows(&fo, &fg, &dynamic, &eval),
    });
    report.ssim_aux = ssim(out, gt, &eval)?;
    for t in 0..n {
        let f = [t];
        let (o, g, e) = (out.select_frames(&f), gt.select_frames(&f), eval.select_frames(&f));
        report.per_frame.push(FrameScores {
            frame: t,
            psnr: psnr_region(&o, &g, &all.select_frames(&f), &e)?,
            psnr_static: psnr_region(&o, &g, &stat.select_frames(&f), &e)?,
            psnr_dynamic: psnr_region(&o, &g, &dynamic.select_frames(&f), &e)?,
        });
    }
    Ok(report)
}

/// Frame `t` with the input region darkened and outlined.
pub fn strip_frame(v: &Video, mask: &Mask, t: usize) -> Vec<f32> {
    let (h, w) = (v.height(), v.width());
    let mut out = v.frame(t).to_vec();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(t, y, x) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(t, y, x - 1)
                || !mask.get(t, y, x + 1)
                || !mask.get(t, y - 1, x)
                || !mask.get(t, y + 1, x);
            let px = &mut out[(y * w + x) * CHANNELS..][..CHANNELS];
            if edge {
                px.fill(1.0);
            } else {
                px.iter_mut().for_each(|c| *c *= 0.6);
            }
        }
    }
    out
}

/// Writes `metrics.json` and, for a few evenly spaced frames, a PNG with
/// the output above the ground truth (when given).
pub fn write_report(report: &MetricsReport, out: &Video, gt: Option<&Video>, mask: &Mask, dir: &Path, strips: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_json(report, &dir.join("metrics.json"))?;
    let n = out.frames();
    let count = strips.min(n);
    for s in 0..count {
        let t = if count == 1 { 0 } else { s * (n - 1) / (count - 1) };
        let mut img = strip_frame(out, mask, t);
        let mut rows = out.height();
        if let Some(g) = gt {
            img.extend_from_slice(&strip_frame(g, mask, t));
            rows *= 2;
        }
        save_png_rgb(&dir.join(format!("strip_{t:06}.png")), out.width(), rows, &img)?;
    }
    Ok(())
}
