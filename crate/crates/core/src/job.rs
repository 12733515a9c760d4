//! Declarative completion jobs: a versioned JSON config, its resolution
//! against flavor defaults, and the runner that writes the job directory.
//!
//! Job directory layout:
//!
//! ```text
//! <output>/resolved_config.json
//! <output>/canvas/            registered input on the canvas
//! <output>/mask/              its validity mask
//! <output>/sample_<seed>/panorama/
//! <output>/sample_<seed>/checkpoints/level_<k>/{up,merge,out}/
//! <output>/sample_<seed>/metrics/   when ground truth is configured
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aggregate::WeightKind;
use crate::align::FlowParams;
use crate::backends::{
    Backend, BackendDescriptor, ConstantBackend, DiffusionMock, Endpoint, ExternalBackend, Flavor, InterpolationBackend, MaskMode,
    OracleBackend, TokenMock,
};
use crate::c2f::run_coarse_to_fine;
use crate::config::{working_canvas, PipelineConfig, UpsampleMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_report};
use crate::io::{load_json, load_mask_for, load_video_auto, resolve, save_json, save_mask, save_video, VideoFormat};
use crate::pyramid::build_pyramid;
use crate::registration::{fit_canvas, project_to_canvas, register_video, CameraModel};
use crate::video::{resize_mask, resize_video, Mask, Video};

pub const JOB_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    /// Input video (PNG directory or `.y4m`).
    pub video: PathBuf,
    /// Canvas-space validity mask. With a mask and no camera, `video` is
    /// taken to be already on the canvas.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    /// Known camera path; registration runs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<PathBuf>,
    /// Focal length in pixels for registration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal: Option<f64>,
    /// Canvas-space ground truth; enables metrics and the oracle backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

/// Partial descriptor; unset fields come from the flavor default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorOverrides {
    pub context_frames: Option<usize>,
    pub native_height: Option<usize>,
    pub native_width: Option<usize>,
    pub causal: Option<bool>,
    pub sampling_steps: Option<usize>,
    pub vocabulary_size: Option<usize>,
    pub patch_size: Option<usize>,
    pub token_frames: Option<usize>,
}

impl DescriptorOverrides {
    fn apply(&self, mut d: BackendDescriptor) -> BackendDescriptor {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { d.$f = v; })*};
        }
        set!(context_frames, native_height, native_width, causal, sampling_steps, vocabulary_size, patch_size, token_frames);
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum EndpointSpec {
    Socket(PathBuf),
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        socket: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Replays the configured ground truth.
    Oracle {
        #[serde(default)]
        descriptor: DescriptorOverrides,
    },
    /// Linear interpolation in time.
    Interpolation {
        #[serde(default)]
        descriptor: DescriptorOverrides,
        #[serde(default)]
        sigma0: f32,
    },
    /// Closed-form Gaussian denoiser.
    DiffusionMock {
        #[serde(default)]
        descriptor: DescriptorOverrides,
        #[serde(default = "default_prior_std")]
        prior_std: f64,
    },
    Constant {
        #[serde(default)]
        descriptor: DescriptorOverrides,
        mu: f32,
        variance: f32,
    },
    /// Codebook tokenizer with a histogram predictor.
    TokenMock {
        #[serde(default)]
        descriptor: DescriptorOverrides,
    },
    /// A backend served by another process.
    External {
        endpoint: EndpointSpec,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_prior_std() -> f64 {
    0.05
}

fn default_timeout() -> f64 {
    60.0
}

fn yes() -> bool {
    true
}

impl BackendSpec {
    /// The descriptor for built-in backends; `None` for external ones, which
    /// report their own.
    pub fn descriptor(&self) -> Option<BackendDescriptor> {
        let (o, base) = match self {
            BackendSpec::Oracle { descriptor }
            | BackendSpec::Interpolation { descriptor, .. }
            | BackendSpec::DiffusionMock { descriptor, .. }
            | BackendSpec::Constant { descriptor, .. } => (descriptor, BackendDescriptor::gaussian_default()),
            BackendSpec::TokenMock { descriptor } => (descriptor, BackendDescriptor::token_default()),
            BackendSpec::External { .. } => return None,
        };
        Some(o.apply(base))
    }
}

/// Partial pipeline settings; unset fields come from the flavor default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineOverrides {
    pub spatial_stride: Option<usize>,
    pub temporal_overlap: Option<usize>,
    pub aggregate_weights: Option<WeightKind>,
    pub mask_mode: Option<MaskMode>,
    pub upsample: Option<UpsampleMode>,
    pub align: Option<bool>,
    pub flow: Option<FlowParams>,
    pub token_iterations: Option<usize>,
    pub resynthesize: Option<bool>,
}

impl PipelineOverrides {
    pub fn apply(&self, mut c: PipelineConfig) -> PipelineConfig {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(spatial_stride, temporal_overlap, aggregate_weights, mask_mode, upsample, align, flow, token_iterations, resynthesize);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub schema_version: u32,
    pub input: InputSpec,
    /// Job directory.
    pub output: PathBuf,
    pub backend: BackendSpec,
    #[serde(default)]
    pub pipeline: PipelineOverrides,
    /// Write per-level intermediates.
    #[serde(default = "yes")]
    pub checkpoints: bool,
    /// Strip images per sample when metrics are written.
    #[serde(default = "default_strips")]
    pub strips: usize,
}

fn default_strips() -> usize {
    4
}

impl JobConfig {
    /// Reads a config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: JobConfig = load_json(path)?;
        if cfg.schema_version != JOB_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {JOB_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let i = &mut self.input;
        i.video = resolve(base, &i.video);
        for p in [&mut i.mask, &mut i.camera, &mut i.ground_truth].into_iter().flatten() {
            *p = resolve(base, p);
        }
        self.output = resolve(base, &self.output);
        if let BackendSpec::External { endpoint, .. } = &mut self.backend {
            match endpoint {
                EndpointSpec::Socket(s) | EndpointSpec::Command { socket: s, .. } => *s = resolve(base, s),
            }
        }
    }
}

/// Everything a run used, defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub input: InputSpec,
    pub output: PathBuf,
    pub backend: BackendSpec,
    pub descriptor: BackendDescriptor,
    pub pipeline: PipelineConfig,
    pub checkpoints: bool,
    pub strips: usize,
    pub seeds: Vec<u64>,
}

/// Canvas video and mask for a job's input.
pub fn load_canvas(input: &InputSpec) -> Result<(Video, Mask)> {
    let video = load_video_auto(&input.video)?;
    if let Some(cam) = &input.camera {
        let cam = CameraModel::load(cam)?;
        let geom = fit_canvas(&cam, video.width(), video.height())?;
        return project_to_canvas(&video, &cam, &geom);
    }
    if let Some(mask) = &input.mask {
        let mask = load_mask_for(mask, &video)?;
        return Ok((video, mask));
    }
    log::info!("no camera given, registering {} frames", video.frames());
    let cam = register_video(&video, input.focal, 0)?;
    let geom = fit_canvas(&cam, video.width(), video.height())?;
    project_to_canvas(&video, &cam, &geom)
}

fn build_backend(
    spec: &BackendSpec,
    descriptor: &BackendDescriptor,
    pipeline: &PipelineConfig,
    canvas: (&Video, &Mask),
    truth: Option<&Video>,
    seed: u64,
    external: &mut Option<Arc<ExternalBackend>>,
) -> Result<Backend> {
    let d = descriptor.clone();
    Ok(match spec {
        BackendSpec::Oracle { .. } => {
            let truth = truth.ok_or_else(|| Error::Config("the oracle backend needs input.ground_truth".into()))?;
            Backend::Gaussian(Arc::new(OracleBackend::new(d, truth.clone())))
        }
        BackendSpec::Interpolation { sigma0, .. } => Backend::Gaussian(Arc::new(InterpolationBackend::new(d, *sigma0))),
        BackendSpec::DiffusionMock { prior_std, .. } => Backend::Gaussian(Arc::new(DiffusionMock::with_prior_std(d, *prior_std))),
        BackendSpec::Constant { mu, variance, .. } => Backend::Gaussian(Arc::new(ConstantBackend::new(d, *mu, *variance))),
        BackendSpec::TokenMock { .. } => {
            let (x0, m0) = canvas;
            let wc = working_canvas(x0.height(), x0.width(), &d, pipeline)?;
            let xs = resize_video(x0, wc.height, wc.width);
            let ms = resize_mask(m0, wc.height, wc.width, 0.999);
            Backend::Token(Arc::new(TokenMock::fit(d, &xs, &ms, seed)?))
        }
        BackendSpec::External { endpoint, timeout_secs } => {
            let b = match external {
                Some(b) => b.clone(),
                None => {
                    let ep = match endpoint.clone() {
                        EndpointSpec::Socket(p) => Endpoint::Socket(p),
                        EndpointSpec::Command { program, args, socket } => Endpoint::Command { program, args, socket },
                    };
                    let b = Arc::new(ExternalBackend::connect(ep, Duration::from_secs_f64(*timeout_secs))?);
                    *external = Some(b.clone());
                    b
                }
            };
            match b.descriptor().flavor {
                Flavor::Gaussian => Backend::Gaussian(b),
                Flavor::Token => Backend::Token(b),
            }
        }
    })
}

/// Builds a backend that needs no input data, for serving over a socket.
pub fn standalone_backend(spec: &BackendSpec) -> Result<Backend> {
    match spec {
        BackendSpec::Interpolation { .. } | BackendSpec::DiffusionMock { .. } | BackendSpec::Constant { .. } => {
            let d = spec.descriptor().expect("built-in backend");
            d.validate()?;
            let p = PipelineConfig::defaults_for(d.flavor);
            let empty = (Video::zeros(0, 0, 0, 1.0), Mask::new(0, 0, 0, false));
            build_backend(spec, &d, &p, (&empty.0, &empty.1), None, 0, &mut None)
        }
        _ => Err(Error::Config(
            "only interpolation, diffusion-mock and constant backends can be served standalone".into(),
        )),
    }
}

/// Sample directory name for a seed.
pub fn sample_dir(output: &Path, seed: u64) -> PathBuf {
    output.join(format!("sample_{seed}"))
}

/// Runs `samples` completions with seeds `seed..seed + samples` and returns
/// the resolved configuration.
pub fn run_job(config: &JobConfig, seed: u64, samples: usize) -> Result<ResolvedConfig> {
    if samples == 0 {
        return Err(Error::Config("at least one sample is required".into()));
    }
    let (x0, m0) = load_canvas(&config.input)?;
    let truth = config.input.ground_truth.as_deref().map(load_video_auto).transpose()?;
    if let Some(t) = &truth {
        if t.dims() != x0.dims() {
            return Err(Error::Dimension(format!(
                "ground truth {:?} does not match the canvas {:?}",
                t.dims(),
                x0.dims()
            )));
        }
    }
    let mut external = None;
    let descriptor = match config.backend.descriptor() {
        Some(d) => d,
        None => {
            let pipeline = PipelineConfig::defaults_for(Flavor::Gaussian);
            let b = build_backend(&config.backend, &BackendDescriptor::gaussian_default(), &pipeline, (&x0, &m0), None, seed, &mut external)?;
            b.descriptor().clone()
        }
    };
    descriptor.validate()?;
    let pipeline = config.pipeline.apply(PipelineConfig::defaults_for(descriptor.flavor));
    pipeline.validate(&descriptor)?;
    let seeds: Vec<u64> = (0..samples as u64).map(|i| seed + i).collect();
    let resolved = ResolvedConfig {
        schema_version: JOB_SCHEMA_VERSION,
        input: config.input.clone(),
        output: config.output.clone(),
        backend: config.backend.clone(),
        descriptor: descriptor.clone(),
        pipeline: pipeline.clone(),
        checkpoints: config.checkpoints,
        strips: config.strips,
        seeds: seeds.clone(),
    };
    let out = &config.output;
    save_json(&resolved, &out.join("resolved_config.json"))?;
    save_video(&x0, &out.join("canvas"), VideoFormat::PngDir)?;
    save_mask(&m0, &out.join("mask"))?;

    let pyramid = build_pyramid(&x0, &m0, descriptor.context_frames)?;
    log::info!("pyramid levels {:?}", pyramid.sizes());
    for &s in &seeds {
        let dir = sample_dir(out, s);
        let backend = build_backend(&config.backend, &descriptor, &pipeline, (&x0, &m0), truth.as_ref(), s, &mut external)?;
        let checkpoints = config.checkpoints;
        let ck_dir = dir.join("checkpoints");
        let y = run_coarse_to_fine(&pyramid, &backend, &pipeline, s, &mut |k, stage, v| {
            if checkpoints {
                save_video(v, &ck_dir.join(format!("level_{k}")).join(stage.name()), VideoFormat::PngDir)?;
            }
            Ok(())
        })?;
        save_video(&y, &dir.join("panorama"), VideoFormat::PngDir)?;
        if truth.is_some() {
            let report = evaluate(&y, truth.as_ref(), &m0, Some(&x0), &pipeline.flow)?;
            write_report(&report, &y, truth.as_ref(), &m0, &dir.join("metrics"), config.strips)?;
        }
        log::info!("sample {s} written to {}", dir.display());
    }
    Ok(resolved)
}

/// Summary of one stored intermediate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub path: PathBuf,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub mean: [f64; 3],
}

/// Loads the checkpoints of `level` for one sample (the lowest seed by
/// default), writes a middle-frame image of each stage under
/// `<job>/inspect/level_<k>/`, and summarizes them.
pub fn inspect(job_dir: &Path, level: usize, seed: Option<u64>) -> Result<Vec<StageSummary>> {
    let resolved: ResolvedConfig = load_json(&job_dir.join("resolved_config.json"))?;
    let seed = match seed {
        Some(s) => s,
        None => *resolved
            .seeds
            .first()
            .ok_or_else(|| Error::Config("job lists no samples".into()))?,
    };
    let base = sample_dir(job_dir, seed).join("checkpoints").join(format!("level_{level}"));
    if !base.is_dir() {
        return Err(Error::Config(format!("no checkpoints for level {level} at {}", base.display())));
    }
    let mut out = Vec::new();
    for stage in ["up", "merge", "out"] {
        let path = base.join(stage);
        if !path.is_dir() {
            continue;
        }
        let v = load_video_auto(&path)?;
        let mut mean = [0.0f64; 3];
        for px in v.data().chunks_exact(3) {
            for c in 0..3 {
                mean[c] += px[c] as f64;
            }
        }
        let count = (v.data().len() / 3).max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        let mid = v.frames() / 2;
        crate::io::save_png_rgb(
            &job_dir.join("inspect").join(format!("level_{level}")).join(format!("{stage}_{mid:06}.png")),
            v.width(),
            v.height(),
            v.frame(mid),
        )?;
        out.push(StageSummary {
            stage: stage.into(),
            path,
            frames: v.frames(),
            height: v.height(),
            width: v.width(),
            mean,
        });
    }
    Ok(out)
}
