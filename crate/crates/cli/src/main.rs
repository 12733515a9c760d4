//! `panovid`: panoramic video completion from the command line.

use std::os::unix::net::UnixListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panovid_core::bench::{
    make_synthetic, preset, procedural_source, write_synthetic, PanTrajectory, SceneMotion, DEFAULT_CROP_RATIO, DEFAULT_FRAMES,
    DEFAULT_FRAME_RATE,
};
use panovid_core::backends::server;
use panovid_core::eval::{evaluate, write_report};
use panovid_core::io::{load_mask_for, load_video_auto, save_json, save_mask, save_video, VideoFormat};
use panovid_core::job::{inspect, run_job, standalone_backend, BackendSpec, JobConfig};
use panovid_core::registration::{fit_canvas, project_to_canvas, register_video};
use panovid_core::{Error, Result};

#[derive(Parser)]
#[command(name = "panovid", version, about = "Panoramic video completion")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop a synthetic panning input out of a wide source video.
    SynthBench {
        /// Wide source video; a procedural scene is generated when absent.
        #[arg(long)]
        src: Option<PathBuf>,
        /// Procedural scene as `kind[:speed]` (static, drift, half-moving, object).
        #[arg(long, default_value = "object:1")]
        scene: SceneMotion,
        /// Procedural canvas height.
        #[arg(long, default_value_t = 128)]
        height: usize,
        /// Procedural canvas width.
        #[arg(long, default_value_t = 512)]
        width: usize,
        /// left-right, left-right-left, static or custom.
        #[arg(long, default_value = "left-right-left")]
        preset: String,
        /// Trajectory file for `--preset custom`.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_FRAMES)]
        frames: usize,
        /// Crop width as a fraction of the source width.
        #[arg(long, default_value_t = DEFAULT_CROP_RATIO)]
        crop_ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the camera path and project frames onto the canvas.
    Register {
        #[arg(long = "in")]
        input: PathBuf,
        /// Focal length in pixels; estimated when absent.
        #[arg(long)]
        focal: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a completion job.
    Complete {
        #[arg(long)]
        job: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Score a completed panorama against ground truth.
    Evaluate {
        /// Completed canvas video.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Canvas mask of the observed input.
        #[arg(long)]
        mask: PathBuf,
        /// Canvas input, for the input-fidelity check.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Report directory (default: `metrics` next to `--out`).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Number of strip images.
        #[arg(long, default_value_t = 4)]
        strips: usize,
    },
    /// Summarize and dump the intermediates of one pyramid level.
    Inspect {
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        level: usize,
        /// Sample seed (default: the first of the job).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve a built-in backend over the external socket protocol.
    Serve {
        /// Backend spec as JSON, e.g. `{"kind": "interpolation"}`.
        #[arg(long)]
        backend: String,
        /// Socket path (default: `$PANOVID_SOCKET`).
        #[arg(long, env = "PANOVID_SOCKET")]
        socket: PathBuf,
    },
}

fn synth_bench(
    src: Option<&Path>,
    scene: SceneMotion,
    (height, width): (usize, usize),
    preset_name: &str,
    trajectory: Option<&Path>,
    frames: usize,
    crop_ratio: f64,
    out: &Path,
) -> Result<()> {
    let src = match src {
        Some(p) => load_video_auto(p)?,
        None => procedural_source(frames, height, width, DEFAULT_FRAME_RATE, scene),
    };
    let traj = if preset_name == "custom" {
        let path = trajectory.ok_or_else(|| Error::Config("--preset custom needs --trajectory".into()))?;
        PanTrajectory::load(path)?
    } else {
        if !(crop_ratio > 0.0 && crop_ratio <= 1.0) {
            return Err(Error::Config(format!("crop ratio {crop_ratio} outside (0, 1]")));
        }
        let crop = ((src.width() as f64 * crop_ratio).round() as usize).max(1);
        preset(preset_name, src.width(), src.height(), crop, frames.min(src.frames()), src.frame_rate)?
    };
    let s = make_synthetic(&src, &traj)?;
    write_synthetic(&s, out)?;
    let job = serde_json::json!({
        "schema_version": panovid_core::job::JOB_SCHEMA_VERSION,
        "input": {"video": "input", "camera": "camera.json", "ground_truth": "gt"},
        "output": "job",
        "backend": {"kind": "interpolation"},
    });
    save_json(&job, &out.join("job.json"))?;
    println!("wrote {} frames of {}x{} to {}", s.input.frames(), s.input.width(), s.input.height(), out.display());
    Ok(())
}

fn register(input: &Path, focal: Option<f64>, out: &Path) -> Result<()> {
    let video = load_video_auto(input)?;
    let cam = register_video(&video, focal, 0)?;
    let geom = fit_canvas(&cam, video.width(), video.height())?;
    let (canvas, mask) = project_to_canvas(&video, &cam, &geom)?;
    cam.save(&out.join("camera.json"))?;
    save_video(&canvas, &out.join("canvas"), VideoFormat::PngDir)?;
    save_mask(&mask, &out.join("mask"))?;
    println!("focal {:.2}, canvas {}x{}", cam.focal, canvas.width(), canvas.height());
    Ok(())
}

fn serve(spec: &str, socket: &Path) -> Result<()> {
    let spec: BackendSpec = serde_json::from_str(spec).map_err(|e| Error::Config(format!("backend spec: {e}")))?;
    let backend = standalone_backend(&spec)?;
    let _ = std::fs::remove_file(socket);
    let listener = UnixListener::bind(socket).map_err(|e| Error::io(socket, e))?;
    log::info!("serving {} on {}", backend.descriptor().flavor, socket.display());
    server::serve(&backend, &listener, None).map_err(|e| Error::io(socket, e))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::SynthBench {
            src,
            scene,
            height,
            width,
            preset,
            trajectory,
            frames,
            crop_ratio,
            out,
        } => synth_bench(src.as_deref(), scene, (height, width), &preset, trajectory.as_deref(), frames, crop_ratio, &out),
        Command::Register { input, focal, out } => register(&input, focal, &out),
        Command::Complete { job, seed, samples } => {
            let cfg = JobConfig::load(&job)?;
            let resolved = run_job(&cfg, seed, samples)?;
            println!("completed seeds {:?} into {}", resolved.seeds, resolved.output.display());
            Ok(())
        }
        Command::Evaluate {
            out,
            gt,
            mask,
            input,
            report,
            strips,
        } => {
            let y = load_video_auto(&out)?;
            let gt = load_video_auto(&gt)?;
            let m = load_mask_for(&mask, &y)?;
            let x = input.as_deref().map(load_video_auto).transpose()?;
            let r = evaluate(&y, Some(&gt), &m, x.as_ref(), &Default::default())?;
            let dir = report.unwrap_or_else(|| out.parent().unwrap_or(Path::new(".")).join("metrics"));
            write_report(&r, &y, Some(&gt), &m, &dir, strips)?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            if let Some(p) = &r.psnr {
                println!("psnr all {} static {} dynamic {}", fmt(p.all), fmt(p.static_), fmt(p.dynamic));
            }
            if let Some(e) = &r.epe {
                println!("epe  all {} static {} dynamic {}", fmt(e.all), fmt(e.static_), fmt(e.dynamic));
            }
            println!("report in {}", dir.display());
            Ok(())
        }
        Command::Serve { backend, socket } => serve(&backend, &socket),
        Command::Inspect { job, level, seed } => {
            for s in inspect(&job, level, seed)? {
                println!(
                    "{:5} {} frames {}x{} mean [{:.4}, {:.4}, {:.4}]",
                    s.stage, s.frames, s.width, s.height, s.mean[0], s.mean[1], s.mean[2]
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
