//! Command-line front end: `synth`, `train`, `render`, `eval`. The binary is
//! a thin wrapper around [`run`], which returns the process exit code
//! (0 = ok, 1 = runtime failure, 2 = usage/config error).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::buffer::{MaskImage, ScalarImage};
use crate::data_io::{
    export_ply, generate_synthetic, load_dataset, load_gt_sidecar, load_ply, write_color_png,
    write_depth_png, SyntheticScene,
};
use crate::error::{Result, SplatError};
use crate::init::InitConfig;
use crate::losses::{LossWeights, LOSS_CSV_HEADER};
use crate::metrics::{
    depth_error, hallucination_iou, psnr, render_fps, ssim, EvalReport, FrameMetrics,
};
use crate::model::Camera;
use crate::optim::{fit_first_frame, fit_next_frame, FitConfig, GroupRates, TrainSchedule};
use crate::render::{render_from_cloud, RenderOptions};

#[derive(Parser)]
#[command(
    name = "rgbdsplat",
    about = "Dynamic Gaussian-splatting reconstruction from single-view RGBD video",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGBD dataset with exact ground truth
    Synth(SynthArgs),
    /// Fit the first frame, then track every subsequent frame
    Train(TrainArgs),
    /// Render a checkpoint's color/depth/hallucination channels to PNGs
    Render(RenderArgs),
    /// Compute image/depth/hallucination metrics for a finished run
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Scene preset: "sheet" (deforming, occluded) or "flat" (static plane)
    #[arg(long, default_value = "sheet")]
    preset: String,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// Square image size in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop the occluder bar from the scene
    #[arg(long, default_value_t = false)]
    no_occluder: bool,
    /// Gaussian color-noise standard deviation
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration (see RunConfig; unknown keys rejected)
    #[arg(long)]
    config: PathBuf,
    /// Override the dataset path from the config
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override the output path from the config
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker thread count (default: all cores); results are identical for any value
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    /// PLY checkpoint to render
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory supplying the camera
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for PNGs
    #[arg(long)]
    out: PathBuf,
    /// Channel to write: color | depth | hallucination | all
    #[arg(long, default_value = "all")]
    channel: String,
    /// Camera translation override, applied in camera space
    #[arg(long, default_value_t = 0.0)]
    dx: f64,
    #[arg(long, default_value_t = 0.0)]
    dy: f64,
    #[arg(long, default_value_t = 0.0)]
    dz: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory containing frame_*.ply checkpoints
    #[arg(long)]
    run: PathBuf,
    /// Dataset the run was trained on
    #[arg(long)]
    dataset: PathBuf,
}

/// Complete training configuration; serialized into the run manifest so every
/// run records its resolved settings. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: String,
    pub output: String,
    pub seed: u64,
    pub first_frame_iters: usize,
    pub per_frame_iters: usize,
    pub lr_position_per_extent: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_hallucination: f64,
    pub prune_interval: usize,
    pub prune_opacity_threshold: f64,
    pub densify_enabled: bool,
    pub free_appearance_per_frame: bool,
    pub lambda_image: f64,
    pub lambda_depth: f64,
    pub lambda_rigid: f64,
    pub lambda_rotation: f64,
    pub lambda_isometry: f64,
    pub lambda_hallucination: f64,
    pub lambda_smoothness: f64,
    pub w_filled: f64,
    pub huber_delta: f64,
    pub graph_k: usize,
    pub lambda_w: f64,
    pub init_stride: usize,
    pub sh_degree: usize,
    pub background: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = TrainSchedule::default();
        let r = GroupRates::default();
        let w = LossWeights::default();
        let f = FitConfig::default();
        let i = InitConfig::default();
        Self {
            dataset: String::new(),
            output: String::new(),
            seed: 0,
            first_frame_iters: s.first_frame_iters,
            per_frame_iters: s.per_frame_iters,
            lr_position_per_extent: r.position_per_extent,
            lr_rotation: r.rotation,
            lr_scale: r.scale,
            lr_opacity: r.opacity,
            lr_color: r.color,
            lr_hallucination: r.hallucination,
            prune_interval: s.prune_interval,
            prune_opacity_threshold: s.prune_opacity_threshold,
            densify_enabled: s.densify_enabled,
            free_appearance_per_frame: s.free_appearance_per_frame,
            lambda_image: w.image,
            lambda_depth: w.depth,
            lambda_rigid: w.rigid,
            lambda_rotation: w.rotation,
            lambda_isometry: w.isometry,
            lambda_hallucination: w.hallucination,
            lambda_smoothness: w.smoothness,
            w_filled: w.w_filled,
            huber_delta: w.huber_delta,
            graph_k: f.graph_k,
            lambda_w: f.lambda_w,
            init_stride: i.stride,
            sh_degree: i.sh_degree,
            background: [0.0; 3],
        }
    }
}

impl RunConfig {
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            schedule: TrainSchedule {
                first_frame_iters: self.first_frame_iters,
                per_frame_iters: self.per_frame_iters,
                rates: GroupRates {
                    position_per_extent: self.lr_position_per_extent,
                    rotation: self.lr_rotation,
                    scale: self.lr_scale,
                    opacity: self.lr_opacity,
                    color: self.lr_color,
                    hallucination: self.lr_hallucination,
                },
                prune_interval: self.prune_interval,
                prune_opacity_threshold: self.prune_opacity_threshold,
                densify_enabled: self.densify_enabled,
                free_appearance_per_frame: self.free_appearance_per_frame,
            },
            weights: LossWeights {
                image: self.lambda_image,
                depth: self.lambda_depth,
                rigid: self.lambda_rigid,
                rotation: self.lambda_rotation,
                isometry: self.lambda_isometry,
                hallucination: self.lambda_hallucination,
                smoothness: self.lambda_smoothness,
                w_filled: self.w_filled,
                huber_delta: self.huber_delta,
            },
            init: InitConfig {
                stride: self.init_stride,
                sh_degree: self.sh_degree,
                ..Default::default()
            },
            render: RenderOptions {
                background: self.background,
                ..Default::default()
            },
            graph_k: self.graph_k,
            lambda_w: self.lambda_w,
        }
    }
}

/// Parses and executes; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SplatError::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.size == 0 || a.frames == 0 {
        return Err(SplatError::Config("--size and --frames must be > 0".into()));
    }
    let mut scene = SyntheticScene {
        width: a.size,
        height: a.size,
        frames: a.frames,
        noise_sigma: a.noise,
        ..Default::default()
    };
    match a.preset.as_str() {
        "sheet" => {}
        "flat" => {
            scene.amplitude = 0.0;
            scene.occluder = None;
        }
        other => {
            return Err(SplatError::Config(format!(
                "unknown preset '{other}' (expected sheet | flat)"
            )))
        }
    }
    if a.no_occluder {
        scene.occluder = None;
    }
    let manifest = generate_synthetic(&scene, a.seed, &a.out)?;
    println!(
        "wrote {} frames ({}×{}) to {}",
        manifest.frames.len(),
        manifest.width,
        manifest.height,
        a.out.display()
    );
    Ok(())
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(SplatError::Config("--threads must be > 0".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| SplatError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        SplatError::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| SplatError::Config(format!("config {}: {e}", path.display())))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    init_threads(a.threads)?;
    let mut config = read_config(&a.config)?;
    if let Some(d) = a.dataset {
        config.dataset = d.display().to_string();
    }
    if let Some(o) = a.output {
        config.output = o.display().to_string();
    }
    if config.dataset.is_empty() || config.output.is_empty() {
        return Err(SplatError::Config(
            "dataset and output must be set (config keys or --dataset/--output)".into(),
        ));
    }
    train(&config)
}

/// The full training pipeline, exposed for tests: loads the dataset, fits
/// frame 0, tracks the remaining frames, and writes checkpoints + logs.
pub fn train(config: &RunConfig) -> Result<()> {
    let dataset_root = PathBuf::from(&config.dataset);
    let out_root = PathBuf::from(&config.output);
    let (_, camera, frames) = load_dataset(&dataset_root)?;
    fs::create_dir_all(&out_root).map_err(|e| SplatError::Dataset {
        context: out_root.display().to_string(),
        detail: e.to_string(),
    })?;
    let fit = config.fit_config();
    let mut log = fs::File::create(out_root.join("loss.csv")).map_err(|e| SplatError::Dataset {
        context: "loss.csv".into(),
        detail: e.to_string(),
    })?;
    writeln!(log, "{LOSS_CSV_HEADER}").ok();

    let (mut cloud, graph) = fit_first_frame(&frames[0], &camera, &fit, |it, b| {
        writeln!(log, "{}", b.csv_row(it, 0)).ok();
    })?;
    export_ply(&cloud, &out_root.join("frame_0000.ply"))?;
    for (fi, frame) in frames.iter().enumerate().skip(1) {
        cloud = fit_next_frame(&cloud, frame, &graph, &camera, &fit, |it, b| {
            writeln!(log, "{}", b.csv_row(it, fi)).ok();
        })?;
        export_ply(&cloud, &out_root.join(format!("frame_{fi:04}.ply")))?;
    }
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "frames_trained": frames.len(),
    });
    fs::write(
        out_root.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap(),
    )
    .map_err(|e| SplatError::Dataset {
        context: "run_manifest.json".into(),
        detail: e.to_string(),
    })?;
    println!("trained {} frames → {}", frames.len(), out_root.display());
    Ok(())
}

fn write_gray_png(img: &ScalarImage, path: &Path) -> Result<()> {
    let mut out = image::GrayImage::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let v = (img.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    out.save(path).map_err(|e| SplatError::Dataset {
        context: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let (manifest, camera, _) = load_dataset(&a.dataset)?;
    let cloud = load_ply(&a.checkpoint)?;
    let camera = if a.dx != 0.0 || a.dy != 0.0 || a.dz != 0.0 {
        let mut w = camera.world_to_camera;
        w[(0, 3)] += a.dx;
        w[(1, 3)] += a.dy;
        w[(2, 3)] += a.dz;
        Camera::new(camera.fx, camera.fy, camera.cx, camera.cy, w, camera.width, camera.height)?
    } else {
        camera
    };
    let (out, _) = render_from_cloud(&cloud, &camera, &RenderOptions::default())?;
    fs::create_dir_all(&a.out).map_err(|e| SplatError::Dataset {
        context: a.out.display().to_string(),
        detail: e.to_string(),
    })?;
    let want = |c: &str| a.channel == "all" || a.channel == c;
    if !["all", "color", "depth", "hallucination"].contains(&a.channel.as_str()) {
        return Err(SplatError::Config(format!(
            "unknown channel '{}' (expected color | depth | hallucination | all)",
            a.channel
        )));
    }
    if want("color") {
        write_color_png(&out.color, &a.out.join("color.png"))?;
    }
    if want("depth") {
        // metric depth where coverage permits, invalid elsewhere
        let (w, h) = (camera.width, camera.height);
        let depth = ScalarImage::from_fn(w, h, |x, y| {
            let alpha = out.alpha.get(x, y);
            if alpha >= 0.5 {
                out.depth.get(x, y) / alpha
            } else {
                0.0
            }
        });
        let valid = MaskImage::from_fn(w, h, |x, y| out.alpha.get(x, y) >= 0.5);
        write_depth_png(&depth, &valid, manifest.depth_scale, &a.out.join("depth.png"))?;
    }
    if want("hallucination") {
        write_gray_png(&out.hallucination, &a.out.join("hallucination.png"))?;
    }
    println!("rendered {} → {}", a.checkpoint.display(), a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let report = evaluate(&a.run, &a.dataset)?;
    fs::write(
        a.run.join("report.json"),
        serde_json::to_string_pretty(&report).unwrap(),
    )
    .map_err(|e| SplatError::Dataset {
        context: "report.json".into(),
        detail: e.to_string(),
    })?;
    fs::write(a.run.join("report.csv"), report.to_csv()).map_err(|e| SplatError::Dataset {
        context: "report.csv".into(),
        detail: e.to_string(),
    })?;
    let ssim_text = report
        .mean_ssim
        .map(|s| format!("{s:.4}"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "mean PSNR {:.2} dB, mean SSIM {ssim_text}, FPS {:.1}",
        report.mean_psnr_db, report.render_fps
    );
    Ok(())
}

/// Re-renders every checkpoint against its training frame and computes the
/// metric suite; ground-truth depth/occlusion metrics appear when the dataset
/// carries a sidecar, and stay null otherwise.
pub fn evaluate(run: &Path, dataset: &Path) -> Result<EvalReport> {
    let (_, camera, frames) = load_dataset(dataset)?;
    let opts = RenderOptions::default();
    let mut rows = Vec::new();
    let mut last_cloud = None;
    for (fi, frame) in frames.iter().enumerate() {
        let ckpt = run.join(format!("frame_{fi:04}.ply"));
        if !ckpt.exists() {
            return Err(SplatError::Dataset {
                context: run.display().to_string(),
                detail: format!(
                    "missing checkpoint {} for a {}-frame dataset",
                    ckpt.display(),
                    frames.len()
                ),
            });
        }
        let cloud = load_ply(&ckpt)?;
        let (out, _) = render_from_cloud(&cloud, &camera, &opts)?;
        let p = psnr(&out.color, &frame.image, &frame.tool_mask)?;
        let s = match ssim(&out.color, &frame.image, &frame.tool_mask) {
            Ok(v) => Some(v),
            Err(SplatError::EmptySupervision) => None,
            Err(e) => return Err(e),
        };
        let coverage = frame.tool_mask.count_set() as f64 / frame.tool_mask.data.len() as f64;
        let gt = load_gt_sidecar(dataset, fi).ok();
        let (mae, rmse, iou) = match &gt {
            Some(g) => {
                // a checkpoint with no confident coverage has no depth estimate
                let d = match depth_error(&out.depth, &out.alpha, &g.depth, &frame.tool_mask) {
                    Ok((mae, rmse)) => (Some(mae), Some(rmse)),
                    Err(SplatError::EmptySupervision) => (None, None),
                    Err(e) => return Err(e),
                };
                let iou = hallucination_iou(&out.hallucination, &g.occluded, 0.5)?;
                (d.0, d.1, Some(iou))
            }
            None => (None, None, None),
        };
        rows.push(FrameMetrics {
            frame: fi,
            psnr_db: p,
            ssim: s,
            mask_coverage: coverage,
            depth_mae: mae,
            depth_rmse: rmse,
            hallucination_iou: iou,
        });
        last_cloud = Some(cloud);
    }
    let fps = match &last_cloud {
        Some(c) => render_fps(c, &camera, &opts, 100)?,
        None => 0.0,
    };
    Ok(EvalReport::from_frames(rows, fps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_match_library_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.first_frame_iters, 2000);
        assert_eq!(c.per_frame_iters, 300);
        assert_eq!(c.lambda_rigid, 4.0);
        assert_eq!(c.graph_k, 20);
        assert_eq!(c.lambda_w, 2000.0);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"dataset": "x", "output": "y", "lambda_imgae": 1.0}"#).unwrap();
        let e = read_config(&p).unwrap_err();
        assert!(e.to_string().contains("lambda_imgae"), "{e}");
    }

    #[test]
    fn config_roundtrips_through_json() {
        let c = RunConfig {
            dataset: "d".into(),
            output: "o".into(),
            lambda_rigid: 7.5,
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.lambda_rigid, 7.5);
        assert_eq!(back.dataset, "d");
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["rgbdsplat", "synth", "--out", "/tmp/x", "--size", "0"]), 2);
        assert_eq!(run(["rgbdsplat", "nonsense"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(["rgbdsplat", "--help"]), 0);
        assert_eq!(run(["rgbdsplat", "train", "--help"]), 0);
    }

    #[test]
    fn synth_writes_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds");
        let code = run([
            "rgbdsplat",
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--preset",
            "sheet",
            "--frames",
            "2",
            "--size",
            "16",
            "--seed",
            "7",
        ]);
        assert_eq!(code, 0);
        assert!(out.join("manifest.json").exists());
        assert!(out.join("color/000001.png").exists());
        assert!(out.join("gt/depth_000001.pfm").exists());
    }

    #[test]
    fn missing_checkpoint_fails_eval() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dir.path().join("ds");
        let scene = SyntheticScene {
            width: 16,
            height: 16,
            frames: 1,
            occluder: None,
            ..Default::default()
        };
        generate_synthetic(&scene, 0, &ds).unwrap();
        let e = evaluate(dir.path(), &ds).unwrap_err().to_string();
        assert!(e.contains("missing checkpoint"), "{e}");
    }
}
