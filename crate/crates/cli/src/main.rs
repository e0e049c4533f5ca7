use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use semslam::dataset_io::{
    load_checkpoint, load_scene, metrics_to_csv, save_checkpoint, save_scene, write_metrics_csv, write_ppm,
};
use semslam::pipeline_eval::{evaluate, loss_rows, plot_report, read_numeric_csv, run_slam, Model, PipelineConfig, LOSS_COLUMNS};
use semslam::scene_synth::{generate_scene, SynthConfig};
use semslam::splatting::{render, RenderSettings};
use semslam::tracking::write_trajectory;
use semslam::{Error, Result};

#[derive(Parser)]
#[command(name = "semslam", version, about = "Semantic Gaussian-splatting SLAM at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene.
    Synth {
        /// TOML synthesis settings; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track, map and evaluate a scene.
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// TOML pipeline settings; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against a scene.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Render one frame of a checkpoint at its estimated pose.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene providing the camera intrinsics.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot losses and metrics of a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
    },
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: SynthConfig = read_toml(config)?;
    let scene = generate_scene(&cfg)?;
    save_scene(&scene, out)?;
    info!("wrote {} frames to {}", scene.len(), out.display());
    Ok(())
}

fn run(scene_dir: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: PipelineConfig = read_toml(config)?;
    cfg.validate()?;
    let scene = load_scene(scene_dir)?;
    let result = run_slam(&scene, &cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    save_checkpoint(&result.checkpoint(), &out.join("checkpoint.bin"))?;
    write_metrics_csv(&loss_rows(&result.losses), &LOSS_COLUMNS, &out.join("losses.csv"))?;
    let t = &result.model.trajectory;
    write_trajectory(&out.join("trajectory.txt"), &t.poses, &t.keyframes())?;
    write_text(&out.join("bank.txt"), &result.model.bank.summary())?;
    let report = evaluate(&result.model, &scene)?;
    write_metrics_csv(&[report.to_row()], &[], &out.join("metrics.csv"))?;
    write_metrics_csv(&report.label_rows(), &["label", "iou", "frequency"], &out.join("labels.csv"))?;
    println!("{}", metrics_to_csv(&[report.to_row()], &[])?.trim_end());
    Ok(())
}

fn eval(checkpoint: &Path, scene_dir: &Path, report_path: &Path) -> Result<()> {
    let scene = load_scene(scene_dir)?;
    let model = Model::from_checkpoint(&load_checkpoint(checkpoint)?, &scene)?;
    let report = evaluate(&model, &scene)?;
    write_metrics_csv(&[report.to_row()], &[], report_path)?;
    println!("{}", metrics_to_csv(&[report.to_row()], &[])?.trim_end());
    Ok(())
}

fn render_frame(checkpoint: &Path, scene_dir: &Path, frame: usize, out: &Path) -> Result<()> {
    let scene = load_scene(scene_dir)?;
    let model = Model::from_checkpoint(&load_checkpoint(checkpoint)?, &scene)?;
    let pose = model
        .trajectory
        .poses
        .get(frame)
        .ok_or_else(|| Error::Validation(format!("frame {frame} is not in the trajectory")))?;
    let img = render(&model.map, &pose.inverse(), &scene.intrinsics, &RenderSettings::default());
    write_ppm(&img.color, out)
}

fn plot(run_dir: &Path) -> Result<()> {
    let (header, rows) = read_numeric_csv(&run_dir.join("losses.csv"))?;
    let metrics_path = run_dir.join("metrics.csv");
    let metrics = if metrics_path.exists() {
        let (h, r) = read_numeric_csv(&metrics_path)?;
        match r.first() {
            Some(row) => h.into_iter().zip(row.iter().copied()).filter(|(n, _)| n != "frames").collect(),
            None => Vec::new(),
        }
    } else {
        Vec::new()
    };
    for p in plot_report(&header, &rows, &metrics, run_dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Synth { config, out } => synth(config.as_deref(), out),
        Cmd::Run { scene, config, out } => run(scene, config.as_deref(), out),
        Cmd::Eval {
            checkpoint,
            scene,
            report,
        } => eval(checkpoint, scene, report),
        Cmd::Render {
            checkpoint,
            scene,
            frame,
            out,
        } => render_frame(checkpoint, scene, *frame, out),
        Cmd::Plot { run } => plot(run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
