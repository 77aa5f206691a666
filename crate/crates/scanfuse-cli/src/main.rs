//! Command-line driver: simulate sensor runs, execute the fusion pipeline
//! or its baselines, evaluate reports, and study the Riccati gain.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use scanfuse::covariance::{cov_from_csv, cov_to_csv};
use scanfuse::iekf;
use scanfuse::pipeline::{
    self, evaluate, format_metrics, load_report_csv, run_pipeline_with_map, Config, RunMode,
};
use scanfuse::sim::{self, Scene, ScriptKind, TrajectoryScript};

#[derive(Parser)]
#[command(name = "scanfuse", version, about = "Depth-scan / gyro fusion pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sensor run.
    Simulate {
        /// Scene name: box_room, cluttered_room, flat_wall, corridor.
        #[arg(long, default_value = "box_room")]
        scene: String,
        /// Trajectory: stationary, yaw_sweep, full_turn, waypoint_path.
        #[arg(long, default_value = "yaw_sweep")]
        script: String,
        /// Duration in seconds.
        #[arg(long, default_value_t = 35.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional config file overriding simulation parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the pipeline over a stored sensor run.
    Run {
        /// Input directory produced by `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// fused | icp | gyro
        #[arg(long, default_value = "fused")]
        mode: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for report.csv, filter_log.csv, map.ply.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a report directory, optionally against a baseline.
    Eval {
        /// Directory containing report.csv.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Iterate the discrete Riccati recursion for constant noise matrices
    /// and print the gain trajectory next to the stationary gain.
    GainStudy {
        /// 6x6 process-noise matrix, six CSV rows.
        #[arg(long)]
        m: PathBuf,
        /// 6x6 observation-noise matrix, six CSV rows.
        #[arg(long)]
        n: PathBuf,
        /// Update interval in seconds.
        #[arg(long)]
        dt: f64,
        /// Number of recursion steps.
        #[arg(long)]
        steps: usize,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<Config> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(Config::parse(&text)?)
        }
        None => Ok(Config::default()),
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate { scene, script, duration, seed, out, config } => {
            let config = load_config(&config)?;
            let scene = Scene::by_name(&scene, seed)?;
            let kind = ScriptKind::parse(&script)?;
            let script =
                TrajectoryScript::new(kind, duration, config.sim_yaw_rate, config.sim_speed);
            let run = sim::make_run(
                &scene,
                &script,
                &config.sensor_rates(),
                &config.sensor_noise(),
                &config.camera_model(),
                seed,
            );
            sim::save_run(&run, &out)?;
            println!(
                "wrote {} gyro samples, {} scans to {}",
                run.gyro.len(),
                run.scans.len(),
                out.display()
            );
        }
        Command::Run { input, mode, config, out } => {
            let config = load_config(&config)?;
            let mode = RunMode::parse(&mode)?;
            let run = sim::load_run(&input)?;
            let (report, map) = run_pipeline_with_map(&run, &config, mode)?;
            std::fs::create_dir_all(&out)?;
            pipeline::write_report_csv(&report, &out.join("report.csv"))?;
            pipeline::write_filter_log(&report, &out.join("filter_log.csv"))?;
            map.export_ply(&out.join("map.ply"))?;
            let metrics = evaluate(&report);
            print!("{}", format_metrics(&format!("mode: {}", report.mode.as_str()), &metrics));
            println!("map points              {}", report.map_points);
            if let Some(w) = report.wall_overlap_m {
                println!("wall overlap (m)        {w:.4}");
            }
        }
        Command::Eval { report, baseline } => {
            let main_report = load_report_csv(&report_path(&report)?)?;
            let metrics = evaluate(&main_report);
            print!(
                "{}",
                format_metrics(&format!("report: {}", report.display()), &metrics)
            );
            pipeline::write_series_csv(&metrics, &report.join("eval_series.csv"))?;
            println!("series written to {}", report.join("eval_series.csv").display());
            if let Some(base) = baseline {
                let base_report = load_report_csv(&report_path(&base)?)?;
                let base_metrics = evaluate(&base_report);
                print!(
                    "\n{}",
                    format_metrics(&format!("baseline: {}", base.display()), &base_metrics)
                );
                if base_metrics.angle_std_deg > 0.0 {
                    println!(
                        "\nangle-error std ratio (report/baseline): {:.3}",
                        metrics.angle_std_deg / base_metrics.angle_std_deg
                    );
                }
            }
        }
        Command::GainStudy { m, n, dt, steps } => {
            let m = cov_from_csv(&std::fs::read_to_string(&m)?)?;
            let n = cov_from_csv(&std::fs::read_to_string(&n)?)?;
            if dt <= 0.0 || steps == 0 {
                bail!("dt must be positive and steps nonzero");
            }
            let p0 = scanfuse::Cov6::identity() * 1e-3;
            let study = iekf::gain_study(&m, &n, dt, steps, &p0)?;
            println!("step,gain_frobenius,rel_distance_to_stationary");
            let stationary_norm = study.stationary.norm();
            for (k, gain) in study.gains.iter().enumerate() {
                let dist = (gain - study.stationary).norm() / stationary_norm;
                println!("{},{:.9e},{:.9e}", k + 1, gain.norm(), dist);
            }
            println!("\nstationary gain (M N^-1)^(1/2):");
            print!("{}", cov_to_csv(&study.stationary));
        }
    }
    Ok(())
}

fn report_path(dir: &Path) -> anyhow::Result<PathBuf> {
    let direct = dir.join("report.csv");
    if direct.exists() {
        return Ok(direct);
    }
    if dir.extension().map(|e| e == "csv").unwrap_or(false) {
        return Ok(dir.to_path_buf());
    }
    bail!("no report.csv under {}", dir.display())
}
