//! Command-line driver: synthesize sensor logs, run the estimator, score
//! trajectories, and run constraint-set ablations.

use clap::{Parser, Subcommand};
use liuw_odom::config::Config;
use liuw_odom::eval::{evaluate, even_checkpoints, read_tum, write_tum, Metrics};
use liuw_odom::log_io::{read_log, write_log, Payload};
use liuw_odom::pipeline::{run, PipelineConfig, PipelineOutput};
use liuw_odom::sim::sensors::synthesize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "liuw-odom", version, about = "Multi-sensor odometry pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a sensor log from the simulator.
    Simulate {
        /// TOML configuration file (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the simulation seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output JSONL log path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the estimator over a sensor log.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input JSONL log path.
        #[arg(long)]
        log: PathBuf,
        /// Directory for trajectory.tum, degradation.csv, modes.csv, map.xyz.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score an estimated trajectory against ground truth (TUM files).
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Number of evenly spaced checkpoints.
        #[arg(long, default_value_t = 15)]
        checkpoints: usize,
    },
    /// Compare constraint sets on one log: full, no UWB, no wheel, LiDAR+IMU only.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        log: PathBuf,
        /// Directory for the per-variant trajectory files.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version are successful exits; any usage error is 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> liuw_odom::Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => simulate_cmd(config.as_deref(), seed, &out),
        Command::Run { config, log, out_dir } => run_cmd(config.as_deref(), &log, &out_dir),
        Command::Eval { est, gt, checkpoints } => eval_cmd(&est, &gt, checkpoints),
        Command::Ablate { config, log, out_dir } => ablate_cmd(config.as_deref(), &log, &out_dir),
    }
}

fn load_config(path: Option<&Path>) -> liuw_odom::Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn simulate_cmd(config: Option<&Path>, seed: Option<u64>, out: &Path) -> liuw_odom::Result<()> {
    let cfg = load_config(config)?;
    let mut sim = cfg.sim_config();
    if let Some(s) = seed {
        sim.seed = s;
    }
    let records = synthesize(&sim);
    let mut w = BufWriter::new(File::create(out)?);
    write_log(&mut w, &records)?;
    w.flush()?;

    let mut counts = [("imu", 0usize), ("wheel", 0), ("uwb_range", 0), ("uwb_fix", 0), ("lidar", 0), ("ground_truth", 0)];
    for r in &records {
        let i = match r.payload {
            Payload::Imu(_) => 0,
            Payload::Wheel(_) => 1,
            Payload::UwbRange(_) => 2,
            Payload::UwbFix(_) => 3,
            Payload::Lidar(_) => 4,
            Payload::GroundTruth(_) => 5,
        };
        counts[i].1 += 1;
    }
    println!("wrote {} records to {}", records.len(), out.display());
    for (kind, n) in counts {
        println!("  {kind}: {n}");
    }
    Ok(())
}

fn run_cmd(config: Option<&Path>, log: &Path, out_dir: &Path) -> liuw_odom::Result<()> {
    let cfg = load_config(config)?;
    let records = read_log(BufReader::new(File::open(log)?))?;
    let pipe = cfg.pipeline_config();
    let out = run(&records, &pipe)?;
    std::fs::create_dir_all(out_dir)?;
    write_outputs(&out, out_dir)?;

    if out.ground_truth.is_empty() {
        println!("no ground truth in log; skipping metrics");
        return Ok(());
    }
    let metrics = score(&out)?;
    print!("{}", metrics.summary());
    Ok(())
}

fn write_outputs(out: &PipelineOutput, dir: &Path) -> liuw_odom::Result<()> {
    let mut w = File::create(dir.join("trajectory.tum"))?;
    write_tum(&mut w, &out.trajectory)?;
    if !out.ground_truth.is_empty() {
        let mut w = File::create(dir.join("ground_truth.tum"))?;
        write_tum(&mut w, &out.ground_truth)?;
    }

    let mut w = BufWriter::new(File::create(dir.join("degradation.csv"))?);
    writeln!(w, "{}", liuw_odom::degradation::DegradationReport::csv_header())?;
    for d in &out.diagnostics {
        writeln!(w, "{}", d.report.csv_row(d.t))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("modes.csv"))?);
    writeln!(w, "t,mode,lidar_blocks,uwb_blocks,wheel_blocks,gated_uwb,iters,skipped")?;
    for d in &out.diagnostics {
        writeln!(
            w,
            "{:.6},{},{},{},{},{},{},{}",
            d.t, d.mode.as_str(), d.lidar_blocks, d.uwb_blocks, d.wheel_blocks, d.gated_uwb, d.iters, d.skipped as u8
        )?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join("map.xyz"))?);
    out.map.export_ascii(&mut w)?;
    w.flush()?;
    Ok(())
}

fn score(out: &PipelineOutput) -> liuw_odom::Result<Metrics> {
    let cps = even_checkpoints(&out.trajectory, &out.ground_truth, 15)?;
    evaluate(&out.trajectory, &out.ground_truth, &cps)
}

fn eval_cmd(est: &Path, gt: &Path, checkpoints: usize) -> liuw_odom::Result<()> {
    let est = read_tum(BufReader::new(File::open(est)?))?;
    let gt = read_tum(BufReader::new(File::open(gt)?))?;
    let cps = even_checkpoints(&est, &gt, checkpoints)?;
    let m = evaluate(&est, &gt, &cps)?;
    print!("{}", m.summary());
    Ok(())
}

/// The four ablation variants, in reporting order.
fn variants(base: &PipelineConfig) -> Vec<(&'static str, PipelineConfig)> {
    let mut full = base.clone();
    full.enable_uwb = true;
    full.enable_wheel = true;
    let mut no_uwb = base.clone();
    no_uwb.enable_uwb = false;
    no_uwb.enable_wheel = true;
    let mut no_wheel = base.clone();
    no_wheel.enable_uwb = true;
    no_wheel.enable_wheel = false;
    let mut lio = base.clone();
    lio.enable_uwb = false;
    lio.enable_wheel = false;
    vec![
        ("full", full),
        ("no-uwb", no_uwb),
        ("no-wheel", no_wheel),
        ("lio-only", lio),
    ]
}

fn ablate_cmd(config: Option<&Path>, log: &Path, out_dir: &Path) -> liuw_odom::Result<()> {
    let cfg = load_config(config)?;
    let records = read_log(BufReader::new(File::open(log)?))?;
    std::fs::create_dir_all(out_dir)?;
    let base = cfg.pipeline_config();

    println!("{:<10} {:>12} {:>12} {:>12}", "variant", "avg_err", "final_err", "total_err");
    for (name, pipe) in variants(&base) {
        let out = run(&records, &pipe)?;
        let mut w = File::create(out_dir.join(format!("trajectory_{name}.tum")))?;
        write_tum(&mut w, &out.trajectory)?;
        let m = score(&out)?;
        println!(
            "{:<10} {:>12.6} {:>12.6} {:>12.6}",
            name, m.avg_err, m.final_error, m.total_err
        );
    }
    Ok(())
}
