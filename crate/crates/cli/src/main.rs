//! `aetrack` command-line harness: simulate scenarios, run trackers on frame
//! files, score runs against ground truth and benchmark the pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use aetrack::clustering::detect_target_detailed;
use aetrack::config;
use aetrack::eval::{
    diag_file_name, metrics_from_log, metrics_json, run_experiment, write_experiment, RunManifest, RunMetrics,
    RunOptions, Settings, MANIFEST_FILE,
};
use aetrack::io::{
    clusters_to_csv, diagnostics_from_csv, diagnostics_to_csv, frames_from_csv, frames_to_csv, read_text,
    truth_from_csv, truth_to_csv, write_atomic,
};
use aetrack::sim::{generate_scenario, preset, ScenarioConfig};
use aetrack::tracker::FilterKind;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

const FRAMES_FILE: &str = "frames.csv";
const TRUTH_FILE: &str = "truth.csv";
const CLUSTERS_FILE: &str = "clusters.csv";

#[derive(Parser)]
#[command(name = "aetrack", version, about = "Adaptive Kalman tracking of small aerial targets in sparse LiDAR scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Parameters shared by every subcommand that builds a configuration.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and write frames.csv and truth.csv.
    Simulate {
        #[arg(long, default_value = "aggressive")]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run one filter over a frames CSV and write its diagnostic log.
    Track {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, default_value = "caekf")]
        filter: FilterKind,
        #[arg(long)]
        out: PathBuf,
        /// Also write every cluster of every frame to clusters.csv.
        #[arg(long)]
        dump_clusters: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score the diagnostic logs in a run directory against ground truth.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Simulate a preset and run all three filters on it, writing data,
    /// diagnostics, metrics and the plot series.
    Run {
        #[arg(long, default_value = "aggressive")]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Time the full pipeline on a preset over consecutive seeds.
    Bench {
        #[arg(long, default_value = "aggressive")]
        preset: String,
        #[arg(long, default_value_t = 5)]
        repeat: u64,
        /// First seed; runs use seed, seed+1, ...
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write every run's metrics (with timings) here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn load_config(args: &ConfigArgs, scenario: ScenarioConfig) -> Result<(Settings, ScenarioConfig)> {
    let mut assignments = match &args.config {
        Some(path) => config::load(path)?,
        None => Vec::new(),
    };
    assignments.extend(config::parse_overrides(&args.set)?);
    let mut settings = Settings::default();
    let mut scenario = scenario;
    config::apply(&assignments, &mut settings, &mut scenario)?;
    settings.pipeline.validate()?;
    settings.filter.validate()?;
    Ok((settings, scenario))
}

fn scenario_for(preset_name: &str, seed: Option<u64>, args: &ConfigArgs) -> Result<(Settings, ScenarioConfig)> {
    let (settings, mut scenario) = load_config(args, preset(preset_name)?)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok((settings, scenario))
}

fn print_table(metrics: &[RunMetrics]) {
    println!(
        "{:<8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7} {:>10}",
        "filter", "rmse_x", "rmse_y", "rmse_z", "rmse_3d", "peak", "valid", "step_ms"
    );
    for m in metrics {
        println!(
            "{:<8} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>7.3} {:>10}",
            m.filter_name,
            m.rmse_x,
            m.rmse_y,
            m.rmse_z,
            m.rmse_3d,
            m.peak_error,
            m.valid_measurement_rate,
            m.mean_step_time.map(|t| format!("{t:.3}")).unwrap_or_else(|| "-".into())
        );
    }
}

fn simulate(preset_name: &str, seed: Option<u64>, out: &Path, cfg: &ConfigArgs) -> Result<()> {
    let (_, scenario) = scenario_for(preset_name, seed, cfg)?;
    let sc = generate_scenario(&scenario)?;
    write_atomic(&out.join(FRAMES_FILE), &frames_to_csv(&sc.frames))?;
    write_atomic(&out.join(TRUTH_FILE), &truth_to_csv(&sc.truth))?;
    let manifest = RunManifest {
        scenario_name: scenario.name.clone(),
        seed: scenario.seed,
        filters: Vec::new(),
    };
    write_atomic(&out.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    let points: usize = sc.frames.iter().map(|f| f.len()).sum();
    println!(
        "{}: {} frames, {points} points (seed {}) -> {}",
        scenario.name,
        sc.frames.len(),
        scenario.seed,
        out.display()
    );
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<Option<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = read_text(&path)?;
    Ok(Some(
        serde_json::from_str(&text).with_context(|| format!("{}: not a run manifest", path.display()))?,
    ))
}

fn track(frames_path: &Path, kind: FilterKind, out: &Path, dump_clusters: bool, cfg: &ConfigArgs) -> Result<()> {
    // a manifest written by simulate next to the frames names the scenario
    let mut base = ScenarioConfig::default();
    if let Some(m) = read_manifest(frames_path.parent().unwrap_or(Path::new(".")))? {
        base.name = m.scenario_name;
        base.seed = m.seed;
    }
    let (mut settings, scenario) = load_config(cfg, base)?;
    settings.particles.seed = scenario.seed;
    let frames = frames_from_csv(frames_path, &read_text(frames_path)?)?;
    let mut tracker = kind.build(&settings.filter, &settings.particles)?;

    let mut reports = Vec::with_capacity(frames.len());
    let mut dump = Vec::new();
    let start = Instant::now();
    for frame in &frames {
        let det = detect_target_detailed(frame, &settings.pipeline)?;
        reports.push(tracker.step(frame.frame_id, frame.timestamp, &det.candidates)?);
        if dump_clusters {
            dump.push((frame.frame_id, det.clusters));
        }
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;

    write_atomic(&out.join(diag_file_name(kind.name())), &diagnostics_to_csv(kind.name(), &reports))?;
    if dump_clusters {
        write_atomic(&out.join(CLUSTERS_FILE), &clusters_to_csv(&dump))?;
    }
    // keep the filter list from earlier runs in this directory
    let mut manifest = read_manifest(out)?.unwrap_or_default();
    manifest.scenario_name = scenario.name.clone();
    manifest.seed = scenario.seed;
    if !manifest.filters.iter().any(|f| f == kind.name()) {
        manifest.filters.push(kind.name().to_string());
        manifest.filters.sort();
    }
    write_atomic(&out.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;

    let accepted = reports.iter().filter(|r| r.accepted).count();
    println!(
        "{}: {} frames, {accepted} accepted, final status {}, {:.3} ms/frame -> {}",
        kind.name(),
        reports.len(),
        reports.last().map(|r| r.status.to_string()).unwrap_or_else(|| "-".into()),
        if frames.is_empty() { 0.0 } else { elapsed / frames.len() as f64 },
        out.display()
    );
    Ok(())
}

fn evaluate(truth_path: &Path, runs: &Path, report: &Path) -> Result<()> {
    let truth = truth_from_csv(truth_path, &read_text(truth_path)?)?;
    let manifest = read_manifest(runs)?;
    let (name, seed) = manifest
        .map(|m| (m.scenario_name, m.seed))
        .unwrap_or_else(|| ("custom".to_string(), 0));

    let mut logs: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(runs).with_context(|| format!("reading {}", runs.display()))? {
        let path = entry?.path();
        let file = path.file_name().and_then(|f| f.to_str()).unwrap_or_default();
        if file.starts_with("diag_") && file.ends_with(".csv") {
            logs.insert(file.to_string(), path);
        }
    }
    if logs.is_empty() {
        bail!("no diag_*.csv files in {}", runs.display());
    }
    // report in the usual filter order, then anything else by name
    let rank = |f: &str| FilterKind::ALL.iter().position(|k| diag_file_name(k.name()) == f).unwrap_or(usize::MAX);
    let mut ordered: Vec<_> = logs.into_iter().collect();
    ordered.sort_by(|a, b| rank(&a.0).cmp(&rank(&b.0)).then_with(|| a.0.cmp(&b.0)));

    let mut metrics = Vec::new();
    for (_, path) in ordered {
        let log = diagnostics_from_csv(&path, &read_text(&path)?)?;
        metrics.push(metrics_from_log(&log, &truth, &name, seed)?);
    }
    write_atomic(report, &metrics_json(&metrics)?)?;
    print_table(&metrics);
    Ok(())
}

fn run(preset_name: &str, seed: Option<u64>, out: &Path, threads: usize, cfg: &ConfigArgs) -> Result<()> {
    let (settings, scenario) = scenario_for(preset_name, seed, cfg)?;
    let exp = run_experiment(&scenario, &FilterKind::ALL, &settings, RunOptions { timing: false, threads })?;
    write_atomic(&out.join(FRAMES_FILE), &frames_to_csv(&exp.scenario.frames))?;
    write_atomic(&out.join(TRUTH_FILE), &truth_to_csv(&exp.scenario.truth))?;
    write_experiment(&exp, out)?;
    for o in &exp.outcomes {
        if let Err(e) = &o.result {
            eprintln!("{} failed: {e}", o.kind);
        }
    }
    print_table(&exp.metrics());
    Ok(())
}

fn bench(preset_name: &str, repeat: u64, seed: u64, report: Option<&Path>, cfg: &ConfigArgs) -> Result<()> {
    if repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    let (settings, base) = scenario_for(preset_name, None, cfg)?;
    let mut all = Vec::new();
    let start = Instant::now();
    for s in seed..seed + repeat {
        let scenario = ScenarioConfig { seed: s, ..base.clone() };
        let exp = run_experiment(&scenario, &FilterKind::ALL, &settings, RunOptions { timing: true, threads: 1 })?;
        all.extend(exp.metrics());
    }
    let wall = start.elapsed().as_secs_f64();

    println!("{} x {repeat} seeds from {seed}, {wall:.2} s wall", base.name);
    println!(
        "{:<8} {:>12} {:>12} {:>12} {:>12}",
        "filter", "rmse_3d", "mean_ms", "p99_ms", "valid"
    );
    for kind in FilterKind::ALL {
        let runs: Vec<&RunMetrics> = all.iter().filter(|m| m.filter_name == kind.name()).collect();
        if runs.is_empty() {
            continue;
        }
        let n = runs.len() as f64;
        let mean = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(|m| f(m)).sum::<f64>() / n;
        println!(
            "{:<8} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            kind.name(),
            mean(&|m| m.rmse_3d),
            mean(&|m| m.mean_step_time.unwrap_or(0.0)),
            mean(&|m| m.p99_step_time.unwrap_or(0.0)),
            mean(&|m| m.valid_measurement_rate),
        );
    }
    if let Some(path) = report {
        write_atomic(path, &metrics_json(&all)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { preset, seed, out, cfg } => simulate(preset, *seed, out, cfg),
        Command::Track {
            frames,
            filter,
            out,
            dump_clusters,
            cfg,
        } => track(frames, *filter, out, *dump_clusters, cfg),
        Command::Evaluate { truth, runs, report } => evaluate(truth, runs, report),
        Command::Run {
            preset,
            seed,
            out,
            threads,
            cfg,
        } => run(preset, *seed, out, *threads, cfg),
        Command::Bench {
            preset,
            repeat,
            seed,
            report,
            cfg,
        } => bench(preset, *repeat, *seed, report.as_deref(), cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
