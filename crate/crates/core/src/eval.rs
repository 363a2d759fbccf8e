//! Accuracy metrics and the scenario × filter experiment harness.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::baselines::ParticleConfig;
use crate::clustering::{detect_target_detailed, CandidateMeasurement};
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::io::{diagnostics_to_csv, write_atomic, DiagnosticLog};
use crate::pointcloud::PipelineConfig;
use crate::sim::{generate_scenario, GroundTruth, Scenario, ScenarioConfig};
use crate::tracker::{FilterKind, StepReport};

/// Position-error summary over the steps where a filter reported a state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accuracy {
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_z: f64,
    /// `sqrt(mean ‖e‖²)`
    pub rmse_3d: f64,
    pub peak_error: f64,
    /// Steps that contributed.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub filter_name: String,
    pub scenario_name: String,
    pub seed: u64,
    pub steps: usize,
    pub rmse_x: f64,
    pub rmse_y: f64,
    pub rmse_z: f64,
    pub rmse_3d: f64,
    pub peak_error: f64,
    /// Gate-accepted frames over all frames.
    pub valid_measurement_rate: f64,
    /// Wall-clock milliseconds per frame (detection + filter step); only
    /// recorded when timing is requested.
    pub mean_step_time: Option<f64>,
    pub p99_step_time: Option<f64>,
}

/// Per-axis and 3-D RMSE of `estimates` against `truth`, matched by frame id.
///
/// Every estimate frame must exist in the truth and vice versa; `None`
/// estimates (no track yet) are skipped.
pub fn compute_rmse(estimates: &[(u64, Option<Vector3<f64>>)], truth: &GroundTruth) -> Result<Accuracy> {
    let truth_by_id: BTreeMap<u64, Vector3<f64>> =
        truth.frames.iter().map(|s| (s.frame_id, s.position())).collect();
    let est_ids: std::collections::BTreeSet<u64> = estimates.iter().map(|(k, _)| *k).collect();

    let mut missing: Vec<u64> = estimates
        .iter()
        .map(|(k, _)| *k)
        .filter(|k| !truth_by_id.contains_key(k))
        .chain(truth_by_id.keys().copied().filter(|k| !est_ids.contains(k)))
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(Error::Alignment { missing });
    }

    let mut sq = Vector3::zeros();
    let mut peak: f64 = 0.0;
    let mut n = 0usize;
    for (k, est) in estimates {
        let Some(est) = est else { continue };
        let e = est - truth_by_id[k];
        sq += e.component_mul(&e);
        peak = peak.max(e.norm());
        n += 1;
    }
    if n == 0 {
        return Ok(Accuracy::default());
    }
    let mse = sq / n as f64;
    Ok(Accuracy {
        rmse_x: mse.x.sqrt(),
        rmse_y: mse.y.sqrt(),
        rmse_z: mse.z.sqrt(),
        rmse_3d: mse.sum().sqrt(),
        peak_error: peak,
        steps: n,
    })
}

pub fn estimates_of(reports: &[StepReport]) -> Vec<(u64, Option<Vector3<f64>>)> {
    reports
        .iter()
        .map(|r| (r.k, r.estimate.map(|s| s.fixed_rows::<3>(0).into_owned())))
        .collect()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Metrics for one filter run. `step_times_ms` may be empty when timing was
/// not recorded.
pub fn run_metrics(
    filter_name: &str,
    scenario_name: &str,
    seed: u64,
    reports: &[StepReport],
    truth: &GroundTruth,
    step_times_ms: &[f64],
) -> Result<RunMetrics> {
    let acc = compute_rmse(&estimates_of(reports), truth)?;
    let accepted = reports.iter().filter(|r| r.accepted).count();
    let (mean_step_time, p99_step_time) = if step_times_ms.is_empty() {
        (None, None)
    } else {
        let mut sorted = step_times_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        (
            Some(sorted.iter().sum::<f64>() / sorted.len() as f64),
            Some(percentile(&sorted, 0.99)),
        )
    };
    Ok(RunMetrics {
        filter_name: filter_name.to_string(),
        scenario_name: scenario_name.to_string(),
        seed,
        steps: reports.len(),
        rmse_x: acc.rmse_x,
        rmse_y: acc.rmse_y,
        rmse_z: acc.rmse_z,
        rmse_3d: acc.rmse_3d,
        peak_error: acc.peak_error,
        valid_measurement_rate: if reports.is_empty() {
            0.0
        } else {
            accepted as f64 / reports.len() as f64
        },
        mean_step_time,
        p99_step_time,
    })
}

/// Recomputes metrics from a reloaded diagnostic log.
pub fn metrics_from_log(
    log: &DiagnosticLog,
    truth: &GroundTruth,
    scenario_name: &str,
    seed: u64,
) -> Result<RunMetrics> {
    run_metrics(&log.filter, scenario_name, seed, &log.reports, truth, &[])
}

/// Everything configurable about a run besides the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub filter: FilterConfig,
    pub particles: ParticleConfig,
}

impl Default for Settings {
    fn default() -> Self {
        let filter = FilterConfig::default();
        Self {
            pipeline: PipelineConfig::default(),
            particles: ParticleConfig::from_filter(&filter, 0),
            filter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Record wall-clock step times (makes metrics non-reproducible).
    pub timing: bool,
    /// Worker threads for running filters concurrently; results do not depend
    /// on it.
    pub threads: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            timing: false,
            threads: 1,
        }
    }
}

/// Detector output for every frame, shared by all filters.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedFrames {
    pub frame_ids: Vec<u64>,
    pub timestamps: Vec<f64>,
    pub candidates: Vec<Vec<CandidateMeasurement>>,
    pub detect_ms: Vec<f64>,
}

pub fn detect_frames(scenario: &Scenario, pipeline: &PipelineConfig, timing: bool) -> Result<DetectedFrames> {
    let mut out = DetectedFrames {
        frame_ids: Vec::with_capacity(scenario.frames.len()),
        timestamps: Vec::with_capacity(scenario.frames.len()),
        candidates: Vec::with_capacity(scenario.frames.len()),
        detect_ms: Vec::new(),
    };
    for frame in &scenario.frames {
        let start = timing.then(Instant::now);
        let det = detect_target_detailed(frame, pipeline)?;
        if let Some(s) = start {
            out.detect_ms.push(s.elapsed().as_secs_f64() * 1e3);
        }
        out.frame_ids.push(frame.frame_id);
        out.timestamps.push(frame.timestamp);
        out.candidates.push(det.candidates);
    }
    Ok(out)
}

/// Reports and optional per-step wall-clock times (ms) of one filter run.
pub type FilterRun = (Vec<StepReport>, Vec<f64>);

/// Runs one filter over pre-detected frames.
pub fn run_filter(kind: FilterKind, frames: &DetectedFrames, settings: &Settings, timing: bool) -> Result<FilterRun> {
    let mut tracker = kind.build(&settings.filter, &settings.particles)?;
    let mut reports = Vec::with_capacity(frames.frame_ids.len());
    let mut times = Vec::new();
    for i in 0..frames.frame_ids.len() {
        let start = timing.then(Instant::now);
        reports.push(tracker.step(frames.frame_ids[i], frames.timestamps[i], &frames.candidates[i])?);
        if let Some(s) = start {
            let detect = frames.detect_ms.get(i).copied().unwrap_or(0.0);
            times.push(detect + s.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok((reports, times))
}

#[derive(Debug)]
pub struct FilterOutcome {
    pub kind: FilterKind,
    pub result: Result<(RunMetrics, Vec<StepReport>)>,
}

#[derive(Debug)]
pub struct Experiment {
    pub scenario: Scenario,
    pub outcomes: Vec<FilterOutcome>,
}

impl Experiment {
    /// Metrics of the filters that completed, in request order.
    pub fn metrics(&self) -> Vec<RunMetrics> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok().map(|(m, _)| m.clone()))
            .collect()
    }

    pub fn reports(&self, kind: FilterKind) -> Option<&[StepReport]> {
        self.outcomes
            .iter()
            .find(|o| o.kind == kind)
            .and_then(|o| o.result.as_ref().ok())
            .map(|(_, r)| r.as_slice())
    }
}

/// Generates the scenario, runs detection once and every requested filter on
/// the same candidate stream. A failing filter is reported in its outcome and
/// does not stop the others. The particle filter is seeded from the scenario
/// seed so one number reproduces the whole run.
pub fn run_experiment(
    scenario: &ScenarioConfig,
    filters: &[FilterKind],
    settings: &Settings,
    options: RunOptions,
) -> Result<Experiment> {
    let mut settings = settings.clone();
    settings.particles.seed = scenario.seed;
    let settings = &settings;
    let scenario = generate_scenario(scenario)?;
    let frames = detect_frames(&scenario, &settings.pipeline, options.timing)?;

    let run_one = |kind: FilterKind| -> FilterOutcome {
        let result = run_filter(kind, &frames, settings, options.timing).and_then(|(reports, times)| {
            let m = run_metrics(
                kind.name(),
                &scenario.config.name,
                scenario.config.seed,
                &reports,
                &scenario.truth,
                &times,
            )?;
            Ok((m, reports))
        });
        FilterOutcome { kind, result }
    };

    let outcomes = if options.threads > 1 && filters.len() > 1 {
        let chunk = filters.len().div_ceil(options.threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = filters
                .chunks(chunk)
                .map(|ks| s.spawn(|| ks.iter().map(|&k| run_one(k)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("filter worker panicked"))
                .collect()
        })
    } else {
        filters.iter().map(|&k| run_one(k)).collect()
    };

    Ok(Experiment { scenario, outcomes })
}

/// Run identity written next to the diagnostics so metrics can be rebuilt
/// from files alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_name: String,
    pub seed: u64,
    pub filters: Vec<String>,
}

pub const MANIFEST_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SERIES_FILE: &str = "series.csv";

pub fn diag_file_name(filter: &str) -> String {
    format!("diag_{filter}.csv")
}

pub fn metrics_json(metrics: &[RunMetrics]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(metrics)?;
    s.push('\n');
    Ok(s)
}

/// Time series of truth and every filter's position estimate.
pub fn series_csv(experiment: &Experiment) -> String {
    use std::fmt::Write as _;
    let done: Vec<(&str, &[StepReport])> = experiment
        .outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|(_, r)| (o.kind.name(), r.as_slice())))
        .collect();
    let mut out = String::from("frame_id,t,truth_x,truth_y,truth_z");
    for (name, _) in &done {
        let _ = write!(out, ",{name}_x,{name}_y,{name}_z");
    }
    out.push('\n');
    for (i, s) in experiment.scenario.truth.frames.iter().enumerate() {
        let p = s.position();
        let _ = write!(out, "{},{},{},{},{}", s.frame_id, s.t, p.x, p.y, p.z);
        for (_, reports) in &done {
            match reports.get(i).and_then(|r| r.estimate) {
                Some(e) => {
                    let _ = write!(out, ",{},{},{}", e[0], e[1], e[2]);
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes per-filter diagnostics, the metrics JSON, the plot series and the
/// run manifest into `out_dir`.
pub fn write_experiment(experiment: &Experiment, out_dir: &Path) -> Result<()> {
    let mut names = Vec::new();
    for o in &experiment.outcomes {
        if let Ok((_, reports)) = &o.result {
            write_atomic(
                &out_dir.join(diag_file_name(o.kind.name())),
                &diagnostics_to_csv(o.kind.name(), reports),
            )?;
            names.push(o.kind.name().to_string());
        }
    }
    write_atomic(&out_dir.join(METRICS_FILE), &metrics_json(&experiment.metrics())?)?;
    write_atomic(&out_dir.join(SERIES_FILE), &series_csv(experiment))?;
    let manifest = RunManifest {
        scenario_name: experiment.scenario.config.name.clone(),
        seed: experiment.scenario.config.seed,
        filters: names,
    };
    write_atomic(
        &out_dir.join(MANIFEST_FILE),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )
}
