//! Browser demo: simulate a scenario, tune and rerun the trackers, and
//! inspect the clustering of single frames. Everything crosses the wasm
//! boundary as JSON strings; the page draws on a canvas.

use std::path::Path;

use aetrack::clustering::detect_target_detailed;
use aetrack::config;
use aetrack::eval::{detect_frames, run_filter, run_metrics, DetectedFrames, RunMetrics, Settings};
use aetrack::sim::{generate_scenario, preset, Scenario, ScenarioConfig};
use aetrack::tracker::FilterKind;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
struct Summary {
    name: String,
    seed: u64,
    frames: usize,
    points: usize,
    /// Gap intervals as [start, end) in seconds.
    gaps: Vec<[f64; 2]>,
    t: Vec<f64>,
    truth: Vec<[f64; 3]>,
}

#[derive(Debug, Serialize)]
struct FilterTrack {
    name: &'static str,
    estimate: Vec<Option<[f64; 3]>>,
    status: Vec<String>,
    accepted: Vec<bool>,
    metrics: Option<RunMetrics>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct ClusterView {
    size: usize,
    centroid: [f64; 3],
    max_eig: Option<f64>,
    accepted: bool,
}

#[derive(Debug, Serialize)]
struct FrameView {
    index: usize,
    t: f64,
    raw: Vec<[f64; 3]>,
    filtered: Vec<[f64; 3]>,
    /// Cluster id per filtered point, -1 for noise.
    labels: Vec<i64>,
    clusters: Vec<ClusterView>,
    truth: [f64; 3],
    in_gap: bool,
}

fn xyz<V: std::ops::Index<usize, Output = f64>>(v: &V) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

/// Scenario, settings and detections of the current session.
pub struct Session {
    config: ScenarioConfig,
    settings: Settings,
    scenario: Scenario,
    frames: DetectedFrames,
}

impl Session {
    pub fn new(preset_name: &str, seed: u64) -> aetrack::Result<Self> {
        let config = ScenarioConfig { seed, ..preset(preset_name)? };
        Self::build(config, Settings::default())
    }

    fn build(config: ScenarioConfig, mut settings: Settings) -> aetrack::Result<Self> {
        settings.particles.seed = config.seed;
        let scenario = generate_scenario(&config)?;
        let frames = detect_frames(&scenario, &settings.pipeline, false)?;
        Ok(Self {
            config,
            settings,
            scenario,
            frames,
        })
    }

    pub fn summary_json(&self) -> String {
        let s = Summary {
            name: self.config.name.clone(),
            seed: self.config.seed,
            frames: self.scenario.frames.len(),
            points: self.scenario.frames.iter().map(|f| f.len()).sum(),
            gaps: self.config.gaps.iter().map(|g| [g.start, g.end()]).collect(),
            t: self.scenario.truth.frames.iter().map(|s| s.t).collect(),
            truth: self.scenario.truth.frames.iter().map(|s| xyz(&s.position())).collect(),
        };
        serde_json::to_string(&s).expect("summary serializes")
    }

    /// Applies `key = value` lines, regenerating or redetecting only when
    /// the scenario or pipeline changed, then runs every filter.
    pub fn run_json(&mut self, config_text: &str) -> aetrack::Result<String> {
        let assignments = config::parse(config_text, Path::new("<page>"))?;
        let mut settings = self.settings.clone();
        let mut scenario = self.config.clone();
        config::apply(&assignments, &mut settings, &mut scenario)?;
        settings.pipeline.validate()?;
        settings.filter.validate()?;
        if scenario != self.config {
            *self = Self::build(scenario, settings)?;
        } else {
            if settings.pipeline != self.settings.pipeline {
                self.frames = detect_frames(&self.scenario, &settings.pipeline, false)?;
            }
            self.settings = settings;
            self.settings.particles.seed = self.config.seed;
        }

        let tracks: Vec<FilterTrack> = FilterKind::ALL
            .iter()
            .map(|&kind| {
                let run = run_filter(kind, &self.frames, &self.settings, false).and_then(|(reports, _)| {
                    let m = run_metrics(
                        kind.name(),
                        &self.config.name,
                        self.config.seed,
                        &reports,
                        &self.scenario.truth,
                        &[],
                    )?;
                    Ok((reports, m))
                });
                match run {
                    Ok((reports, m)) => FilterTrack {
                        name: kind.name(),
                        estimate: reports
                            .iter()
                            .map(|r| r.estimate.map(|x| [x[0], x[1], x[2]]))
                            .collect(),
                        status: reports.iter().map(|r| r.status.to_string()).collect(),
                        accepted: reports.iter().map(|r| r.accepted).collect(),
                        metrics: Some(m),
                        error: None,
                    },
                    Err(e) => FilterTrack {
                        name: kind.name(),
                        estimate: Vec::new(),
                        status: Vec::new(),
                        accepted: Vec::new(),
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        Ok(serde_json::to_string(&tracks).expect("tracks serialize"))
    }

    pub fn frame_json(&self, index: usize) -> aetrack::Result<String> {
        let cloud = self.scenario.frames.get(index).ok_or_else(|| {
            aetrack::Error::Config(format!("frame {index} out of range (0..{})", self.scenario.frames.len()))
        })?;
        let det = detect_target_detailed(cloud, &self.settings.pipeline)?;
        let pipeline = &self.settings.pipeline;
        let labels = aetrack::clustering::dbscan(&det.filtered, pipeline.dbscan_eps, pipeline.dbscan_min_pts)?
            .labels(det.filtered.len())
            .into_iter()
            .map(|l| l.map_or(-1, |c| c as i64))
            .collect();
        let truth = &self.scenario.truth.frames[index];
        let view = FrameView {
            index,
            t: cloud.timestamp,
            raw: cloud.points.iter().map(|p| xyz(&p.coords)).collect(),
            filtered: det.filtered.points.iter().map(|p| xyz(&p.coords)).collect(),
            labels,
            clusters: det
                .clusters
                .iter()
                .map(|c| ClusterView {
                    size: c.size,
                    centroid: xyz(&c.centroid.coords),
                    max_eig: c.max_eig,
                    accepted: c.accepted,
                })
                .collect(),
            truth: xyz(&truth.position()),
            in_gap: self.config.in_gap(truth.t),
        };
        Ok(serde_json::to_string(&view).expect("frame serializes"))
    }
}

fn js_err(e: aetrack::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Handle held by the page.
#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(preset_name: &str, seed: u64) -> Result<Demo, JsError> {
        Session::new(preset_name, seed).map(Demo).map_err(js_err)
    }

    pub fn summary(&self) -> String {
        self.0.summary_json()
    }

    /// Runs all filters after applying `key = value` lines.
    pub fn run(&mut self, config_text: &str) -> Result<String, JsError> {
        self.0.run_json(config_text).map_err(js_err)
    }

    pub fn frame(&self, index: usize) -> Result<String, JsError> {
        self.0.frame_json(index).map_err(js_err)
    }
}

#[wasm_bindgen]
pub fn presets() -> String {
    serde_json::to_string(&aetrack::sim::PRESET_NAMES).expect("names serialize")
}
