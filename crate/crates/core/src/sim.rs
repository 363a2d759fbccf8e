//! Deterministic scenario generator: a parametric target trajectory observed
//! by a sparse LiDAR that returns a handful of jittered points per frame, with
//! uniform clutter and scripted dropout windows.
//!
//! Each frame draws from its own ChaCha stream (`seed`, stream = frame id),
//! so any subset of frames can be regenerated independently.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::StateVector;
use crate::pointcloud::{Point3, PointCloud};

/// One additive term of a trajectory. Positions of all terms are summed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Maneuver {
    /// Constant offset.
    Hover { position: [f64; 3] },
    /// `v · t`
    Linear { velocity: [f64; 3] },
    /// `A ⊙ sin(2πt/T + φ)` per axis.
    Sweep {
        amplitude: [f64; 3],
        period: f64,
        phase: f64,
    },
    /// Horizontal circle of `radius` about the origin, climbing at
    /// `climb_rate`.
    Spiral {
        radius: f64,
        period: f64,
        climb_rate: f64,
    },
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Kinematics {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl Kinematics {
    pub fn state(&self) -> StateVector {
        let mut s = StateVector::zeros();
        s.fixed_rows_mut::<3>(0).copy_from(&self.position);
        s.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        s.fixed_rows_mut::<3>(6).copy_from(&self.acceleration);
        s
    }
}

impl Maneuver {
    pub fn kinematics(&self, t: f64) -> Kinematics {
        match *self {
            Maneuver::Hover { position } => Kinematics {
                position: position.into(),
                ..Default::default()
            },
            Maneuver::Linear { velocity } => {
                let v = Vector3::from(velocity);
                Kinematics {
                    position: v * t,
                    velocity: v,
                    acceleration: Vector3::zeros(),
                }
            }
            Maneuver::Sweep {
                amplitude,
                period,
                phase,
            } => {
                let w = TAU / period;
                let a = Vector3::from(amplitude);
                let (s, c) = (w * t + phase).sin_cos();
                Kinematics {
                    position: a * s,
                    velocity: a * (w * c),
                    acceleration: a * (-w * w * s),
                }
            }
            Maneuver::Spiral {
                radius,
                period,
                climb_rate,
            } => {
                let w = TAU / period;
                let (s, c) = (w * t).sin_cos();
                Kinematics {
                    position: Vector3::new(radius * c, radius * s, climb_rate * t),
                    velocity: Vector3::new(-radius * w * s, radius * w * c, climb_rate),
                    acceleration: Vector3::new(-radius * w * w * c, -radius * w * w * s, 0.0),
                }
            }
        }
    }

    fn validate(&self) -> Option<String> {
        match *self {
            Maneuver::Sweep { period, .. } | Maneuver::Spiral { period, .. }
                if !(period > 0.0 && period.is_finite()) =>
            {
                Some(format!("maneuver period must be positive, got {period}"))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub maneuvers: Vec<Maneuver>,
}

impl Trajectory {
    pub fn new(maneuvers: Vec<Maneuver>) -> Self {
        Self { maneuvers }
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        self.maneuvers
            .iter()
            .map(|m| m.kinematics(t))
            .fold(Kinematics::default(), |acc, k| Kinematics {
                position: acc.position + k.position,
                velocity: acc.velocity + k.velocity,
                acceleration: acc.acceleration + k.acceleration,
            })
    }
}

/// Interval with no target returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub start: f64,
    pub duration: f64,
}

impl Gap {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub frame_rate: f64,
    pub trajectory: Trajectory,
    /// Inclusive range of target returns per frame.
    pub returns_min: u32,
    pub returns_max: u32,
    /// Isotropic Gaussian jitter of each target return (m).
    pub point_jitter_sigma: f64,
    /// Mean clutter points per frame (Poisson).
    pub clutter_rate: f64,
    /// Axis-aligned clutter volume.
    pub clutter_min: [f64; 3],
    pub clutter_max: [f64; 3],
    pub gaps: Vec<Gap>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            duration: 60.0,
            frame_rate: 9.3,
            trajectory: Trajectory::new(vec![Maneuver::Hover {
                position: [15.0, 0.0, 4.0],
            }]),
            returns_min: 1,
            returns_max: 4,
            point_jitter_sigma: 0.05,
            clutter_rate: 0.0,
            clutter_min: [0.0, -30.0, -2.0],
            clutter_max: [35.0, 30.0, 15.0],
            gaps: Vec::new(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Collects every violated constraint into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            problems.push(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            problems.push(format!("frame_rate must be positive, got {}", self.frame_rate));
        }
        if self.returns_min > self.returns_max {
            problems.push(format!(
                "returns_min ({}) exceeds returns_max ({})",
                self.returns_min, self.returns_max
            ));
        }
        if !(self.point_jitter_sigma >= 0.0 && self.point_jitter_sigma.is_finite()) {
            problems.push(format!(
                "point_jitter_sigma must be non-negative, got {}",
                self.point_jitter_sigma
            ));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            problems.push(format!("clutter_rate must be non-negative, got {}", self.clutter_rate));
        }
        if (0..3).any(|i| !(self.clutter_min[i] <= self.clutter_max[i])) {
            problems.push("clutter_min must not exceed clutter_max on any axis".into());
        }
        for (i, g) in self.gaps.iter().enumerate() {
            if !(g.start >= 0.0 && g.duration > 0.0 && g.end() <= self.duration) {
                problems.push(format!(
                    "gap {i} ({}..{}) must lie within [0, {}] with positive duration",
                    g.start,
                    g.end(),
                    self.duration
                ));
            }
        }
        problems.extend(self.trajectory.maneuvers.iter().filter_map(Maneuver::validate));
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).floor() as usize
    }

    pub fn frame_time(&self, frame_id: u64) -> f64 {
        frame_id as f64 / self.frame_rate
    }

    pub fn in_gap(&self, t: f64) -> bool {
        self.gaps.iter().any(|g| g.contains(t))
    }
}

/// True target state at each frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub frames: Vec<TruthSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub frame_id: u64,
    pub t: f64,
    pub state: StateVector,
}

impl TruthSample {
    pub fn position(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(0).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub truth: GroundTruth,
    pub frames: Vec<PointCloud>,
}

fn frame_rng(seed: u64, frame_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_id);
    rng
}

/// Generates one frame: target returns (unless inside a gap) followed by
/// clutter.
pub fn generate_frame(cfg: &ScenarioConfig, frame_id: u64) -> Result<(TruthSample, PointCloud)> {
    let t = cfg.frame_time(frame_id);
    let kin = cfg.trajectory.kinematics(t);
    let mut rng = frame_rng(cfg.seed, frame_id);
    let jitter = Normal::new(0.0, cfg.point_jitter_sigma)
        .map_err(|e| Error::config(format!("point jitter: {e}")))?;

    let mut points = Vec::new();
    let returns = rng.random_range(cfg.returns_min..=cfg.returns_max);
    if !cfg.in_gap(t) {
        for _ in 0..returns {
            let offset = Vector3::new(
                jitter.sample(&mut rng),
                jitter.sample(&mut rng),
                jitter.sample(&mut rng),
            );
            points.push(Point3::from(kin.position + offset));
        }
    }

    if cfg.clutter_rate > 0.0 {
        let poisson = Poisson::new(cfg.clutter_rate)
            .map_err(|e| Error::config(format!("clutter rate: {e}")))?;
        let count = poisson.sample(&mut rng) as usize;
        for _ in 0..count {
            let mut p = [0.0; 3];
            for (i, c) in p.iter_mut().enumerate() {
                let (lo, hi) = (cfg.clutter_min[i], cfg.clutter_max[i]);
                *c = if hi > lo { rng.random_range(lo..hi) } else { lo };
            }
            points.push(Point3::new(p[0], p[1], p[2]));
        }
    }

    Ok((
        TruthSample {
            frame_id,
            t,
            state: kin.state(),
        },
        PointCloud::new(frame_id, t, points),
    ))
}

/// Ground truth and point clouds for every frame of the scenario.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let n = cfg.frame_count() as u64;
    let mut truth = Vec::with_capacity(n as usize);
    let mut frames = Vec::with_capacity(n as usize);
    for k in 0..n {
        let (sample, cloud) = generate_frame(cfg, k)?;
        truth.push(sample);
        frames.push(cloud);
    }
    Ok(Scenario {
        config: cfg.clone(),
        truth: GroundTruth { frames: truth },
        frames,
    })
}

/// 60 s of agile flight: a slow lateral drift with fast horizontal sweeps,
/// and three 2–3 s dropouts placed on high-acceleration stretches.
pub fn aggressive_maneuver_preset() -> ScenarioConfig {
    ScenarioConfig {
        name: "aggressive".into(),
        duration: 60.0,
        trajectory: Trajectory::new(vec![
            Maneuver::Hover {
                position: [18.0, 0.0, 4.0],
            },
            Maneuver::Sweep {
                amplitude: [0.0, 9.0, 0.0],
                period: 8.0,
                phase: 0.0,
            },
            Maneuver::Sweep {
                amplitude: [4.0, 0.0, 1.5],
                period: 11.0,
                phase: 0.7,
            },
        ]),
        clutter_rate: 20.0,
        gaps: vec![
            Gap {
                start: 16.5,
                duration: 2.5,
            },
            Gap {
                start: 28.5,
                duration: 3.0,
            },
            Gap {
                start: 45.0,
                duration: 2.0,
            },
        ],
        ..Default::default()
    }
}

/// Smooth sweep without gaps or clutter.
pub fn smooth_sweep_preset() -> ScenarioConfig {
    ScenarioConfig {
        name: "smooth".into(),
        duration: 60.0,
        trajectory: Trajectory::new(vec![
            Maneuver::Hover {
                position: [15.0, 0.0, 4.0],
            },
            Maneuver::Sweep {
                amplitude: [2.0, 5.0, 0.5],
                period: 20.0,
                phase: 0.0,
            },
        ]),
        ..Default::default()
    }
}

/// Hovering target, three returns per frame, no noise or clutter.
pub fn noiseless_hover_preset() -> ScenarioConfig {
    ScenarioConfig {
        name: "noiseless".into(),
        duration: 20.0,
        returns_min: 3,
        returns_max: 3,
        point_jitter_sigma: 0.0,
        ..Default::default()
    }
}

pub fn spiral_preset() -> ScenarioConfig {
    ScenarioConfig {
        name: "spiral".into(),
        duration: 60.0,
        trajectory: Trajectory::new(vec![
            Maneuver::Hover {
                position: [16.0, 0.0, 2.0],
            },
            Maneuver::Spiral {
                radius: 6.0,
                period: 15.0,
                climb_rate: 0.1,
            },
        ]),
        clutter_rate: 10.0,
        ..Default::default()
    }
}

pub const PRESET_NAMES: [&str; 4] = ["aggressive", "smooth", "noiseless", "spiral"];

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    match name {
        "aggressive" => Ok(aggressive_maneuver_preset()),
        "smooth" => Ok(smooth_sweep_preset()),
        "noiseless" => Ok(noiseless_hover_preset()),
        "spiral" => Ok(spiral_preset()),
        other => Err(Error::config(format!(
            "unknown preset '{other}' (expected one of {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}
