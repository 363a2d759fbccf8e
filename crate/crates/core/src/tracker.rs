//! Common driver interface over the adaptive filter and the baselines.

use std::fmt;
use std::str::FromStr;

use crate::baselines::particle::{ParticleConfig, ParticleFilter};
use crate::clustering::CandidateMeasurement;
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, StateVector};
use crate::track::{step, StepEvent, StepOutput, TrackPolicy, TrackState, TrackStatus};

/// One row of the per-step diagnostic log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub k: u64,
    pub t: f64,
    pub status: TrackStatus,
    /// `None` until the track has been born.
    pub estimate: Option<StateVector>,
    pub trace_p: f64,
    pub trace_q: f64,
    pub trace_r: f64,
    /// Innovation norm of the fused candidate, or of the nearest rejected one.
    pub d_norm: Option<f64>,
    /// Squared Mahalanobis distance matching `d_norm`.
    pub d_m2: Option<f64>,
    /// A candidate passed the gate and was fused on this step.
    pub accepted: bool,
}

pub trait Tracker: Send {
    fn name(&self) -> &'static str;

    /// Processes one frame's candidates.
    fn step(&mut self, k: u64, timestamp: f64, candidates: &[CandidateMeasurement]) -> Result<StepReport>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    /// Adaptive Q/R with gating and loss recovery.
    Caekf,
    /// Same model with fixed noise and unbounded coasting.
    Fixed,
    Particle,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Caekf, FilterKind::Particle, FilterKind::Fixed];

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Caekf => "caekf",
            FilterKind::Fixed => "fixed",
            FilterKind::Particle => "pf",
        }
    }

    pub fn build(&self, cfg: &FilterConfig, particles: &ParticleConfig) -> Result<Box<dyn Tracker>> {
        Ok(match self {
            FilterKind::Caekf => Box::new(KalmanTracker::adaptive(*cfg)?),
            FilterKind::Fixed => Box::new(KalmanTracker::fixed(*cfg)?),
            FilterKind::Particle => Box::new(ParticleFilter::new(*cfg, particles.clone())?),
        })
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caekf" => Ok(FilterKind::Caekf),
            "fixed" => Ok(FilterKind::Fixed),
            "pf" => Ok(FilterKind::Particle),
            other => Err(Error::config(format!(
                "unknown filter '{other}' (expected caekf, fixed or pf)"
            ))),
        }
    }
}

/// Kalman-family tracker; the policy selects adaptive or fixed behaviour.
#[derive(Debug, Clone)]
pub struct KalmanTracker {
    name: &'static str,
    cfg: FilterConfig,
    tau: f64,
    policy: TrackPolicy,
    track: TrackState,
}

impl KalmanTracker {
    pub fn with_policy(name: &'static str, cfg: FilterConfig, policy: TrackPolicy) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            name,
            tau: cfg.gate_threshold()?,
            policy,
            track: TrackState::uninitialized(&cfg),
            cfg,
        })
    }

    pub fn adaptive(cfg: FilterConfig) -> Result<Self> {
        Self::with_policy("caekf", cfg, TrackPolicy::ADAPTIVE)
    }

    pub fn fixed(cfg: FilterConfig) -> Result<Self> {
        Self::with_policy("fixed", cfg, TrackPolicy::FIXED)
    }

    pub fn track(&self) -> &TrackState {
        &self.track
    }

    pub fn gate_threshold(&self) -> f64 {
        self.tau
    }

    /// Advances the track and returns the raw step output.
    pub fn advance(
        &mut self,
        k: u64,
        timestamp: f64,
        candidates: &[CandidateMeasurement],
    ) -> Result<StepOutput> {
        let out = step(&self.track, candidates, timestamp, &self.cfg, self.tau, self.policy, k)?;
        self.track = out.track.clone();
        Ok(out)
    }
}

impl Tracker for KalmanTracker {
    fn name(&self) -> &'static str {
        self.name
    }

    fn step(&mut self, k: u64, timestamp: f64, candidates: &[CandidateMeasurement]) -> Result<StepReport> {
        let out = self.advance(k, timestamp, candidates)?;
        let track = &out.track;

        let (d_norm, d_m2) = match (&out.event, &track.last_record, &out.gate) {
            (StepEvent::Updated, Some(rec), _) => {
                (Some(rec.innovation.norm()), Some(rec.mahalanobis_sq))
            }
            (_, _, Some(g)) => match g.nearest() {
                Some(i) => {
                    let predicted = track.position();
                    // coasting: the posterior equals this step's prediction
                    let norm = if out.event == StepEvent::Coasted {
                        Some((candidates[i].position.coords - predicted).norm())
                    } else {
                        None
                    };
                    (norm, Some(g.distances[i]))
                }
                None => (None, None),
            },
            _ => (None, None),
        };

        Ok(StepReport {
            k,
            t: timestamp,
            status: track.status,
            estimate: track.status.has_estimate().then_some(track.estimate),
            trace_p: track.covariance.trace(),
            trace_q: track.noise.q.trace(),
            trace_r: track.noise.r.trace(),
            d_norm,
            d_m2,
            accepted: out.accepted(),
        })
    }
}
