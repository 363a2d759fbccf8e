//! Validation gating, candidate selection, occlusion coasting and track
//! reinitialization.

use std::fmt;

use nalgebra::Vector3;

use crate::clustering::CandidateMeasurement;
use crate::error::{Error, Result};
use crate::filter::{
    adapt_measurement_noise, adapt_process_noise, initial_state, innovation_covariance,
    mahalanobis_sq, measurement_matrix, predict, transition_matrix, update, CovMatrix9,
    FilterConfig, InnovationRecord, MeasurementModel, NoiseState, PositionMeasurement,
    StateVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Uninitialized,
    Tracking,
    /// Consecutive missed steps so far.
    Coasting(u32),
    Lost,
}

impl TrackStatus {
    pub fn name(&self) -> &'static str {
        match self {
            TrackStatus::Uninitialized => "uninitialized",
            TrackStatus::Tracking => "tracking",
            TrackStatus::Coasting(_) => "coasting",
            TrackStatus::Lost => "lost",
        }
    }

    pub fn has_estimate(&self) -> bool {
        !matches!(self, TrackStatus::Uninitialized)
    }
}

impl fmt::Display for TrackStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrackStatus::Coasting(n) => write!(f, "coasting({n})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub estimate: StateVector,
    pub covariance: CovMatrix9,
    pub noise: NoiseState,
    pub status: TrackStatus,
    pub last_record: Option<InnovationRecord>,
    /// Timestamp of the last processed frame.
    pub last_time: Option<f64>,
}

impl TrackState {
    pub fn uninitialized(cfg: &FilterConfig) -> Self {
        Self {
            estimate: StateVector::zeros(),
            covariance: cfg.p0,
            noise: cfg.initial_noise(),
            status: TrackStatus::Uninitialized,
            last_record: None,
            last_time: None,
        }
    }

    /// Fresh track at `z` with the configured initial covariances.
    pub fn born_at(z: &Vector3<f64>, timestamp: f64, cfg: &FilterConfig) -> Self {
        Self {
            estimate: initial_state(z),
            covariance: cfg.p0,
            noise: cfg.initial_noise(),
            status: TrackStatus::Tracking,
            last_record: None,
            last_time: Some(timestamp),
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.estimate.fixed_rows::<3>(0).into_owned()
    }
}

/// Which parts of the adaptive machinery are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackPolicy {
    /// Run the Q/R recursions after each accepted update.
    pub adapt_noise: bool,
    /// Declare the track lost after `t_occ` misses and rebirth it on the next
    /// candidate. When off, the track coasts indefinitely.
    pub recover: bool,
}

impl TrackPolicy {
    pub const ADAPTIVE: TrackPolicy = TrackPolicy {
        adapt_noise: true,
        recover: true,
    };
    pub const FIXED: TrackPolicy = TrackPolicy {
        adapt_noise: false,
        recover: false,
    };
}

/// Outcome of gating a candidate list against one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct GateResult {
    /// Squared Mahalanobis distance of every candidate, in input order.
    pub distances: Vec<f64>,
    /// Index of the accepted candidate, if any.
    pub selected: Option<usize>,
}

impl GateResult {
    /// Index of the candidate closest in Mahalanobis distance, accepted or not.
    pub fn nearest(&self) -> Option<usize> {
        self.distances
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

/// Computes `D² = dᵀ S⁻¹ d` for every candidate and selects the smallest one
/// below `tau`. Ties go to the earlier candidate.
pub fn gate(
    candidates: &[CandidateMeasurement],
    state_prior: &StateVector,
    cov_prior: &CovMatrix9,
    r: &nalgebra::Matrix3<f64>,
    tau: f64,
) -> Result<GateResult> {
    let model = PositionMeasurement;
    let h = model.jacobian(state_prior);
    let (_, chol) = innovation_covariance(&h, cov_prior, r)?;
    let predicted = model.predict(state_prior);
    let distances: Vec<f64> = candidates
        .iter()
        .map(|c| mahalanobis_sq(&(c.position.coords - predicted), &chol))
        .collect();
    let mut selected: Option<usize> = None;
    for (i, &d2) in distances.iter().enumerate() {
        if d2 < tau && selected.is_none_or(|s| d2 < distances[s]) {
            selected = Some(i);
        }
    }
    Ok(GateResult {
        distances,
        selected,
    })
}

/// Prediction-only step: the posterior takes the prior, Q stays frozen and the
/// miss counter advances. With `recover`, exceeding `t_occ` misses marks the
/// track lost and keeps the previous estimate.
pub fn coast(
    track: &TrackState,
    state_prior: StateVector,
    cov_prior: CovMatrix9,
    t_occ: u32,
    recover: bool,
) -> Result<TrackState> {
    let missed = match track.status {
        TrackStatus::Tracking => 1,
        TrackStatus::Coasting(n) => n + 1,
        other => {
            return Err(Error::StateMachine {
                state: other.name(),
                event: "coast",
            })
        }
    };
    let mut next = track.clone();
    if recover && missed > t_occ {
        next.status = TrackStatus::Lost;
    } else {
        next.estimate = state_prior;
        next.covariance = cov_prior;
        next.status = TrackStatus::Coasting(missed);
    }
    Ok(next)
}

/// What happened in one call to [`step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    /// No track and nothing to start one from.
    Idle,
    /// Track started (or restarted) from the first candidate.
    Born,
    /// A candidate passed the gate and was fused.
    Updated,
    /// No candidate passed the gate; prediction only.
    Coasted,
    /// Miss limit exceeded on this step.
    BecameLost,
    /// Track is lost and there is nothing to restart it from.
    StillLost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub track: TrackState,
    pub event: StepEvent,
    /// Gate distances against this step's prediction, when a prediction was
    /// made and the innovation covariance was usable.
    pub gate: Option<GateResult>,
    /// Set when the innovation covariance was degenerate and the frame was
    /// handled as a miss.
    pub degenerate: bool,
}

impl StepOutput {
    pub fn accepted(&self) -> bool {
        self.event == StepEvent::Updated
    }
}

/// Step size from consecutive frame timestamps, or the configured fallback.
pub fn step_dt(last_time: Option<f64>, timestamp: f64, fallback: f64) -> f64 {
    match last_time {
        Some(prev) if timestamp > prev && (timestamp - prev).is_finite() => timestamp - prev,
        _ => fallback,
    }
}

fn at_step(err: Error, k: u64) -> Error {
    match err {
        Error::NumericalFailure { stage, .. } => Error::NumericalFailure { step: k, stage },
        other => other,
    }
}

/// One full cycle: predict, gate, then either update and adapt, or coast.
/// Uninitialized and lost tracks are (re)born from the first candidate.
pub fn step(
    track: &TrackState,
    candidates: &[CandidateMeasurement],
    timestamp: f64,
    cfg: &FilterConfig,
    tau: f64,
    policy: TrackPolicy,
    k: u64,
) -> Result<StepOutput> {
    match track.status {
        TrackStatus::Uninitialized | TrackStatus::Lost => {
            let event_if_empty = if track.status == TrackStatus::Lost {
                StepEvent::StillLost
            } else {
                StepEvent::Idle
            };
            let (track, event) = match candidates.first() {
                Some(c) => (
                    TrackState::born_at(&c.position.coords, timestamp, cfg),
                    StepEvent::Born,
                ),
                None => {
                    let mut t = track.clone();
                    t.last_time = Some(timestamp);
                    (t, event_if_empty)
                }
            };
            return Ok(StepOutput {
                track,
                event,
                gate: None,
                degenerate: false,
            });
        }
        TrackStatus::Tracking | TrackStatus::Coasting(_) => {}
    }

    let dt = step_dt(track.last_time, timestamp, cfg.dt);
    let f = transition_matrix(dt)?;
    let (x_prior, p_prior) =
        predict(&track.estimate, &track.covariance, &f, &track.noise.q).map_err(|e| at_step(e, k))?;

    let (gate_result, degenerate) = match gate(candidates, &x_prior, &p_prior, &track.noise.r, tau) {
        Ok(g) => (Some(g), false),
        Err(Error::DegenerateInnovation { .. }) => (None, true),
        Err(e) => return Err(e),
    };

    let selected = gate_result.as_ref().and_then(|g| g.selected);
    let (mut next, event) = match selected {
        Some(i) => {
            let z = candidates[i].position.coords;
            let (x_post, p_post, record) =
                match update(&x_prior, &p_prior, &z, &PositionMeasurement, &track.noise.r) {
                    Ok(v) => v,
                    Err(Error::DegenerateInnovation { .. }) => {
                        let next = coast(track, x_prior, p_prior, cfg.t_occ, policy.recover)?;
                        return Ok(finish(next, timestamp, gate_result, true));
                    }
                    Err(e) => return Err(at_step(e, k)),
                };
            let mut noise = track.noise;
            if policy.adapt_noise {
                let h = measurement_matrix();
                noise.r = adapt_measurement_noise(&noise.r, &record.residual, &h, &p_prior, cfg.beta)?;
                noise.q = adapt_process_noise(&noise.q, &record.gain, &record.innovation, cfg.alpha)?;
            }
            let next = TrackState {
                estimate: x_post,
                covariance: p_post,
                noise,
                status: TrackStatus::Tracking,
                last_record: Some(record),
                last_time: track.last_time,
            };
            (next, StepEvent::Updated)
        }
        None => {
            let next = coast(track, x_prior, p_prior, cfg.t_occ, policy.recover)?;
            let event = if next.status == TrackStatus::Lost {
                StepEvent::BecameLost
            } else {
                StepEvent::Coasted
            };
            (next, event)
        }
    };
    next.last_time = Some(timestamp);
    Ok(StepOutput {
        track: next,
        event,
        gate: gate_result,
        degenerate,
    })
}

fn finish(mut track: TrackState, timestamp: f64, gate: Option<GateResult>, degenerate: bool) -> StepOutput {
    track.last_time = Some(timestamp);
    let event = if track.status == TrackStatus::Lost {
        StepEvent::BecameLost
    } else {
        StepEvent::Coasted
    };
    StepOutput {
        track,
        event,
        gate,
        degenerate,
    }
}
