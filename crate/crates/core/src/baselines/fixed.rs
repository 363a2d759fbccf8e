//! Constant-acceleration Kalman filter with fixed noise covariances.
//!
//! Shares all of its filter code with the adaptive tracker. The noise recursions are
//! switched off and a track is never declared lost, so during a long dropout
//! the filter keeps extrapolating the last acceleration estimate.

use crate::clustering::CandidateMeasurement;
use crate::error::Result;
use crate::filter::FilterConfig;
use crate::track::{step, StepOutput, TrackPolicy, TrackState};

pub fn fixed_ca_kf_step(
    track: &TrackState,
    candidates: &[CandidateMeasurement],
    timestamp: f64,
    cfg: &FilterConfig,
    tau: f64,
    k: u64,
) -> Result<StepOutput> {
    step(track, candidates, timestamp, cfg, tau, TrackPolicy::FIXED, k)
}
