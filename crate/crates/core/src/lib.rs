//! Single-target tracking of a small aerial vehicle in LiDAR point clouds.
//!
//! Frames go through [`pointcloud`] filtering and [`clustering`] to produce
//! candidate measurements, which feed the adaptive constant-acceleration
//! Kalman tracker in [`track`] / [`tracker`]. [`baselines`] holds the fixed
//! noise Kalman filter and a particle filter for comparison, [`sim`] builds
//! synthetic scenarios with ground truth, and [`eval`] scores runs.

// `!(a <= b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod clustering;
pub mod config;
pub mod error;
pub mod eval;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod pointcloud;
pub mod sim;
pub mod track;
pub mod tracker;

pub use clustering::{detect_target, CandidateMeasurement, Cluster};
pub use error::{Error, Result};
pub use eval::{run_experiment, RunMetrics, Settings};
pub use filter::FilterConfig;
pub use pointcloud::{PipelineConfig, Point3, PointCloud};
pub use sim::{generate_scenario, ScenarioConfig};
pub use track::{TrackState, TrackStatus};
pub use tracker::{FilterKind, KalmanTracker, Tracker};
