//! Comparison filters sharing the detection front end with the adaptive
//! tracker.

pub mod fixed;
pub mod particle;

pub use fixed::fixed_ca_kf_step;
pub use particle::{
    effective_sample_size, particle_filter_step, systematic_resample, ParticleConfig,
    ParticleFilter, ParticleSet,
};
