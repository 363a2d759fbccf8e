//! Bootstrap particle filter over the constant-acceleration state.
//!
//! Particles are propagated through the CA transition with additive Gaussian
//! noise, weighted by a Gaussian likelihood of the gated candidate, and
//! systematically resampled when the effective sample size drops below the
//! configured fraction of N. All random draws of a step are generated up
//! front from the filter's seeded stream.

use nalgebra::{Cholesky, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::clustering::CandidateMeasurement;
use crate::error::{Error, Result};
use crate::filter::{
    innovation_covariance, initial_state, mahalanobis_sq, measurement_matrix, CovMatrix9,
    FilterConfig, StateVector,
};
use crate::track::{step_dt, GateResult, TrackStatus};
use crate::tracker::{StepReport, Tracker};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfig {
    pub n_particles: usize,
    /// Per-step additive process noise covariance.
    pub process_noise: CovMatrix9,
    /// Likelihood covariance.
    pub measurement_noise: Matrix3<f64>,
    /// Resample when ESS < `resample_fraction · N`.
    pub resample_fraction: f64,
    pub seed: u64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        let f = FilterConfig::default();
        Self::from_filter(&f, 0)
    }
}

impl ParticleConfig {
    /// 2000 particles using the filter's initial Q and R.
    pub fn from_filter(cfg: &FilterConfig, seed: u64) -> Self {
        Self {
            n_particles: 2000,
            process_noise: cfg.q0,
            measurement_noise: cfg.r0,
            resample_fraction: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::config("n_particles must be at least 1"));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(Error::config(format!(
                "resample_fraction must lie in (0, 1], got {}",
                self.resample_fraction
            )));
        }
        if Cholesky::new(self.measurement_noise).is_none() {
            return Err(Error::config("particle measurement noise must be positive definite"));
        }
        Ok(())
    }
}

/// Weighted particle approximation of the state posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub states: Vec<StateVector>,
    /// Non-negative, summing to one.
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Weighted mean.
    pub fn mean(&self) -> StateVector {
        self.states
            .iter()
            .zip(&self.weights)
            .fold(StateVector::zeros(), |acc, (s, w)| acc + s * *w)
    }

    /// Weighted covariance about the weighted mean.
    pub fn covariance(&self) -> CovMatrix9 {
        let mean = self.mean();
        let mut cov = CovMatrix9::zeros();
        for (s, w) in self.states.iter().zip(&self.weights) {
            let d = s - mean;
            cov += d * d.transpose() * *w;
        }
        crate::linalg::symmetrize(&mut cov);
        cov
    }

    fn position_moments(&self) -> (Vector3<f64>, Matrix3<f64>) {
        let mut mean = Vector3::zeros();
        for (s, w) in self.states.iter().zip(&self.weights) {
            mean += s.fixed_rows::<3>(0) * *w;
        }
        let mut cov = Matrix3::zeros();
        for (s, w) in self.states.iter().zip(&self.weights) {
            let d = s.fixed_rows::<3>(0) - mean;
            cov += d * d.transpose() * *w;
        }
        crate::linalg::symmetrize(&mut cov);
        (mean, cov)
    }
}

/// `1 / Σ wᵢ²` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling: a single offset `u ∈ [0, 1/N)` and N evenly spaced
/// pointers into the cumulative weights. Returns the chosen source indices.
pub fn systematic_resample(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights.first().copied().unwrap_or(0.0);
    let mut j = 0;
    for i in 0..n {
        let u = offset * step + i as f64 * step;
        while u > cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

/// Square root `L` with `L Lᵀ = M` for a symmetric PSD matrix (singular
/// allowed); negative round-off eigenvalues are clamped to zero.
fn psd_sqrt(m: &CovMatrix9) -> CovMatrix9 {
    let eig = SymmetricEigen::new(*m);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * CovMatrix9::from_diagonal(&roots)
}

fn draw_normals(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}

fn scatter(center: &StateVector, sqrt_cov: &CovMatrix9, normals: &[f64]) -> Vec<StateVector> {
    normals
        .chunks_exact(9)
        .map(|w| center + sqrt_cov * StateVector::from_column_slice(w))
        .collect()
}

/// Outcome of one particle-filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleStep {
    pub estimate: StateVector,
    pub gate: Option<GateResult>,
    pub accepted: Option<usize>,
    pub resampled: bool,
    /// Weights collapsed to zero and the set was redrawn around the candidate.
    pub reinitialized: bool,
}

/// Propagate, gate, weight and (when needed) resample one particle set.
///
/// `normals` must hold `9·N` standard normal draws and `offset` one uniform
/// draw in `[0, 1)`; `init_normals` is used only when the weights collapse.
#[allow(clippy::too_many_arguments)]
pub fn particle_filter_step(
    set: &mut ParticleSet,
    candidates: &[CandidateMeasurement],
    dt: f64,
    cfg: &ParticleConfig,
    p0_sqrt: &CovMatrix9,
    noise_sqrt: &CovMatrix9,
    tau: f64,
    normals: &[f64],
    offset: f64,
    init_normals: impl FnOnce() -> Vec<f64>,
) -> Result<ParticleStep> {
    let half_dt2 = 0.5 * dt * dt;
    for (s, w) in set.states.iter_mut().zip(normals.chunks_exact(9)) {
        for axis in 0..3 {
            let (p, v, a) = (s[axis], s[axis + 3], s[axis + 6]);
            s[axis] = p + v * dt + a * half_dt2;
            s[axis + 3] = v + a * dt;
        }
        *s += noise_sqrt * StateVector::from_column_slice(w);
    }

    let (mean_pos, cov_pos) = set.position_moments();
    let h = measurement_matrix();
    let mut prior_cov = CovMatrix9::zeros();
    prior_cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&cov_pos);
    let gate = match innovation_covariance(&h, &prior_cov, &cfg.measurement_noise) {
        Ok((_, chol)) => {
            let distances: Vec<f64> = candidates
                .iter()
                .map(|c| mahalanobis_sq(&(c.position.coords - mean_pos), &chol))
                .collect();
            let mut selected: Option<usize> = None;
            for (i, &d2) in distances.iter().enumerate() {
                if d2 < tau && selected.is_none_or(|s| d2 < distances[s]) {
                    selected = Some(i);
                }
            }
            Some(GateResult {
                distances,
                selected,
            })
        }
        Err(Error::DegenerateInnovation { .. }) => None,
        Err(e) => return Err(e),
    };

    let accepted = gate.as_ref().and_then(|g| g.selected);
    let mut resampled = false;
    let mut reinitialized = false;
    if let Some(i) = accepted {
        let z = candidates[i].position.coords;
        let r_chol = Cholesky::new(cfg.measurement_noise)
            .ok_or_else(|| Error::config("particle measurement noise must be positive definite"))?;
        let mut total = 0.0;
        for (s, w) in set.states.iter().zip(set.weights.iter_mut()) {
            let d = z - s.fixed_rows::<3>(0);
            *w *= (-0.5 * d.dot(&r_chol.solve(&d))).exp();
            total += *w;
        }
        if total > 0.0 && total.is_finite() {
            set.weights.iter_mut().for_each(|w| *w /= total);
            let n = set.len() as f64;
            if effective_sample_size(&set.weights) < cfg.resample_fraction * n {
                let idx = systematic_resample(&set.weights, offset);
                set.states = idx.iter().map(|&j| set.states[j]).collect();
                set.weights = vec![1.0 / n; set.len()];
                resampled = true;
            }
        } else {
            *set = ParticleSet {
                states: scatter(&initial_state(&z), p0_sqrt, &init_normals()),
                weights: vec![1.0 / set.len() as f64; set.len()],
            };
            reinitialized = true;
        }
    }

    Ok(ParticleStep {
        estimate: set.mean(),
        gate,
        accepted,
        resampled,
        reinitialized,
    })
}

/// Particle filter tracker with a seeded random stream.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    cfg: FilterConfig,
    pf: ParticleConfig,
    tau: f64,
    p0_sqrt: CovMatrix9,
    noise_sqrt: CovMatrix9,
    rng: ChaCha8Rng,
    set: Option<ParticleSet>,
    status: TrackStatus,
    last_time: Option<f64>,
    last_estimate: Option<StateVector>,
}

impl ParticleFilter {
    pub fn new(cfg: FilterConfig, pf: ParticleConfig) -> Result<Self> {
        cfg.validate()?;
        pf.validate()?;
        Ok(Self {
            tau: cfg.gate_threshold()?,
            p0_sqrt: psd_sqrt(&cfg.p0),
            noise_sqrt: psd_sqrt(&pf.process_noise),
            rng: {
                // keep clear of the per-frame simulator streams sharing this seed
                let mut rng = ChaCha8Rng::seed_from_u64(pf.seed);
                rng.set_stream(u64::MAX);
                rng
            },
            cfg,
            pf,
            set: None,
            status: TrackStatus::Uninitialized,
            last_time: None,
            last_estimate: None,
        })
    }

    pub fn particles(&self) -> Option<&ParticleSet> {
        self.set.as_ref()
    }

    fn spawn(&mut self, z: &Vector3<f64>) -> ParticleSet {
        let n = self.pf.n_particles;
        let normals = draw_normals(&mut self.rng, 9 * n);
        ParticleSet {
            states: scatter(&initial_state(z), &self.p0_sqrt, &normals),
            weights: vec![1.0 / n as f64; n],
        }
    }
}

impl Tracker for ParticleFilter {
    fn name(&self) -> &'static str {
        "pf"
    }

    fn step(&mut self, k: u64, timestamp: f64, candidates: &[CandidateMeasurement]) -> Result<StepReport> {
        let r_trace = self.pf.measurement_noise.trace();
        let q_trace = self.pf.process_noise.trace();
        let idle = |status, estimate, trace_p| StepReport {
            k,
            t: timestamp,
            status,
            estimate,
            trace_p,
            trace_q: q_trace,
            trace_r: r_trace,
            d_norm: None,
            d_m2: None,
            accepted: false,
        };

        let Some(mut set) = self.set.take() else {
            self.last_time = Some(timestamp);
            let Some(c) = candidates.first() else {
                return Ok(idle(self.status, self.last_estimate, self.cfg.p0.trace()));
            };
            let set = self.spawn(&c.position.coords);
            let est = set.mean();
            let trace_p = set.covariance().trace();
            self.set = Some(set);
            self.status = TrackStatus::Tracking;
            self.last_estimate = Some(est);
            return Ok(idle(self.status, Some(est), trace_p));
        };

        let dt = step_dt(self.last_time, timestamp, self.cfg.dt);
        let normals = draw_normals(&mut self.rng, 9 * set.len());
        let offset: f64 = self.rng.random();
        let n = set.len();
        let rng = &mut self.rng;
        let out = particle_filter_step(
            &mut set,
            candidates,
            dt,
            &self.pf,
            &self.p0_sqrt,
            &self.noise_sqrt,
            self.tau,
            &normals,
            offset,
            || draw_normals(rng, 9 * n),
        )
        .map_err(|e| match e {
            Error::NumericalFailure { stage, .. } => Error::NumericalFailure { step: k, stage },
            other => other,
        })?;
        self.last_time = Some(timestamp);

        let (d_norm, d_m2) = match &out.gate {
            Some(g) => match out.accepted.or_else(|| g.nearest()) {
                Some(i) => {
                    // innovation against the predicted mean is not retained
                    // after weighting; report the post-step offset
                    let d = candidates[i].position.coords - out.estimate.fixed_rows::<3>(0);
                    (Some(d.norm()), Some(g.distances[i]))
                }
                None => (None, None),
            },
            None => (None, None),
        };

        let misses = match (out.accepted, self.status) {
            (Some(_), _) => 0,
            (None, TrackStatus::Coasting(m)) => m + 1,
            (None, _) => 1,
        };
        if misses > self.cfg.t_occ {
            // same prediction horizon as the Kalman tracks: drop the cloud and
            // hold the last coasted estimate until a candidate re-seeds it
            self.status = TrackStatus::Lost;
            return Ok(StepReport {
                d_norm,
                d_m2,
                ..idle(self.status, self.last_estimate, set.covariance().trace())
            });
        }
        self.status = if misses == 0 {
            TrackStatus::Tracking
        } else {
            TrackStatus::Coasting(misses)
        };
        self.last_estimate = Some(out.estimate);

        let report = StepReport {
            k,
            t: timestamp,
            status: self.status,
            estimate: Some(out.estimate),
            trace_p: set.covariance().trace(),
            trace_q: q_trace,
            trace_r: r_trace,
            d_norm,
            d_m2,
            accepted: out.accepted.is_some(),
        };
        self.set = Some(set);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::Cluster;
    use crate::pointcloud::Point3;

    fn candidate(p: Vector3<f64>) -> CandidateMeasurement {
        let p = Point3::from(p);
        CandidateMeasurement {
            position: p,
            source_cluster: Cluster {
                member_indices: vec![0, 1, 2],
                centroid: p,
                covariance: Some(Matrix3::zeros()),
            },
            timestamp: 0.0,
        }
    }

    #[test]
    fn systematic_resample_basics() {
        let idx = systematic_resample(&[0.0, 1.0, 0.0], 0.3);
        assert_eq!(idx, vec![1, 1, 1]);
        let idx = systematic_resample(&[0.25; 4], 0.5);
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let idx = systematic_resample(&[0.5, 0.0, 0.5], 0.999);
        assert_eq!(idx.len(), 3);
        assert!(idx.iter().all(|&i| i != 1));
    }

    #[test]
    fn ess_bounds() {
        assert!((effective_sample_size(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert!((effective_sample_size(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_measurement_keeps_weights() {
        let cfg = FilterConfig::default();
        let pf = ParticleConfig {
            n_particles: 50,
            ..ParticleConfig::from_filter(&cfg, 3)
        };
        let mut filter = ParticleFilter::new(cfg, pf).unwrap();
        filter.step(0, 0.0, &[candidate(Vector3::new(10.0, 0.0, 2.0))]).unwrap();
        let mut set = filter.particles().unwrap().clone();
        set.weights = (1..=50).map(|i| i as f64).collect();
        let total: f64 = set.weights.iter().sum();
        set.weights.iter_mut().for_each(|w| *w /= total);
        let before = set.weights.clone();
        filter.set = Some(set);
        let report = filter.step(1, 0.1, &[]).unwrap();
        assert_eq!(filter.particles().unwrap().weights, before);
        assert_eq!(report.status, TrackStatus::Coasting(1));
        assert!(!report.accepted);
    }

    #[test]
    fn consensus_at_measurement() {
        let cfg = FilterConfig::default();
        let pf = ParticleConfig {
            n_particles: 20,
            process_noise: CovMatrix9::zeros(),
            measurement_noise: Matrix3::identity() * 1e-4,
            ..ParticleConfig::from_filter(&cfg, 1)
        };
        let z = Vector3::new(3.0, 4.0, 5.0);
        let mut set = ParticleSet {
            states: vec![initial_state(&z); 20],
            weights: vec![0.05; 20],
        };
        let zero = vec![0.0; 9 * 20];
        let out = particle_filter_step(
            &mut set,
            &[candidate(z)],
            0.1,
            &pf,
            &CovMatrix9::zeros(),
            &CovMatrix9::zeros(),
            14.16,
            &zero,
            0.5,
            || zero.clone(),
        )
        .unwrap();
        assert_eq!(out.accepted, Some(0));
        assert!((out.estimate.fixed_rows::<3>(0) - z).norm() < 1e-12);
    }

    #[test]
    fn collapsed_weights_reinitialize() {
        let cfg = FilterConfig::default();
        let pf = ParticleConfig {
            n_particles: 10,
            process_noise: CovMatrix9::zeros(),
            measurement_noise: Matrix3::identity() * 1e-6,
            ..ParticleConfig::from_filter(&cfg, 1)
        };
        // particles spread so the gate mean is at the candidate but every
        // particle is far from it under the tight likelihood
        let z = Vector3::new(0.0, 0.0, 0.0);
        let mut states = Vec::new();
        for i in 0..10 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            states.push(initial_state(&Vector3::new(sign * 1.0, 0.0, 0.0)));
        }
        let mut set = ParticleSet {
            states,
            weights: vec![0.1; 10],
        };
        let zero = vec![0.0; 90];
        let out = particle_filter_step(
            &mut set,
            &[candidate(z)],
            0.1,
            &pf,
            &CovMatrix9::zeros(),
            &CovMatrix9::zeros(),
            14.16,
            &zero,
            0.5,
            || zero.clone(),
        )
        .unwrap();
        assert!(out.reinitialized);
        assert!(set.states.iter().all(|s| s.fixed_rows::<3>(0).norm() == 0.0));
        assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_runs_repeat() {
        let cfg = FilterConfig::default();
        let run = || {
            let mut f = ParticleFilter::new(cfg, ParticleConfig::from_filter(&cfg, 9)).unwrap();
            let mut out = Vec::new();
            for k in 0..20u64 {
                let z = Vector3::new(10.0 + 0.1 * k as f64, 0.0, 2.0);
                out.push(f.step(k, 0.1 * k as f64, &[candidate(z)]).unwrap().estimate);
            }
            out
        };
        assert_eq!(run(), run());
    }
}
