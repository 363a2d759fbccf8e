//! Nine-state constant-acceleration Kalman filter with innovation-driven
//! process-noise adaptation and residual-driven measurement-noise adaptation.
//!
//! The state is `[p, v, a]` stacked per axis block:
//! `[p_x, p_y, p_z, v_x, v_y, v_z, a_x, a_y, a_z]`. Measurements are 3-D
//! positions. Every covariance leaving this module is symmetrized.

use nalgebra::{Cholesky, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    chi_square_quantile, is_finite_matrix, sym3_condition, symmetrize, THREE_SIGMA_MASS,
};

pub type StateVector = SVector<f64, 9>;
pub type CovMatrix9 = SMatrix<f64, 9, 9>;
pub type Gain = SMatrix<f64, 9, 3>;
pub type MeasurementMatrix = SMatrix<f64, 3, 9>;

/// Innovation covariances above this condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Maps a state to the predicted measurement and its Jacobian.
///
/// Only [`PositionMeasurement`] ships; a range/bearing model would implement
/// this trait with a state-dependent Jacobian.
pub trait MeasurementModel {
    fn predict(&self, state: &StateVector) -> Vector3<f64>;
    fn jacobian(&self, state: &StateVector) -> MeasurementMatrix;
}

/// Direct observation of the position block, `H = [I₃ 0 0]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PositionMeasurement;

impl MeasurementModel for PositionMeasurement {
    fn predict(&self, state: &StateVector) -> Vector3<f64> {
        state.fixed_rows::<3>(0).into_owned()
    }

    fn jacobian(&self, _state: &StateVector) -> MeasurementMatrix {
        measurement_matrix()
    }
}

pub fn measurement_matrix() -> MeasurementMatrix {
    let mut h = MeasurementMatrix::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    h
}

/// Adapted noise covariances carried by a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseState {
    /// Process noise, 9×9.
    pub q: CovMatrix9,
    /// Measurement noise, 3×3.
    pub r: Matrix3<f64>,
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationRecord {
    /// `z − H x̂⁻`
    pub innovation: Vector3<f64>,
    pub innovation_cov: Matrix3<f64>,
    pub gain: Gain,
    /// `z − H x̂⁺`
    pub residual: Vector3<f64>,
    pub mahalanobis_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Fallback step when frame timestamps cannot provide one (s).
    pub dt: f64,
    /// Forgetting factor of the process-noise recursion, in (0, 1).
    pub alpha: f64,
    /// Forgetting factor of the measurement-noise recursion, in (0, 1).
    pub beta: f64,
    /// Gate probability; the threshold is the chi-square quantile with 3 dof.
    pub gate_gamma: f64,
    /// Consecutive missed steps tolerated before a track is declared lost.
    pub t_occ: u32,
    pub p0: CovMatrix9,
    pub q0: CovMatrix9,
    pub r0: Matrix3<f64>,
}

/// Block-diagonal covariance with one variance per kinematic order.
pub fn block_diagonal(pos: f64, vel: f64, acc: f64) -> CovMatrix9 {
    let mut m = CovMatrix9::zeros();
    for i in 0..3 {
        m[(i, i)] = pos;
        m[(i + 3, i + 3)] = vel;
        m[(i + 6, i + 6)] = acc;
    }
    m
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            alpha: 0.3,
            beta: 0.3,
            gate_gamma: THREE_SIGMA_MASS,
            t_occ: 10,
            p0: block_diagonal(1.0, 25.0, 100.0),
            q0: CovMatrix9::identity() * 0.1,
            r0: Matrix3::identity() * 0.25,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gate_gamma", self.gate_gamma)] {
            if !(v > 0.0 && v < 1.0) {
                problems.push(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.t_occ == 0 {
            problems.push("t_occ must be at least 1".into());
        }
        if !is_psd9(&self.p0) {
            problems.push("p0 must be symmetric positive semi-definite".into());
        }
        if !is_psd9(&self.q0) {
            problems.push("q0 must be symmetric positive semi-definite".into());
        }
        if !is_psd3(&self.r0) {
            problems.push("r0 must be symmetric positive semi-definite".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Mahalanobis gate threshold τ.
    pub fn gate_threshold(&self) -> Result<f64> {
        chi_square_quantile(self.gate_gamma, 3)
    }

    pub fn initial_noise(&self) -> NoiseState {
        NoiseState {
            q: self.q0,
            r: self.r0,
        }
    }
}

fn is_psd9(m: &CovMatrix9) -> bool {
    is_finite_matrix(m)
        && (m - m.transpose()).abs().max() <= 1e-9
        && m.symmetric_eigenvalues().min() >= -1e-9
}

fn is_psd3(m: &Matrix3<f64>) -> bool {
    is_finite_matrix(m)
        && (m - m.transpose()).abs().max() <= 1e-9
        && crate::linalg::sym3_eigenvalues(m)[0] >= -1e-9
}

/// Constant-acceleration transition matrix for step `dt`.
pub fn transition_matrix(dt: f64) -> Result<CovMatrix9> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("dt must be positive, got {dt}")));
    }
    let mut f = CovMatrix9::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
        f[(i, i + 6)] = 0.5 * dt * dt;
        f[(i + 3, i + 6)] = dt;
    }
    Ok(f)
}

/// Time update: `x⁻ = F x`, `P⁻ = F P Fᵀ + Q`.
pub fn predict(
    state: &StateVector,
    cov: &CovMatrix9,
    transition: &CovMatrix9,
    process_noise: &CovMatrix9,
) -> Result<(StateVector, CovMatrix9)> {
    let x = transition * state;
    let mut p = transition * cov * transition.transpose() + process_noise;
    symmetrize(&mut p);
    if !is_finite_matrix(&x) || !is_finite_matrix(&p) {
        return Err(Error::NumericalFailure {
            step: 0,
            stage: "predict",
        });
    }
    Ok((x, p))
}

/// `S = H P⁻ Hᵀ + R`, checked for invertibility.
pub fn innovation_covariance(
    h: &MeasurementMatrix,
    cov_prior: &CovMatrix9,
    r: &Matrix3<f64>,
) -> Result<(Matrix3<f64>, Cholesky<f64, nalgebra::U3>)> {
    let mut s = h * cov_prior * h.transpose() + r;
    symmetrize(&mut s);
    let condition = sym3_condition(&s);
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::DegenerateInnovation { condition });
    }
    let chol = Cholesky::new(s).ok_or(Error::DegenerateInnovation { condition })?;
    Ok((s, chol))
}

/// `dᵀ S⁻¹ d`.
pub fn mahalanobis_sq(innovation: &Vector3<f64>, s_chol: &Cholesky<f64, nalgebra::U3>) -> f64 {
    innovation.dot(&s_chol.solve(innovation))
}

/// Measurement update with the standard Kalman gain.
pub fn update<M: MeasurementModel>(
    state_prior: &StateVector,
    cov_prior: &CovMatrix9,
    z: &Vector3<f64>,
    model: &M,
    r: &Matrix3<f64>,
) -> Result<(StateVector, CovMatrix9, InnovationRecord)> {
    let h = model.jacobian(state_prior);
    let (s, chol) = innovation_covariance(&h, cov_prior, r)?;
    let innovation = z - model.predict(state_prior);

    // K = P⁻ Hᵀ S⁻¹, computed as (S⁻¹ H P⁻)ᵀ with P⁻ symmetric
    let gain: Gain = chol.solve(&(h * cov_prior)).transpose();
    let state = state_prior + gain * innovation;
    let mut cov = (CovMatrix9::identity() - gain * h) * cov_prior;
    symmetrize(&mut cov);
    if !is_finite_matrix(&state) || !is_finite_matrix(&cov) {
        return Err(Error::NumericalFailure {
            step: 0,
            stage: "update",
        });
    }

    let residual = z - model.predict(&state);
    let record = InnovationRecord {
        innovation,
        innovation_cov: s,
        gain,
        residual,
        mahalanobis_sq: mahalanobis_sq(&innovation, &chol),
    };
    Ok((state, cov, record))
}

fn check_forgetting(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in (0, 1), got {value}")))
    }
}

/// `Q ← α Q + (1 − α) K d dᵀ Kᵀ`.
pub fn adapt_process_noise(
    q_prev: &CovMatrix9,
    gain: &Gain,
    innovation: &Vector3<f64>,
    alpha: f64,
) -> Result<CovMatrix9> {
    check_forgetting("alpha", alpha)?;
    let kd = gain * innovation;
    let mut q = q_prev * alpha + (kd * kd.transpose()) * (1.0 - alpha);
    symmetrize(&mut q);
    Ok(q)
}

/// `R ← β R + (1 − β)(ε εᵀ + H P⁻ Hᵀ)`.
pub fn adapt_measurement_noise(
    r_prev: &Matrix3<f64>,
    residual: &Vector3<f64>,
    h: &MeasurementMatrix,
    cov_prior: &CovMatrix9,
    beta: f64,
) -> Result<Matrix3<f64>> {
    check_forgetting("beta", beta)?;
    let mut r = r_prev * beta
        + (residual * residual.transpose() + h * cov_prior * h.transpose()) * (1.0 - beta);
    symmetrize(&mut r);
    Ok(r)
}

/// Track-birth state: position from the measurement, zero velocity and
/// acceleration.
pub fn initial_state(z: &Vector3<f64>) -> StateVector {
    let mut x = StateVector::zeros();
    x.fixed_rows_mut::<3>(0).copy_from(z);
    x
}
