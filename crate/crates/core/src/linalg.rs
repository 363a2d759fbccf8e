//! Small dense linear-algebra helpers shared by the detection and filtering
//! stages.

use nalgebra::{Matrix3, SMatrix};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric 3×3 matrix, ascending.
///
/// Closed-form trigonometric solution of the characteristic cubic. Only the
/// lower triangle is read. Off-diagonal magnitudes below `1e-9` relative to
/// the matrix scale are treated as zero so a diagonal input is returned
/// exactly.
pub fn sym3_eigenvalues(m: &Matrix3<f64>) -> [f64; 3] {
    let (a00, a11, a22) = (m[(0, 0)], m[(1, 1)], m[(2, 2)]);
    let (a10, a20, a21) = (m[(1, 0)], m[(2, 0)], m[(2, 1)]);
    let off = a10 * a10 + a20 * a20 + a21 * a21;
    let scale = a00.abs().max(a11.abs()).max(a22.abs()).max(off.sqrt());

    if off <= (1e-9 * scale).powi(2) {
        let mut d = [a00, a11, a22];
        d.sort_by(f64::total_cmp);
        return d;
    }

    let q = (a00 + a11 + a22) / 3.0;
    let (b00, b11, b22) = (a00 - q, a11 - q, a22 - q);
    let p2 = b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * off;
    let p = (p2 / 6.0).sqrt();

    // det(B / p) / 2, clamped into the acos domain.
    let det = b00 * (b11 * b22 - a21 * a21) - a10 * (a10 * b22 - a21 * a20)
        + a20 * (a10 * a21 - b11 * a20);
    let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;

    let largest = q + 2.0 * p * phi.cos();
    let smallest = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let middle = 3.0 * q - largest - smallest;
    let mut out = [smallest, middle, largest];
    out.sort_by(f64::total_cmp);
    out
}

pub fn max_eigenvalue(m: &Matrix3<f64>) -> f64 {
    sym3_eigenvalues(m)[2]
}

/// Replace `m` by `(m + mᵀ) / 2`.
pub fn symmetrize<const N: usize>(m: &mut SMatrix<f64, N, N>) {
    for i in 0..N {
        for j in (i + 1)..N {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Spectral condition number of a symmetric 3×3 matrix, `inf` when it is not
/// positive definite.
pub fn sym3_condition(m: &Matrix3<f64>) -> f64 {
    let [lo, _, hi] = sym3_eigenvalues(m);
    if lo <= 0.0 || !lo.is_finite() || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Probability mass within three standard deviations of a normal mean,
/// `erf(3/√2)`. Quoted as 0.997 in the usual rounding; the gate threshold
/// 14.16 for three degrees of freedom belongs to this exact value (the
/// literal 0.997 gives 13.93).
pub const THREE_SIGMA_MASS: f64 = 0.997_300_203_936_739_8;

/// Upper quantile of the chi-square distribution: the `x` with
/// `P(X ≤ x) = probability` for `X ~ χ²(dof)`.
pub fn chi_square_quantile(probability: f64, dof: u32) -> Result<f64> {
    if !(probability > 0.0 && probability < 1.0) {
        return Err(Error::config(format!(
            "chi-square probability must lie in (0, 1), got {probability}"
        )));
    }
    if dof == 0 {
        return Err(Error::config("chi-square degrees of freedom must be positive"));
    }
    let dist = ChiSquared::new(f64::from(dof))
        .map_err(|e| Error::config(format!("chi-square distribution: {e}")))?;
    Ok(dist.inverse_cdf(probability))
}

pub fn is_finite_matrix<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> bool {
    m.iter().all(|v| v.is_finite())
}
