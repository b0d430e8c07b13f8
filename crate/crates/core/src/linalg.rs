//! Dense vector/matrix aliases and the power-iteration eigenvalue bounds used
//! for calibrating the linearization scalars.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative tolerance for the power iteration.
pub const POWER_TOL: f64 = 1e-10;
/// Iteration cap for the power iteration.
pub const POWER_MAX_ITER: usize = 10_000;

/// Smallest and largest eigenvalue of `MᵀM`.
///
/// The largest comes from power iteration on `MᵀM`; the smallest from power
/// iteration on the shifted matrix `σ_max·I − MᵀM`, whose dominant eigenvalue
/// is `σ_max − σ_min`.
pub fn spectral_bounds(m: &Matrix) -> Result<(f64, f64)> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidMatrix("empty matrix".into()));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidMatrix("zero matrix".into()));
    }
    let gram = m.transpose() * m;
    let sigma_max = dominant_eigenvalue(&gram, None)?;
    let n = gram.nrows();
    let shifted = Matrix::identity(n, n) * sigma_max - &gram;
    let gap = dominant_eigenvalue(&shifted, Some(sigma_max))?;
    let sigma_min = (sigma_max - gap).max(0.0);
    Ok((sigma_min, sigma_max))
}

/// Largest eigenvalue of `MᵀM`, with the zero matrix mapped to 0.
pub fn gram_max_eigenvalue(m: &Matrix) -> Result<f64> {
    if m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let gram = m.transpose() * m;
    dominant_eigenvalue(&gram, None)
}

/// Operator 2-norm, the largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(m.singular_values().max())
}

/// Dominant eigenvalue of a symmetric positive semidefinite matrix.
///
/// `scale` sets the magnitude the tolerances are measured against; by default
/// the current Rayleigh quotient.
fn dominant_eigenvalue(s: &Matrix, scale: Option<f64>) -> Result<f64> {
    let n = s.nrows();
    // fixed start so results are reproducible
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut v = Vector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    v /= v.norm();
    let mut mu_prev = f64::NAN;
    let mut delta_prev = f64::NAN;
    for _ in 1..=POWER_MAX_ITER {
        let w = s * &v;
        let mu = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        let tol = POWER_TOL * scale.unwrap_or(mu.abs()).max(f64::MIN_POSITIVE);
        let residual = (&w - &v * mu).norm();
        let delta = (mu - mu_prev).abs();
        // geometric tail of the Rayleigh quotient sequence; covers clustered
        // top eigenvalues where the eigenvector itself converges slowly
        let ratio = delta / delta_prev;
        let tail = if ratio < 1.0 {
            delta * ratio / (1.0 - ratio)
        } else {
            f64::INFINITY
        };
        if residual <= tol || delta == 0.0 || (delta <= tol && tail <= tol) {
            return Ok(mu);
        }
        mu_prev = mu;
        delta_prev = delta;
        v = w / wn;
    }
    Err(Error::NumericalFailure {
        iterations: POWER_MAX_ITER,
    })
}

/// Frobenius norm squared.
pub(crate) fn fro2(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}
