//! Lanczos approximation of e^{-tA}v for symmetric A given only as a matvec.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative accuracy targeted by [`expm_multiply`].
pub const KRYLOV_TOL: f64 = 1e-12;

/// Outcome of a Lanczos exponential evaluation.
#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub value: DVector<f64>,
    pub steps: usize,
    /// ‖v‖·β_m·|e_mᵀ e^{-tT_m} e_1|, the usual a-posteriori estimate.
    pub error_estimate: f64,
}

/// e^{-tA}v with full reorthogonalization. Runs until the a-posteriori
/// estimate falls below [`KRYLOV_TOL`]·‖result‖ or the Krylov space is exhausted.
pub fn expm_multiply<F>(apply: F, dim: usize, t: f64, v: &DVector<f64>) -> Result<KrylovResult>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if v.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: v.len() });
    }
    let beta0 = v.norm();
    if beta0 == 0.0 {
        return Ok(KrylovResult { value: DVector::zeros(dim), steps: 0, error_estimate: 0.0 });
    }
    let max_steps = dim.min(1500);
    let mut basis: Vec<DVector<f64>> = vec![v / beta0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let j = basis.len() - 1;
        let mut w = apply(&basis[j]);
        let a = basis[j].dot(&w);
        alpha.push(a);
        // Two passes of classical Gram–Schmidt against the whole basis.
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let b = w.norm();
        let m = alpha.len();
        let small = exp_tridiagonal_first_column(&alpha, &beta, t)?;
        let estimate = beta0 * b * small[m - 1].abs();
        let scale = beta0 * small.norm();
        let breakdown = b <= 1e-14 * (a.abs() + beta.last().copied().unwrap_or(0.0)).max(1e-300);
        if estimate <= KRYLOV_TOL * scale || breakdown || m >= max_steps {
            if m >= max_steps && !breakdown && estimate > KRYLOV_TOL * scale && m < dim {
                return Err(Error::Numerical(format!(
                    "Lanczos exponential did not converge in {m} steps (estimate {estimate:.3e})"
                )));
            }
            let mut value = DVector::zeros(dim);
            for (q, &c) in basis.iter().zip(small.iter()) {
                value.axpy(beta0 * c, q, 1.0);
            }
            let error_estimate = if breakdown || m == dim { 0.0 } else { estimate };
            return Ok(KrylovResult { value, steps: m, error_estimate });
        }
        beta.push(b);
        basis.push(w / b);
    }
}

/// e^{-tT}e_1 for the symmetric tridiagonal T with diagonal `alpha` and
/// off-diagonal `beta`.
fn exp_tridiagonal_first_column(alpha: &[f64], beta: &[f64], t: f64) -> Result<DVector<f64>> {
    let m = alpha.len();
    let mut tm = DMatrix::zeros(m, m);
    for i in 0..m {
        tm[(i, i)] = alpha[i];
        if i + 1 < m {
            tm[(i, i + 1)] = beta[i];
            tm[(i + 1, i)] = beta[i];
        }
    }
    let (vals, vecs) = linalg::sorted_symmetric_eigen(&tm);
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Ritz values".into()));
    }
    // Shift by the smallest Ritz value so no term overflows.
    let shift = vals[m - 1];
    let mut coeffs = DVector::zeros(m);
    for k in 0..m {
        coeffs[k] = vecs[(0, k)] * (-t * (vals[k] - shift)).exp();
    }
    let out = vecs * coeffs * (-t * shift).exp();
    Ok(out)
}
