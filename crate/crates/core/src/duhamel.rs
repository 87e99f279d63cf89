//! Semigroup differences through the Duhamel integral, and trace norms.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::{GradedOperator, PerturbationPair, Spectrum};
use crate::quadrature::QuadratureRule;

fn check_rule(rule: &QuadratureRule, t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if ((rule.span() - t) / t).abs() > 1e-12 {
        return Err(Error::Parameter(format!("quadrature rule is defined on (0, {}), expected (0, {t})", rule.span())));
    }
    if rule.nodes().iter().any(|&s| !(s > 0.0 && s < t)) {
        return Err(Error::Parameter(format!("quadrature nodes must lie in (0, {t})")));
    }
    Ok(())
}

/// G_{kl} = Σ_j w_j e^{-s_j λ_k} e^{-(t−s_j) μ_l}, summed in node order.
fn duhamel_weights(lambda: &DVector<f64>, mu: &DVector<f64>, t: f64, rule: &QuadratureRule) -> DMatrix<f64> {
    let (n, m) = (lambda.len(), mu.len());
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|l| {
            (0..n)
                .map(|k| {
                    rule.nodes()
                        .iter()
                        .zip(rule.weights())
                        .map(|(&s, &w)| w * (-s * lambda[k] - (t - s) * mu[l]).exp())
                        .sum()
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, m, |k, l| cols[l][k])
}

/// Q = Σ_j w_j e^{-s_jA}(A' − A)e^{-(t−s_j)A'}, assembled in the eigenbases
/// of A and A'.
pub fn duhamel_difference(pair: &PerturbationPair, t: f64, rule: &QuadratureRule) -> Result<DMatrix<f64>> {
    check_rule(rule, t)?;
    let sa = pair.base().spectrum()?;
    let sb = pair.perturbed().spectrum()?;
    let eta = pair.eta().to_dense();
    let core = sa.vectors.tr_mul(&eta) * &sb.vectors;
    let g = duhamel_weights(&sa.values, &sb.values, t, rule);
    Ok(&sa.vectors * core.component_mul(&g) * sb.vectors.transpose())
}

/// The Duhamel integral evaluated exactly in the eigenbases:
/// G_{kl} = ∫_0^t e^{-sλ_k} e^{-(t−s)μ_l} ds = e^{-tμ_l}(1 − e^{-t(λ_k−μ_l)})/(λ_k − μ_l),
/// computed with expm1 so that no cancellation occurs.
pub fn exact_duhamel_difference(pair: &PerturbationPair, t: f64) -> Result<DMatrix<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    let sa = pair.base().spectrum()?;
    let sb = pair.perturbed().spectrum()?;
    let eta = pair.eta().to_dense();
    let core = sa.vectors.tr_mul(&eta) * &sb.vectors;
    let g = DMatrix::from_fn(sa.values.len(), sb.values.len(), |k, l| {
        let (lam, mu) = (sa.values[k], sb.values[l]);
        let d = lam - mu;
        // the smaller exponent factors out
        let (lo, diff) = if d >= 0.0 { (mu, d) } else { (lam, -d) };
        if diff * t < 1e-300 {
            t * (-t * lo).exp()
        } else {
            (-t * lo).exp() * -(-t * diff).exp_m1() / diff
        }
    });
    Ok(&sa.vectors * core.component_mul(&g) * sb.vectors.transpose())
}

/// e^{-tA} − e^{-tA'} by spectral calculus.
pub fn direct_difference(pair: &PerturbationPair, t: f64) -> Result<DMatrix<f64>> {
    let heat = |s: &Spectrum| s.function_matrix(|x| (-t * x).exp());
    let (a, b) = (pair.base().spectrum()?, pair.perturbed().spectrum()?);
    Ok(heat(&a) - heat(&b))
}

/// The two terms of the semigroup difference under a change of inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDuhamel {
    /// Duhamel quadrature of e^{-tA} − e^{-tA'_op}, with A'_op = Ω^{-1/2}S'Ω^{1/2}
    /// the perturbed operator acting in base coordinates.
    pub duhamel_term: DMatrix<f64>,
    /// e^{-tA'_op} − e^{-tS'}: moving the perturbed semigroup into the
    /// symmetrized (base) inner product.
    pub correction_term: DMatrix<f64>,
    pub total: DMatrix<f64>,
}

/// Semigroup difference for a pair whose perturbed operator is self-adjoint
/// for the density Ω (the pair's weight change). The total approximates
/// e^{-tA} − e^{-tS'} with S' the stored symmetrized perturbed operator.
pub fn duhamel_difference_metric(pair: &PerturbationPair, t: f64, rule: &QuadratureRule) -> Result<MetricDuhamel> {
    let omega = pair
        .weight_change()
        .ok_or_else(|| Error::Parameter("metric Duhamel difference needs a weight change".into()))?;
    if omega.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Domain("weight change must be strictly positive".into()));
    }
    check_rule(rule, t)?;
    let n = pair.dim();
    let root = DVector::from_iterator(n, omega.iter().map(|w| w.sqrt()));
    let sa = pair.base().spectrum()?;
    let sb = pair.perturbed().spectrum()?;
    let eta_op = pair.perturbed_raw() - pair.base().to_dense();
    // e^{-(t−s)A'_op} = Ω^{-1/2} P e^{-(t−s)M} Pᵀ Ω^{1/2}
    let left = DMatrix::from_fn(n, n, |i, j| sb.vectors[(i, j)] / root[i]);
    let right = DMatrix::from_fn(n, n, |i, j| sb.vectors[(j, i)] * root[j]);
    let core = sa.vectors.tr_mul(&eta_op) * &left;
    let g = duhamel_weights(&sa.values, &sb.values, t, rule);
    let duhamel_term = &sa.vectors * core.component_mul(&g) * &right;
    let heat_sym = sb.function_matrix(|x| (-t * x).exp());
    let heat_op = DMatrix::from_fn(n, n, |i, j| heat_sym[(i, j)] * root[j] / root[i]);
    let correction_term = heat_op - &heat_sym;
    let total = &duhamel_term + &correction_term;
    Ok(MetricDuhamel { duhamel_term, correction_term, total })
}

/// Sum of singular values.
pub fn trace_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().sum()
}

/// |e^{-tA} − e^{-tA'}|₁ at each t.
pub fn trace_norm_scan(pair: &PerturbationPair, t_grid: &[f64]) -> Result<Vec<f64>> {
    if let Some(&t) = t_grid.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::Domain(format!("scan times must be positive, got {t}")));
    }
    // Fill the spectral caches before going parallel.
    pair.base().spectrum()?;
    pair.perturbed().spectrum()?;
    t_grid
        .par_iter()
        .map(|&t| {
            let d = direct_difference(pair, t)?;
            let v = trace_norm(&d);
            if !v.is_finite() {
                return Err(Error::Numerical(format!("trace norm not finite at t = {t}")));
            }
            Ok(v)
        })
        .collect()
}

/// Trace norms on a uniform grid over [a0, a1] with their maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundScan {
    pub t_grid: Vec<f64>,
    pub trace_norms: Vec<f64>,
    pub max: f64,
    pub argmax: f64,
}

pub fn uniform_bound_scan(pair: &PerturbationPair, a0: f64, a1: f64, samples: usize) -> Result<BoundScan> {
    if !(a0 > 0.0) {
        return Err(Error::Domain(format!("scan start must be positive, got {a0}")));
    }
    if !(a1 > a0) || samples == 0 {
        return Err(Error::Parameter(format!("invalid scan [{a0}, {a1}] with {samples} samples")));
    }
    let t_grid = linalg::linear_grid(a0, a1, samples);
    let trace_norms = trace_norm_scan(pair, &t_grid)?;
    // first maximum wins ties
    let (mut max, mut argmax) = (trace_norms[0], t_grid[0]);
    for (&t, &v) in t_grid.iter().zip(&trace_norms) {
        if v > max {
            max = v;
            argmax = t;
        }
    }
    Ok(BoundScan { t_grid, trace_norms, max, argmax })
}

/// D e^{-tD²} − D' e^{-tD'²}.
pub fn dirac_level_difference(a: &GradedOperator, b: &GradedOperator, t: f64) -> Result<DMatrix<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if !a.same_grading(b) {
        return Err(Error::Parameter("graded operators carry different gradings".into()));
    }
    let f = |g: &GradedOperator| {
        let (values, vectors) = linalg::sorted_symmetric_eigen(g.dirac());
        Spectrum { values, vectors }.function_matrix(|x| x * (-t * x * x).exp())
    };
    Ok(f(a) - f(b))
}

/// e^{-tD²} − e^{-tD'²} for graded operators.
pub fn dirac_heat_difference(a: &GradedOperator, b: &GradedOperator, t: f64) -> Result<DMatrix<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if !a.same_grading(b) {
        return Err(Error::Parameter("graded operators carry different gradings".into()));
    }
    let f = |g: &GradedOperator| {
        let (values, vectors) = linalg::sorted_symmetric_eigen(&g.dirac_squared());
        Spectrum { values, vectors }.function_matrix(|x| (-t * x).exp())
    };
    Ok(f(a) - f(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{graded_from_block, OperatorHandle};
    use std::f64::consts::LN_2;

    fn diag_pair(a: &[f64], b: &[f64]) -> PerturbationPair {
        PerturbationPair::new("d", OperatorHandle::diagonal("a", a).unwrap(), OperatorHandle::diagonal("b", b).unwrap())
            .unwrap()
    }

    #[test]
    fn identical_pair_gives_zero() {
        let p = diag_pair(&[1.0, 3.0], &[1.0, 3.0]);
        let rule = QuadratureRule::gauss_legendre(64, 0.5).unwrap();
        assert_eq!(duhamel_difference(&p, 0.5, &rule).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn scalar_example() {
        let p = diag_pair(&[1.0], &[2.0]);
        let rule = QuadratureRule::gauss_legendre(64, 1.0).unwrap();
        let q = duhamel_difference(&p, 1.0, &rule).unwrap();
        let want = (-1.0f64).exp() - (-2.0f64).exp();
        assert!((q[(0, 0)] - want).abs() <= 1e-12);
    }

    #[test]
    fn exact_form_matches_closed_forms() {
        let p = diag_pair(&[1.0, 2.0], &[2.0, 2.0]);
        let q = exact_duhamel_difference(&p, 0.7).unwrap();
        assert!((q[(0, 0)] - ((-0.7f64).exp() - (-1.4f64).exp())).abs() < 1e-16);
        assert_eq!(q[(1, 1)], 0.0);
        // nearly equal eigenvalues: no cancellation
        let p = diag_pair(&[1.0], &[1.0 + 1e-12]);
        let q = exact_duhamel_difference(&p, 2.0).unwrap();
        let eta = (1.0 + 1e-12) - 1.0;
        let want = 2.0 * (-2.0f64).exp() * eta;
        assert!((q[(0, 0)] - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn rule_span_must_match() {
        let p = diag_pair(&[1.0], &[2.0]);
        let rule = QuadratureRule::gauss_legendre(8, 2.0).unwrap();
        assert!(matches!(duhamel_difference(&p, 1.0, &rule), Err(Error::Parameter(_))));
    }

    #[test]
    fn trace_norm_examples() {
        assert!((trace_norm(&DMatrix::identity(2, 2)) - 2.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -4.0]));
        assert!((trace_norm(&d) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn metric_variant_reduces_without_weights() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let a = OperatorHandle::dense("a", s.clone()).unwrap();
        let b = OperatorHandle::dense("b", s * 1.5).unwrap();
        let pair = PerturbationPair::new("p", a, b).unwrap();
        let rule = QuadratureRule::gauss_legendre(64, 0.8).unwrap();
        assert!(matches!(duhamel_difference_metric(&pair, 0.8, &rule), Err(Error::Parameter(_))));
        let unit = pair.clone().with_weight_change(DVector::from_element(2, 1.0)).unwrap();
        let m = duhamel_difference_metric(&unit, 0.8, &rule).unwrap();
        let plain = duhamel_difference(&pair, 0.8, &rule).unwrap();
        assert!((m.total - plain).norm() < 1e-15);
        assert_eq!(m.correction_term.norm(), 0.0);
    }

    #[test]
    fn metric_variant_equal_symmetrized_operators() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let a = OperatorHandle::dense("a", s.clone()).unwrap();
        let pair = PerturbationPair::new("p", a.clone(), a)
            .unwrap()
            .with_weight_change(DVector::from_vec(vec![1.0, 2.0]))
            .unwrap();
        let rule = QuadratureRule::gauss_legendre(64, 1.0).unwrap();
        let m = duhamel_difference_metric(&pair, 1.0, &rule).unwrap();
        assert!(m.total.norm() <= 1e-12);
        assert!(m.duhamel_term.norm() > 1e-3);
    }

    #[test]
    fn bound_scan_identical_pair() {
        let p = diag_pair(&[1.0, 2.0], &[1.0, 2.0]);
        let scan = uniform_bound_scan(&p, 0.5, 2.0, 16).unwrap();
        assert_eq!(scan.max, 0.0);
        assert!(matches!(uniform_bound_scan(&p, 0.0, 2.0, 16), Err(Error::Domain(_))));
    }

    #[test]
    fn bound_scan_diag_pair_peaks_at_ln_two() {
        // |e^{-t} − e^{-2t}| is maximal at t = ln 2, inside [0.5, 2].
        let p = diag_pair(&[1.0, 2.0], &[1.0, 1.0]);
        let scan = uniform_bound_scan(&p, 0.5, 2.0, 16).unwrap();
        let nearest = scan.t_grid.iter().min_by(|a, b| (*a - LN_2).abs().total_cmp(&(*b - LN_2).abs())).unwrap();
        assert_eq!(scan.argmax, *nearest);
        assert!(scan.max > scan.trace_norms[0]);
        let f = |t: f64| (-t).exp() - (-2.0 * t).exp();
        for (&t, &v) in scan.t_grid.iter().zip(&scan.trace_norms) {
            assert!((v - f(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn dirac_level_scalar_and_anticommuting() {
        // graded 1×1 blocks: D has eigenvalues ±d
        let a = graded_from_block(&DMatrix::from_element(1, 1, 1.0));
        let b = graded_from_block(&DMatrix::from_element(1, 1, 2.0));
        let d = dirac_level_difference(&a, &b, 1.0).unwrap();
        let want = (-1.0f64).exp() - 2.0 * (-4.0f64).exp();
        assert!((d[(0, 1)] - want).abs() < 1e-14);
        let tau = a.grading_matrix();
        assert!((&tau * &d + &d * &tau).norm() < 1e-12);
        let c = graded_from_block(&DMatrix::from_element(2, 1, 1.0));
        assert!(matches!(dirac_level_difference(&a, &c, 1.0), Err(Error::Parameter(_))));
    }
}
