//! Small-t expansions of relative heat traces by weighted least squares.
//!
//! The basis is t^{p_j} with p_j = −n/2 + j·step, j = 0..=L. Rows are
//! weighted by t^{n/2} and column j is scaled by t_max^{p_j} before an SVD
//! solve, so the reported condition number is that of the scaled system.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heat::HeatTraceSeries;
use crate::operator::{PerturbationPair, DENSE_THRESHOLD};

/// Condition numbers above this attach an ill-conditioning warning.
pub const ILL_CONDITIONED: f64 = 1e12;

/// Spacing of basis exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentStep {
    /// Half steps for odd n, integer steps for even n.
    Auto,
    Half,
    Integer,
}

impl ExponentStep {
    pub fn value(self, n_dim: u32) -> f64 {
        match self {
            ExponentStep::Half => 0.5,
            ExponentStep::Integer => 1.0,
            ExponentStep::Auto => {
                if n_dim % 2 == 1 {
                    0.5
                } else {
                    1.0
                }
            }
        }
    }
}

/// p_j = −n/2 + j·step for j = 0..=L.
pub fn basis_exponents(n_dim: u32, l: usize, step: ExponentStep) -> Vec<f64> {
    let h = step.value(n_dim);
    (0..=l).map(|j| -(n_dim as f64) / 2.0 + j as f64 * h).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticExpansion {
    pub n_dim: u32,
    pub l: usize,
    pub exponents: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fit_window: (f64, f64),
    pub residual_rms: f64,
    pub condition_number: f64,
    pub samples: usize,
    pub warnings: Vec<String>,
}

impl AsymptoticExpansion {
    /// Σ_j a_j t^{p_j}.
    pub fn partial_sum(&self, t: f64) -> f64 {
        self.exponents.iter().zip(&self.coefficients).map(|(&p, &a)| a * t.powf(p)).sum()
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.condition_number > ILL_CONDITIONED
    }

    /// `order,coefficient,stderr` rows behind `#` header lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# n_dim = {}", self.n_dim);
        let _ = writeln!(out, "# fit_window = {:.16e},{:.16e}", self.fit_window.0, self.fit_window.1);
        let _ = writeln!(out, "# condition_number = {:.16e}", self.condition_number);
        let _ = writeln!(out, "# residual_rms = {:.16e}", self.residual_rms);
        let _ = writeln!(out, "# samples = {}", self.samples);
        for w in &self.warnings {
            let _ = writeln!(out, "# warning = {w}");
        }
        out.push_str("order,coefficient,stderr\n");
        for i in 0..self.coefficients.len() {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", self.exponents[i], self.coefficients[i], self.stderr[i]);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Parameter(format!("expansion record: {what}"));
        let num = |s: &str| -> Result<f64> { s.trim().parse().map_err(|_| bad(&format!("bad number '{s}'"))) };
        let mut n_dim = None;
        let mut window = None;
        let mut cond = None;
        let mut rms = None;
        let mut samples = None;
        let mut warnings = Vec::new();
        let (mut exps, mut coefs, mut errs) = (Vec::new(), Vec::new(), Vec::new());
        let mut header_seen = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                let Some((k, v)) = rest.split_once('=') else { continue };
                let v = v.trim();
                match k.trim() {
                    "n_dim" => n_dim = v.parse::<u32>().ok(),
                    "fit_window" => {
                        let (a, b) = v.split_once(',').ok_or_else(|| bad("fit_window"))?;
                        window = Some((num(a)?, num(b)?));
                    }
                    "condition_number" => cond = Some(num(v)?),
                    "residual_rms" => rms = Some(num(v)?),
                    "samples" => samples = v.parse::<usize>().ok(),
                    "warning" => warnings.push(v.to_string()),
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                if line != "order,coefficient,stderr" {
                    return Err(bad("missing `order,coefficient,stderr` header"));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(&format!("malformed row '{line}'")));
            }
            exps.push(num(f[0])?);
            coefs.push(num(f[1])?);
            errs.push(num(f[2])?);
        }
        if exps.is_empty() {
            return Err(bad("no coefficients"));
        }
        Ok(Self {
            n_dim: n_dim.ok_or_else(|| bad("missing n_dim"))?,
            l: exps.len() - 1,
            exponents: exps,
            coefficients: coefs,
            stderr: errs,
            fit_window: window.ok_or_else(|| bad("missing fit_window"))?,
            residual_rms: rms.ok_or_else(|| bad("missing residual_rms"))?,
            condition_number: cond.ok_or_else(|| bad("missing condition_number"))?,
            samples: samples.ok_or_else(|| bad("missing samples"))?,
            warnings,
        })
    }
}

/// A factored weighted design for one set of sample times and exponents,
/// reusable across many right-hand sides.
#[derive(Debug, Clone)]
pub struct ExpansionFitter {
    n_dim: u32,
    times: Vec<f64>,
    exponents: Vec<f64>,
    col_scale: Vec<f64>,
    row_weight: Vec<f64>,
    u: DMatrix<f64>,
    singular: DVector<f64>,
    v_t: DMatrix<f64>,
    window: (f64, f64),
}

impl ExpansionFitter {
    pub fn new(times: &[f64], n_dim: u32, l: usize, step: ExponentStep, window: (f64, f64)) -> Result<Self> {
        let (t_min, t_max) = window;
        if !(t_min > 0.0 && t_max > t_min) {
            return Err(Error::Parameter(format!("invalid fit window ({t_min}, {t_max})")));
        }
        let inside: Vec<f64> = times.iter().copied().filter(|&t| t >= t_min && t <= t_max).collect();
        let needed = 2 * (l + 1);
        if inside.len() < needed {
            return Err(Error::Parameter(format!(
                "fit window [{t_min:e}, {t_max:e}] holds {} samples, need at least {needed}",
                inside.len()
            )));
        }
        let exponents = basis_exponents(n_dim, l, step);
        let half_n = n_dim as f64 / 2.0;
        let col_scale: Vec<f64> = exponents.iter().map(|&p| t_max.powf(p)).collect();
        let row_weight: Vec<f64> = inside.iter().map(|&t| t.powf(half_n)).collect();
        let design =
            DMatrix::from_fn(inside.len(), l + 1, |i, j| row_weight[i] * inside[i].powf(exponents[j]) / col_scale[j]);
        let svd = design.svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
        let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
        Ok(Self {
            n_dim,
            times: inside,
            exponents,
            col_scale,
            row_weight,
            u,
            singular: svd.singular_values,
            v_t,
            window,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.singular.iter().fold(0.0f64, |a, &b| a.max(b));
        let min = self.singular.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Fits values sampled at [`ExpansionFitter::times`].
    pub fn fit(&self, values: &[f64]) -> Result<AsymptoticExpansion> {
        let m = self.times.len();
        let k = self.exponents.len();
        if values.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: values.len() });
        }
        let rhs = DVector::from_iterator(m, values.iter().zip(&self.row_weight).map(|(y, w)| y * w));
        let smax = self.singular.iter().fold(0.0f64, |a, &b| a.max(b));
        let cutoff = f64::EPSILON * smax * m as f64;
        let utb = self.u.tr_mul(&rhs);
        let mut z = DVector::zeros(k);
        for i in 0..k {
            if self.singular[i] > cutoff {
                z[i] = utb[i] / self.singular[i];
            }
        }
        let scaled = self.v_t.tr_mul(&z);
        let coefficients: Vec<f64> = (0..k).map(|j| scaled[j] / self.col_scale[j]).collect();

        let fitted = |t: f64| -> f64 { self.exponents.iter().zip(&coefficients).map(|(&p, &a)| a * t.powf(p)).sum() };
        let mut rss = 0.0;
        let mut rms = 0.0;
        let p_last = *self.exponents.last().unwrap();
        for (i, &t) in self.times.iter().enumerate() {
            let r = values[i] - fitted(t);
            rss += (r * self.row_weight[i]).powi(2);
            rms += (r / t.powf(p_last)).powi(2);
        }
        let residual_rms = (rms / m as f64).sqrt();
        let dof = m.saturating_sub(k);
        let sigma2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
        // cov(scaled) = V Σ^{-2} Vᵀ σ²
        let stderr: Vec<f64> = (0..k)
            .map(|j| {
                let var: f64 = (0..k)
                    .filter(|&i| self.singular[i] > cutoff)
                    .map(|i| (self.v_t[(i, j)] / self.singular[i]).powi(2))
                    .sum();
                (var * sigma2).sqrt() / self.col_scale[j]
            })
            .collect();
        let condition_number = self.condition_number();
        let mut warnings = Vec::new();
        if condition_number > ILL_CONDITIONED {
            warnings.push(format!("ill-conditioned fit (condition number {condition_number:.3e})"));
        }
        Ok(AsymptoticExpansion {
            n_dim: self.n_dim,
            l: k - 1,
            exponents: self.exponents.clone(),
            coefficients,
            stderr,
            fit_window: self.window,
            residual_rms,
            condition_number,
            samples: m,
            warnings,
        })
    }
}

/// Fits with the default exponent spacing.
pub fn fit_expansion(
    series: &HeatTraceSeries,
    n_dim: u32,
    l: usize,
    window: (f64, f64),
) -> Result<AsymptoticExpansion> {
    fit_expansion_with(series, n_dim, l, window, ExponentStep::Auto)
}

pub fn fit_expansion_with(
    series: &HeatTraceSeries,
    n_dim: u32,
    l: usize,
    window: (f64, f64),
    step: ExponentStep,
) -> Result<AsymptoticExpansion> {
    let grid = series.t_grid();
    let (lo, hi) = (grid[0], *grid.last().unwrap());
    if window.0 < lo * (1.0 - 1e-12) || window.1 > hi * (1.0 + 1e-12) {
        return Err(Error::Parameter(format!(
            "fit window [{:e}, {:e}] exceeds the series range [{lo:e}, {hi:e}]",
            window.0, window.1
        )));
    }
    let fitter = ExpansionFitter::new(grid, n_dim, l, step, window)?;
    let values: Vec<f64> =
        grid.iter().zip(series.values()).filter(|(&t, _)| t >= window.0 && t <= window.1).map(|(_, &v)| v).collect();
    fitter.fit(&values)
}

/// Per-site fitted coefficients of W(t,m,m) − W'(t,m,m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub exponents: Vec<f64>,
    /// `per_site[m][j]`: coefficient of t^{p_j} at site m.
    pub per_site: Vec<Vec<f64>>,
    /// Σ_m |coefficient| per order.
    pub l1: Vec<f64>,
    pub condition_number: f64,
}

pub fn coefficient_difference_report(
    pair: &PerturbationPair,
    t_grid: &[f64],
    n_dim: u32,
    l: usize,
    window: (f64, f64),
) -> Result<CoefficientReport> {
    if pair.dim() > DENSE_THRESHOLD {
        return Err(Error::Capability(format!(
            "per-site coefficients need dense kernels (dim {} > {})",
            pair.dim(),
            DENSE_THRESHOLD
        )));
    }
    crate::heat::check_grid(t_grid)?;
    let fitter = ExpansionFitter::new(t_grid, n_dim, l, ExponentStep::Auto, window)?;
    let sa = pair.base().spectrum()?;
    let sb = pair.perturbed().spectrum()?;
    let n = pair.dim();
    let per_site: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|m| {
            let diffs: Vec<f64> = fitter
                .times()
                .iter()
                .map(|&t| {
                    let a: f64 = (0..n).map(|k| sa.vectors[(m, k)].powi(2) * (-t * sa.values[k]).exp()).sum();
                    let b: f64 = (0..n).map(|k| sb.vectors[(m, k)].powi(2) * (-t * sb.values[k]).exp()).sum();
                    a - b
                })
                .collect();
            fitter.fit(&diffs).map(|e| e.coefficients)
        })
        .collect::<Result<_>>()?;
    let k = l + 1;
    let l1 = (0..k).map(|j| per_site.iter().map(|c| c[j].abs()).sum()).collect();
    Ok(CoefficientReport {
        exponents: basis_exponents(n_dim, l, ExponentStep::Auto),
        per_site,
        l1,
        condition_number: fitter.condition_number(),
    })
}
