//! Relative zeta functions, determinants, indices and torsion.
//!
//! ζ(s) = ζ₁(s) + ζ₂(s) with
//!
//! ```text
//! Γ(s) ζ₁(s) = ∫₀^{split} t^{s−1} F(t) dt,   Γ(s) ζ₂(s) = ∫_{split}^∞ t^{s−1} F(t) dt,
//! ```
//!
//! F(t) = tr(e^{-tA} − e^{-tA'}). Below the lower end t_c of the fit window
//! F is replaced by its fitted expansion Σ a_j t^{p_j}, integrated in closed
//! form; that supplies the continuation and the poles at s = −p_j. The large-t
//! part splits off the plateau h = dim ker A − dim ker A', whose integral
//! continues to −h·split^s/s.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{fit_expansion_with, AsymptoticExpansion, ExponentStep};
use crate::error::{Error, Result};
use crate::heat::{relative_heat_trace, supertrace, HeatTraceSeries, SpectralPairTrace, TraceMethod};
use crate::linalg;
use crate::operator::{kernel_dim, GradedOperator, PerturbationPair, KERNEL_REL_THRESHOLD};
use crate::quadrature::PanelRule;
use crate::special::{recip_gamma, recip_gamma_over_shift};

/// Nonzero eigenvalues must exceed this multiple of λ_max.
pub const GAP_REL_THRESHOLD: f64 = 1e-8;

/// Distance from a pole below which evaluation is refused.
pub const POLE_TOL: f64 = 1e-10;

/// Largest tolerated |F(T_max) − h| at the end of the series.
pub const TAIL_TOL: f64 = 1e-9;

/// Quadrature tolerance for the finite-interval Mellin integrals.
const MELLIN_REL_TOL: f64 = 1e-14;

/// Probe exponents the Mellin panel rules are refined for.
const PROBE_S: [f64; 5] = [-0.5, 0.0, 1.0, 2.0, 3.0];

fn default_split() -> f64 {
    1.0
}

fn default_l() -> usize {
    4
}

fn default_fd_step() -> f64 {
    1e-4
}

fn default_step() -> ExponentStep {
    ExponentStep::Auto
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaConfig {
    #[serde(default = "default_split")]
    pub split_point: f64,
    /// Effective dimension n of the expansion basis t^{−n/2 + j·step}.
    #[serde(default)]
    pub n_dim: u32,
    #[serde(default = "default_l")]
    pub l: usize,
    /// Defaults to [1e-4, 1e-2] / max(λ_max, 1).
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
    #[serde(default = "default_step")]
    pub step: ExponentStep,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

impl Default for ZetaConfig {
    fn default() -> Self {
        Self {
            split_point: default_split(),
            n_dim: 0,
            l: default_l(),
            fit_window: None,
            step: default_step(),
            fd_step: default_fd_step(),
        }
    }
}

impl ZetaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_point > 0.0 && self.split_point.is_finite()) {
            return Err(Error::Parameter(format!("split point must be positive, got {}", self.split_point)));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 0.1) {
            return Err(Error::Parameter(format!("finite-difference step {} outside (0, 0.1)", self.fd_step)));
        }
        if let Some((a, b)) = self.fit_window {
            if !(a > 0.0 && b > a) {
                return Err(Error::Parameter(format!("invalid fit window ({a}, {b})")));
            }
            if b >= self.split_point {
                return Err(Error::Parameter("fit window must lie below the split point".into()));
            }
        }
        Ok(())
    }
}

/// Location and residue of a pole of ζ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleInfo {
    pub location: f64,
    pub residue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaDiagnostics {
    pub fit_residual: f64,
    pub fit_condition_number: f64,
    /// |F(T_max) − h| at the last series sample.
    pub tail_deviation: f64,
    /// N·e^{−gap·T_int}: bound on the dropped large-t integrand.
    pub tail_truncation_bound: f64,
    /// |F(t_c) − partial sum|, the size of the remainder dropped below t_c.
    pub small_t_remainder: f64,
    pub zeta_prime_error_estimate: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaResult {
    pub s_values: Vec<Complex64>,
    pub zeta_values: Vec<Complex64>,
    pub zeta_prime_at_zero: f64,
    pub h: i64,
    pub poles: Vec<PoleInfo>,
    pub split_point: f64,
    pub determinant: f64,
    pub diagnostics: ZetaDiagnostics,
}

/// Checks the discrete gap condition: every eigenvalue above the kernel
/// threshold is at least [`GAP_REL_THRESHOLD`]·λ_max, and kernel dimensions do
/// not change when the threshold doubles.
pub fn check_gap_condition(pair: &PerturbationPair) -> Result<f64> {
    let lmax = pair.spectral_scale()?;
    let thr = pair.kernel_threshold()?;
    let mut gap = f64::INFINITY;
    for (name, op) in [("base", pair.base()), ("perturbed", pair.perturbed())] {
        let ev = op.eigenvalues()?;
        if kernel_dim(&ev, thr) != kernel_dim(&ev, 2.0 * thr) {
            return Err(Error::Degenerate(format!(
                "{name} kernel dimension of '{}' is unstable under threshold doubling",
                pair.label()
            )));
        }
        if let Some(&smallest) = ev.iter().rfind(|&&v| v > thr) {
            if smallest < GAP_REL_THRESHOLD * lmax {
                return Err(Error::Degenerate(format!(
                    "{name} operator of '{}' has no spectral gap: smallest nonzero eigenvalue {smallest:.3e} < {:.1e}·λ_max",
                    pair.label(),
                    GAP_REL_THRESHOLD
                )));
            }
            gap = gap.min(smallest);
        }
    }
    Ok(gap)
}

/// Default fit window [1e-4, 1e-2] / max(λ_max, 1).
pub fn default_fit_window(pair: &PerturbationPair) -> Result<(f64, f64)> {
    let rho = pair.spectral_scale()?.max(1.0);
    Ok((1e-4 / rho, 1e-2 / rho))
}

/// Sample grid: 3(L+1) log points across the fit window, then 40 log points
/// up to T_tail = max(ln(N·1e13)/gap, 2·split).
pub fn pipeline_grid(window: (f64, f64), l: usize, split: f64, dim: usize, gap: f64) -> Vec<f64> {
    let mut grid = linalg::log_grid(window.0, window.1, 3 * (l + 1));
    let t_tail = tail_time(dim, gap, 1e13).max(2.0 * split).max(2.0 * window.1);
    grid.extend(linalg::log_grid(window.1, t_tail, 41).into_iter().skip(1));
    grid
}

fn tail_time(dim: usize, gap: f64, factor: f64) -> f64 {
    if gap.is_finite() {
        ((dim.max(1) as f64) * factor).ln() / gap
    } else {
        0.0
    }
}

/// The assembled ζ₁ + ζ₂ evaluator for one pair.
#[derive(Debug, Clone)]
pub struct ZetaPipeline {
    trace: SpectralPairTrace,
    series: HeatTraceSeries,
    expansion: AsymptoticExpansion,
    split: f64,
    fd_step: f64,
    poles: Vec<PoleInfo>,
    /// (u, w·F(e^u)) on [ln t_c, ln split].
    small: Vec<(f64, f64)>,
    /// (u, w·G(e^u)) on [ln split, ln T_int].
    large: Vec<(f64, f64)>,
    tail_deviation: f64,
    tail_bound: f64,
    gap: f64,
}

impl ZetaPipeline {
    /// Builds series and expansion from the pair's spectrum per `config`.
    pub fn new(pair: &PerturbationPair, config: &ZetaConfig) -> Result<Self> {
        config.validate()?;
        let gap = check_gap_condition(pair)?;
        let window = match config.fit_window {
            Some(w) => w,
            None => default_fit_window(pair)?,
        };
        if window.1 >= config.split_point {
            return Err(Error::Parameter("fit window must lie below the split point".into()));
        }
        let grid = pipeline_grid(window, config.l, config.split_point, pair.dim(), gap);
        let series = relative_heat_trace(pair, &grid, TraceMethod::DenseSpectral)?;
        let expansion = fit_expansion_with(&series, config.n_dim, config.l, window, config.step)?;
        Self::from_parts(pair, series, expansion, config.split_point, config.fd_step)
    }

    /// Uses a caller-supplied series (for the plateau check) and expansion.
    pub fn from_parts(
        pair: &PerturbationPair,
        series: HeatTraceSeries,
        expansion: AsymptoticExpansion,
        split: f64,
        fd_step: f64,
    ) -> Result<Self> {
        if !(split > 0.0) {
            return Err(Error::Parameter(format!("split point must be positive, got {split}")));
        }
        let t_cut = expansion.fit_window.0;
        if !(t_cut < split) {
            return Err(Error::Parameter("expansion window must start below the split point".into()));
        }
        let trace = SpectralPairTrace::new(pair)?;
        let h = trace.h();
        let gap = trace.gap();
        let t_max = *series.t_grid().last().unwrap();
        if t_max < split {
            return Err(Error::Parameter(format!("series ends at {t_max}, before the split point {split}")));
        }
        let last = *series.values().last().unwrap();
        let tail_deviation = (last - h as f64).abs();
        if tail_deviation > TAIL_TOL {
            return Err(Error::TailNotConverged { t_max, deviation: tail_deviation });
        }

        let poles = expansion
            .exponents
            .iter()
            .zip(&expansion.coefficients)
            .filter(|&(&p, &a)| a != 0.0 && !is_nonpositive_integer(-p))
            .map(|(&p, &a)| PoleInfo { location: -p, residue: a * recip_gamma(Complex64::new(-p, 0.0)).re })
            .collect();

        let (lo, hi) = (t_cut.ln(), split.ln());
        let f_small = |u: f64| trace.value(u.exp());
        let small = mellin_nodes(&f_small, lo, hi)?;

        let n = pair.dim();
        let t_int = t_max.max(tail_time(n, gap, 1e17)).max(split);
        let large = if gap.is_finite() && t_int > split {
            let g = |u: f64| trace.nonzero_part(u.exp());
            mellin_nodes(&g, hi, t_int.ln())?
        } else {
            Vec::new()
        };
        let tail_bound = if gap.is_finite() { n as f64 * (-gap * t_int).exp() } else { 0.0 };

        Ok(Self { trace, series, expansion, split, fd_step, poles, small, large, tail_deviation, tail_bound, gap })
    }

    pub fn h(&self) -> i64 {
        self.trace.h()
    }

    pub fn series(&self) -> &HeatTraceSeries {
        &self.series
    }

    pub fn expansion(&self) -> &AsymptoticExpansion {
        &self.expansion
    }

    pub fn split_point(&self) -> f64 {
        self.split
    }

    pub fn poles(&self) -> &[PoleInfo] {
        &self.poles
    }

    fn check_pole(&self, s: Complex64) -> Result<()> {
        for p in &self.poles {
            if (s - p.location).norm() < POLE_TOL {
                return Err(Error::Pole { location: p.location, residue: p.residue });
            }
        }
        Ok(())
    }

    /// ζ₁(s): closed-form expansion terms on (0, t_c] plus ∫_{t_c}^{split} t^{s−1}F dt, over Γ(s).
    pub fn zeta1(&self, s: Complex64) -> Result<Complex64> {
        self.check_pole(s)?;
        let t_cut = self.expansion.fit_window.0;
        let mut total = Complex64::new(0.0, 0.0);
        for (&p, &a) in self.expansion.exponents.iter().zip(&self.expansion.coefficients) {
            if a == 0.0 {
                continue;
            }
            // a t_c^{s+p} / ((s+p) Γ(s))
            let pow = (Complex64::new(t_cut.ln(), 0.0) * (s + p)).exp();
            let factor = if is_nonpositive_integer(-p) {
                recip_gamma_over_shift(s, p.round() as u32)
            } else {
                recip_gamma(s) / (s + p)
            };
            total += a * pow * factor;
        }
        total += recip_gamma(s) * mellin_sum(&self.small, s);
        Ok(total)
    }

    /// ζ₂(s) = −h·split^s/Γ(s+1) + (1/Γ(s))∫_{split}^{T} t^{s−1}(F − h) dt.
    pub fn zeta2(&self, s: Complex64) -> Complex64 {
        let h = self.trace.h() as f64;
        let split_pow = (Complex64::new(self.split.ln(), 0.0) * s).exp();
        -h * split_pow * recip_gamma(s + 1.0) + recip_gamma(s) * mellin_sum(&self.large, s)
    }

    pub fn zeta(&self, s: Complex64) -> Result<Complex64> {
        Ok(self.zeta1(s)? + self.zeta2(s))
    }

    /// Richardson-combined central difference of ζ at 0, and the change
    /// when the step is halved.
    pub fn zeta_prime_at_zero(&self) -> Result<(f64, f64)> {
        let d = |delta: f64| -> Result<f64> {
            let z = |x: f64| self.zeta(Complex64::new(x, 0.0)).map(|v| v.re);
            let c1 = z(delta)? - z(-delta)?;
            let c2 = z(2.0 * delta)? - z(-2.0 * delta)?;
            Ok((8.0 * c1 - c2) / (12.0 * delta))
        };
        let full = d(self.fd_step)?;
        let half = d(0.5 * self.fd_step)?;
        Ok((full, (full - half).abs()))
    }

    /// exp(−ζ'(0)).
    pub fn determinant(&self) -> Result<f64> {
        Ok((-self.zeta_prime_at_zero()?.0).exp())
    }

    pub fn result(&self, s_values: &[Complex64]) -> Result<ZetaResult> {
        let zeta_values = s_values.iter().map(|&s| self.zeta(s)).collect::<Result<Vec<_>>>()?;
        let (zp, err) = self.zeta_prime_at_zero()?;
        let t_cut = self.expansion.fit_window.0;
        Ok(ZetaResult {
            s_values: s_values.to_vec(),
            zeta_values,
            zeta_prime_at_zero: zp,
            h: self.trace.h(),
            poles: self.poles.clone(),
            split_point: self.split,
            determinant: (-zp).exp(),
            diagnostics: ZetaDiagnostics {
                fit_residual: self.expansion.residual_rms,
                fit_condition_number: self.expansion.condition_number,
                tail_deviation: self.tail_deviation,
                tail_truncation_bound: self.tail_bound,
                small_t_remainder: (self.trace.value(t_cut) - self.expansion.partial_sum(t_cut)).abs(),
                zeta_prime_error_estimate: err,
                gap: if self.gap.is_finite() { self.gap } else { 0.0 },
            },
        })
    }
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x.fract() == 0.0
}

fn mellin_nodes(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
    if hi <= lo {
        return Ok(Vec::new());
    }
    let rule = PanelRule::adaptive(
        |u| {
            let v = f(u);
            PROBE_S.iter().map(|&s| v * (s * u).exp()).collect()
        },
        lo,
        hi,
        MELLIN_REL_TOL,
    )?;
    Ok(rule.nodes.iter().zip(&rule.weights).map(|(&u, &w)| (u, w * f(u))).collect())
}

/// Σ_i w_i F(e^{u_i}) e^{s u_i}, i.e. ∫ t^{s−1} F(t) dt in the log variable.
fn mellin_sum(nodes: &[(f64, f64)], s: Complex64) -> Complex64 {
    nodes.iter().fold(Complex64::new(0.0, 0.0), |acc, &(u, wf)| acc + wf * (s * u).exp())
}

/// ζ₁ with an explicit expansion; F on [t_c, split] comes from the pair's spectrum.
pub fn zeta1(pair: &PerturbationPair, s: Complex64, expansion: &AsymptoticExpansion, split: f64) -> Result<Complex64> {
    let trace = SpectralPairTrace::new(pair)?;
    let grid = vec![split, split * 2.0, (split * 2.0).max(tail_time(pair.dim(), trace.gap(), 1e13))];
    let grid: Vec<f64> = dedup_increasing(grid);
    let series = relative_heat_trace(pair, &grid, TraceMethod::DenseSpectral)?;
    ZetaPipeline::from_parts(pair, series, expansion.clone(), split, default_fd_step())?.zeta1(s)
}

/// ζ₂ with an explicit series, which must reach the plateau h.
pub fn zeta2(pair: &PerturbationPair, s: Complex64, series: &HeatTraceSeries, split: f64) -> Result<Complex64> {
    let trace = SpectralPairTrace::new(pair)?;
    let h = trace.h() as f64;
    let t_max = *series.t_grid().last().unwrap();
    let last = *series.values().last().unwrap();
    if (last - h).abs() > TAIL_TOL {
        return Err(Error::TailNotConverged { t_max, deviation: (last - h).abs() });
    }
    let split_pow = (Complex64::new(split.ln(), 0.0) * s).exp();
    let n = pair.dim();
    let t_int = t_max.max(tail_time(n, trace.gap(), 1e17)).max(split);
    let large = if trace.gap().is_finite() && t_int > split {
        mellin_nodes(&|u: f64| trace.nonzero_part(u.exp()), split.ln(), t_int.ln())?
    } else {
        Vec::new()
    };
    Ok(-h * split_pow * recip_gamma(s + 1.0) + recip_gamma(s) * mellin_sum(&large, s))
}

fn dedup_increasing(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v
}

/// ζ(s) with the default configuration.
pub fn zeta_total(pair: &PerturbationPair, s: Complex64) -> Result<Complex64> {
    ZetaPipeline::new(pair, &ZetaConfig::default())?.zeta(s)
}

/// ζ'(0) with the default configuration.
pub fn zeta_prime_at_zero(pair: &PerturbationPair) -> Result<f64> {
    Ok(ZetaPipeline::new(pair, &ZetaConfig::default())?.zeta_prime_at_zero()?.0)
}

/// exp(−ζ'(0)) with the default configuration.
pub fn relative_determinant(pair: &PerturbationPair) -> Result<f64> {
    ZetaPipeline::new(pair, &ZetaConfig::default())?.determinant()
}

/// Σ λ^{-s} − Σ λ'^{-s} over nonzero eigenvalues, summed directly.
pub fn direct_zeta(trace: &SpectralPairTrace, s: Complex64) -> Complex64 {
    let pw = |l: f64| (-s * l.ln()).exp();
    let a: Complex64 = trace.base_nonzero().iter().map(|&l| pw(l)).sum();
    let b: Complex64 = trace.perturbed_nonzero().iter().map(|&l| pw(l)).sum();
    a - b
}

/// Σ ln λ' − Σ ln λ over nonzero eigenvalues: ζ'(0) of a finite pair.
pub fn direct_zeta_prime_at_zero(trace: &SpectralPairTrace) -> f64 {
    let a: f64 = trace.base_nonzero().iter().map(|l| l.ln()).sum();
    let b: f64 = trace.perturbed_nonzero().iter().map(|l| l.ln()).sum();
    b - a
}

/// The relative index and its spread over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeIndex {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub max_deviation: f64,
    /// ind D − ind D' from kernel dimensions.
    pub kernel_index_difference: i64,
}

/// tr(τ(e^{-tD²} − e^{-tD'²})) on `t_grid`.
pub fn relative_index(a: &GradedOperator, b: &GradedOperator, t_grid: &[f64]) -> Result<RelativeIndex> {
    if !a.same_grading(b) {
        return Err(Error::Parameter("graded operators carry different gradings".into()));
    }
    if t_grid.len() < 3 {
        return Err(Error::Parameter("relative index needs at least three times".into()));
    }
    let values = t_grid.iter().map(|&t| Ok(supertrace(a, t)? - supertrace(b, t)?)).collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max_deviation = values.iter().fold(0.0f64, |m, &v| m.max((v - mean).abs()));
    Ok(RelativeIndex {
        t_grid: t_grid.to_vec(),
        values,
        mean,
        max_deviation,
        kernel_index_difference: a.index() - b.index(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConvention {
    /// ½ Σ (−1)^q ζ'_q(0).
    PaperAsWritten,
    /// ½ Σ (−1)^q q ζ'_q(0).
    QWeighted,
}

impl WeightConvention {
    pub fn weight(self, q: usize) -> f64 {
        let sign = if q.is_multiple_of(2) { 1.0 } else { -1.0 };
        match self {
            WeightConvention::PaperAsWritten => sign,
            WeightConvention::QWeighted => sign * q as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsionResult {
    pub per_degree: Vec<(usize, f64)>,
    pub log_torsion: f64,
    pub weight_convention: WeightConvention,
}

impl TorsionResult {
    pub fn assemble(per_degree: Vec<(usize, f64)>, convention: WeightConvention) -> Self {
        let log_torsion = assemble(&per_degree, convention);
        Self { per_degree, log_torsion, weight_convention: convention }
    }

    /// Recomputes log τ from the per-degree values.
    pub fn recompute(&self) -> f64 {
        assemble(&self.per_degree, self.weight_convention)
    }
}

fn assemble(per_degree: &[(usize, f64)], convention: WeightConvention) -> f64 {
    0.5 * per_degree.iter().map(|&(q, z)| convention.weight(q) * z).sum::<f64>()
}

/// Relative torsion of a Hodge tower. Degrees whose operators both have
/// empty nonzero spectrum contribute ζ'(0) = 0.
pub fn relative_torsion(
    tower: &[PerturbationPair],
    convention: WeightConvention,
    config: &ZetaConfig,
) -> Result<TorsionResult> {
    for (q, pair) in tower.iter().enumerate() {
        if pair.degree() != Some(q) {
            return Err(Error::Parameter(format!("tower entry {q} carries degree {:?}", pair.degree())));
        }
    }
    let per_degree = tower
        .par_iter()
        .enumerate()
        .map(|(q, pair)| {
            check_gap_condition(pair)?;
            let trace = SpectralPairTrace::new(pair)?;
            if trace.base_nonzero().is_empty() && trace.perturbed_nonzero().is_empty() {
                return Ok((q, 0.0));
            }
            let zp = ZetaPipeline::new(pair, config)?.zeta_prime_at_zero()?.0;
            Ok((q, zp))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TorsionResult::assemble(per_degree, convention))
}

/// ½ Σ (−1)^q [log det⁺Δ'_q − log det⁺Δ_q] from dense eigenvalues.
pub fn dense_log_torsion(tower: &[PerturbationPair]) -> Result<f64> {
    let mut total = 0.0;
    for (q, pair) in tower.iter().enumerate() {
        let trace = SpectralPairTrace::new(pair)?;
        total += WeightConvention::PaperAsWritten.weight(q) * direct_zeta_prime_at_zero(&trace);
    }
    Ok(0.5 * total)
}

/// log det⁺ of a symmetric matrix, thresholding at [`KERNEL_REL_THRESHOLD`]·λ_max.
pub fn log_det_plus(m: &DMatrix<f64>) -> f64 {
    let ev = linalg::symmetric_eigenvalues(m);
    let thr = KERNEL_REL_THRESHOLD * ev.first().copied().unwrap_or(0.0);
    ev.iter().filter(|&&v| v > thr).map(|v| v.ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{graded_from_block, OperatorHandle};
    use crate::quadrature::integrate_adaptive;

    fn diag_pair(a: &[f64], b: &[f64]) -> PerturbationPair {
        PerturbationPair::new("d", OperatorHandle::diagonal("a", a).unwrap(), OperatorHandle::diagonal("b", b).unwrap())
            .unwrap()
    }

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn closed_form_scalar_zeta() {
        let p = diag_pair(&[1.0, 2.0], &[1.0, 1.0]);
        let pipe = ZetaPipeline::new(&p, &ZetaConfig::default()).unwrap();
        for s in [0.5, 1.0, 1.5, 2.0] {
            let want = 2f64.powf(-s) - 1.0;
            assert!((pipe.zeta(c(s)).unwrap() - want).norm() < 1e-8, "s={s}");
        }
        let (zp, _) = pipe.zeta_prime_at_zero().unwrap();
        assert!((zp + 2f64.ln()).abs() < 1e-7, "{zp}");
        assert!((pipe.determinant().unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zeta1_matches_quadrature_oracle() {
        let p = diag_pair(&[1.0, 2.0], &[1.0, 1.0]);
        let pipe = ZetaPipeline::new(&p, &ZetaConfig::default()).unwrap();
        let oracle = integrate_adaptive(|t: f64| (-2.0 * t).exp() - (-t).exp(), 0.0, 1.0, 1e-15, 1e-15).unwrap();
        assert!((pipe.zeta1(c(1.0)).unwrap().re - oracle.value).abs() < 1e-10);
    }

    #[test]
    fn plateau_pair() {
        let p = diag_pair(&[0.0, 1.0], &[1.0, 1.0]);
        let pipe = ZetaPipeline::new(&p, &ZetaConfig::default()).unwrap();
        assert_eq!(pipe.h(), 1);
        for s in [0.5, 1.0, 2.0] {
            assert!((pipe.zeta(c(s)).unwrap() - c(-1.0)).norm() < 1e-7);
        }
        assert!(pipe.zeta_prime_at_zero().unwrap().0.abs() < 1e-6);
    }

    #[test]
    fn identical_pair_is_trivial() {
        let p = diag_pair(&[0.3, 2.0, 5.0], &[0.3, 2.0, 5.0]);
        let pipe = ZetaPipeline::new(&p, &ZetaConfig::default()).unwrap();
        assert_eq!(pipe.zeta(c(0.7)).unwrap(), c(0.0));
        assert!((pipe.determinant().unwrap() - 1.0).abs() <= 1e-10);
        assert!(pipe.poles().is_empty());
    }

    #[test]
    fn tail_error_reported() {
        let p = diag_pair(&[0.0, 1.0], &[1.0, 1.0]);
        let series = relative_heat_trace(&p, &[1.0, 2.0, 5.0], TraceMethod::DenseSpectral).unwrap();
        assert!(matches!(zeta2(&p, c(1.0), &series, 1.0), Err(Error::TailNotConverged { .. })));
    }

    #[test]
    fn pole_refused() {
        let grid = linalg::log_grid(1e-4, 1e-2, 30);
        let s = HeatTraceSeries::from_fn(grid, "syn", |t| t.powf(-0.5)).unwrap();
        let e = crate::asymptotics::fit_expansion(&s, 1, 2, (1e-4, 1e-2)).unwrap();
        let p = diag_pair(&[1.0], &[1.0]);
        let err = zeta1(&p, c(0.5), &e, 1.0);
        match err {
            Err(Error::Pole { location, residue }) => {
                assert_eq!(location, 0.5);
                assert!((residue - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-8);
            }
            other => panic!("expected a pole error, got {other:?}"),
        }
    }

    #[test]
    fn relative_index_examples() {
        let a = graded_from_block(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        let b = graded_from_block(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        let z = graded_from_block(&DMatrix::zeros(1, 2));
        let grid = [0.1, 1.0, 10.0];
        let same = relative_index(&a, &a, &grid).unwrap();
        assert_eq!((same.mean, same.max_deviation), (0.0, 0.0));
        for other in [&b, &z] {
            let r = relative_index(&a, other, &grid).unwrap();
            assert!(r.mean.abs() < 1e-9 && r.max_deviation <= 1e-9);
            assert_eq!(r.kernel_index_difference, 0);
        }
        assert!(relative_index(&a, &b, &[0.1, 1.0]).is_err());
    }

    #[test]
    fn torsion_assembly_is_bookkeeping() {
        let per = vec![(0, 0.3), (1, -1.2), (2, 0.7)];
        let a = TorsionResult::assemble(per.clone(), WeightConvention::PaperAsWritten);
        let b = TorsionResult::assemble(per, WeightConvention::QWeighted);
        assert_eq!(a.per_degree, b.per_degree);
        assert_eq!(a.recompute(), a.log_torsion);
        assert!((a.log_torsion - 0.5 * (0.3 + 1.2 + 0.7)).abs() < 1e-15);
        assert!((b.log_torsion - 0.5 * (1.2 + 1.4)).abs() < 1e-15);
    }

    #[test]
    fn gapless_pair_is_degenerate() {
        let p = diag_pair(&[1e-12 * 3.0, 1.0], &[1.0, 1.0]);
        // 3e-12 lies below the kernel threshold 1e-9 and counts as zero
        assert!(check_gap_condition(&p).is_ok());
        let p = diag_pair(&[5e-9, 1.0], &[1.0, 1.0]);
        assert!(matches!(check_gap_condition(&p), Err(Error::Degenerate(_))));
    }
}
