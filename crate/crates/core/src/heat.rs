//! Heat semigroups, heat kernels, relative heat traces and supertraces.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov;
use crate::linalg;
use crate::operator::{kernel_dim, GradedOperator, OperatorHandle, PerturbationPair, DENSE_THRESHOLD};

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("heat time must be positive and finite, got {t}")));
    }
    Ok(())
}

/// e^{-tA}v: dense spectral calculus up to the dense threshold, Lanczos beyond.
pub fn heat_apply(a: &OperatorHandle, t: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_time(t)?;
    if v.len() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: v.len() });
    }
    if a.dim() <= DENSE_THRESHOLD {
        let spec = a.spectrum()?;
        Ok(spec.function_apply(|x| (-t * x).exp(), v))
    } else {
        Ok(krylov::expm_multiply(|x| a.apply(x), a.dim(), t, v)?.value)
    }
}

/// The discrete heat kernel W(t, ·, ·) = e^{-tA}.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub t: f64,
    pub entries: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn diagonal(&self) -> Vec<f64> {
        self.entries.diagonal().iter().copied().collect()
    }
}

pub fn heat_kernel(a: &OperatorHandle, t: f64) -> Result<KernelMatrix> {
    check_time(t)?;
    if a.dim() > DENSE_THRESHOLD {
        return Err(Error::Capability(format!(
            "heat kernel of dim {} exceeds the dense threshold {}; use heat_apply",
            a.dim(),
            DENSE_THRESHOLD
        )));
    }
    let spec = a.spectrum()?;
    Ok(KernelMatrix { t, entries: spec.function_matrix(|x| (-t * x).exp()) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    DenseSpectral,
    Krylov,
    Stochastic,
}

/// How a relative heat trace is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum TraceMethod {
    DenseSpectral,
    Krylov,
    Stochastic { probes: usize, seed: u64 },
}

impl TraceMethod {
    pub fn kind(&self) -> MethodKind {
        match self {
            TraceMethod::DenseSpectral => MethodKind::DenseSpectral,
            TraceMethod::Krylov => MethodKind::Krylov,
            TraceMethod::Stochastic { .. } => MethodKind::Stochastic,
        }
    }
}

/// Samples of tr(e^{-tA} − e^{-tA'}) on a positive increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatTraceSeries {
    t_grid: Vec<f64>,
    values: Vec<f64>,
    method: MethodKind,
    error_estimates: Vec<f64>,
    pair_label: String,
}

/// 40 log-spaced points over [1e-3, 1e2].
pub fn default_t_grid() -> Vec<f64> {
    linalg::log_grid(1e-3, 1e2, 40)
}

pub(crate) fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::Parameter("t grid is empty".into()));
    }
    if let Some(&t) = t_grid.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Domain(format!("t grid entries must be positive, got {t}")));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("t grid must be strictly increasing".into()));
    }
    Ok(())
}

impl HeatTraceSeries {
    pub fn new(
        t_grid: Vec<f64>,
        values: Vec<f64>,
        method: MethodKind,
        error_estimates: Vec<f64>,
        pair_label: impl Into<String>,
    ) -> Result<Self> {
        check_grid(&t_grid)?;
        if values.len() != t_grid.len() {
            return Err(Error::DimensionMismatch { expected: t_grid.len(), found: values.len() });
        }
        if error_estimates.len() != t_grid.len() {
            return Err(Error::DimensionMismatch { expected: t_grid.len(), found: error_estimates.len() });
        }
        if error_estimates.iter().any(|&e| !(e >= 0.0)) {
            return Err(Error::Parameter("error estimates must be nonnegative".into()));
        }
        if method == MethodKind::DenseSpectral && error_estimates.iter().any(|&e| e != 0.0) {
            return Err(Error::Parameter("dense spectral series carry zero error estimates".into()));
        }
        Ok(Self { t_grid, values, method, error_estimates, pair_label: pair_label.into() })
    }

    /// A series sampled from a closed-form function, marked exact.
    pub fn from_fn(t_grid: Vec<f64>, label: impl Into<String>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = t_grid.iter().map(|&t| f(t)).collect();
        let n = t_grid.len();
        Self::new(t_grid, values, MethodKind::DenseSpectral, vec![0.0; n], label)
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn method(&self) -> MethodKind {
        self.method
    }

    pub fn error_estimates(&self) -> &[f64] {
        &self.error_estimates
    }

    pub fn pair_label(&self) -> &str {
        &self.pair_label
    }

    pub fn len(&self) -> usize {
        self.t_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_grid.is_empty()
    }

    /// `t,value,stderr` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value,stderr\n");
        for i in 0..self.len() {
            let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", self.t_grid[i], self.values[i], self.error_estimates[i]);
        }
        out
    }

    pub fn from_csv(text: &str, method: MethodKind, pair_label: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some(h) if h.trim() == "t,value,stderr" => {}
            other => {
                return Err(Error::Parameter(format!("unexpected series header {other:?}")));
            }
        }
        let (mut t, mut v, mut e) = (Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parameter(format!("malformed series row '{line}'")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parameter(format!("bad number '{s}' in series row")))
            };
            t.push(parse(fields[0])?);
            v.push(parse(fields[1])?);
            e.push(parse(fields[2])?);
        }
        Self::new(t, v, method, e, pair_label)
    }
}

/// Eigenvalue data for a pair, evaluating the relative heat trace without
/// cancellation at small t and as h + (nonzero part) at large t.
#[derive(Debug, Clone)]
pub struct SpectralPairTrace {
    base: Vec<f64>,
    perturbed: Vec<f64>,
    base_nonzero: Vec<f64>,
    perturbed_nonzero: Vec<f64>,
    h: i64,
    gap: f64,
}

impl SpectralPairTrace {
    pub fn new(pair: &PerturbationPair) -> Result<Self> {
        let base = pair.base().eigenvalues()?.to_vec();
        let perturbed = pair.perturbed().eigenvalues()?.to_vec();
        let thr = pair.kernel_threshold()?;
        Ok(Self::from_eigenvalues(base, perturbed, thr))
    }

    /// Eigenvalues sorted nonincreasing; those ≤ `kernel_threshold` count as zero.
    pub fn from_eigenvalues(mut base: Vec<f64>, mut perturbed: Vec<f64>, kernel_threshold: f64) -> Self {
        base.sort_by(|a, b| b.total_cmp(a));
        perturbed.sort_by(|a, b| b.total_cmp(a));
        let nz = |v: &[f64]| v.iter().copied().filter(|&x| x > kernel_threshold).collect::<Vec<_>>();
        let base_nonzero = nz(&base);
        let perturbed_nonzero = nz(&perturbed);
        let h = kernel_dim(&base, kernel_threshold) as i64 - kernel_dim(&perturbed, kernel_threshold) as i64;
        let gap = base_nonzero.iter().chain(&perturbed_nonzero).fold(f64::INFINITY, |m, &x| m.min(x));
        Self { base, perturbed, base_nonzero, perturbed_nonzero, h, gap }
    }

    pub fn h(&self) -> i64 {
        self.h
    }

    /// Smallest nonzero eigenvalue over both operators (∞ when there is none).
    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn base_eigenvalues(&self) -> &[f64] {
        &self.base
    }

    pub fn perturbed_eigenvalues(&self) -> &[f64] {
        &self.perturbed
    }

    pub fn base_nonzero(&self) -> &[f64] {
        &self.base_nonzero
    }

    pub fn perturbed_nonzero(&self) -> &[f64] {
        &self.perturbed_nonzero
    }

    /// tr(e^{-tA} − e^{-tA'}).
    pub fn value(&self, t: f64) -> f64 {
        if t * self.gap > 1.0 {
            return self.h as f64 + self.nonzero_part(t);
        }
        let paired: f64 =
            self.base.iter().zip(&self.perturbed).map(|(&l, &lp)| (-t * lp).exp() * (-t * (l - lp)).exp_m1()).sum();
        let extra_base: f64 =
            self.base[self.perturbed.len().min(self.base.len())..].iter().map(|&l| (-t * l).exp()).sum();
        let extra_pert: f64 =
            self.perturbed[self.base.len().min(self.perturbed.len())..].iter().map(|&l| (-t * l).exp()).sum();
        paired + extra_base - extra_pert
    }

    /// Σ_{λ≠0} e^{-tλ} − Σ_{λ'≠0} e^{-tλ'}, i.e. the trace minus h.
    pub fn nonzero_part(&self, t: f64) -> f64 {
        // Pair from the bottom of the spectrum, where the large-t mass sits.
        let (a, b) = (&self.base_nonzero, &self.perturbed_nonzero);
        let m = a.len().min(b.len());
        let paired: f64 =
            a.iter().rev().zip(b.iter().rev()).map(|(&l, &lp)| (-t * lp).exp() * (-t * (l - lp)).exp_m1()).sum();
        let extra_a: f64 = a[..a.len() - m].iter().map(|&l| (-t * l).exp()).sum();
        let extra_b: f64 = b[..b.len() - m].iter().map(|&l| (-t * l).exp()).sum();
        paired + extra_a - extra_b
    }
}

/// Evaluates tr(e^{-tA} − e^{-tA'}) on `t_grid`.
pub fn relative_heat_trace(pair: &PerturbationPair, t_grid: &[f64], method: TraceMethod) -> Result<HeatTraceSeries> {
    check_grid(t_grid)?;
    let label = pair.label().to_string();
    match method {
        TraceMethod::DenseSpectral => {
            let sp = SpectralPairTrace::new(pair)?;
            let values: Vec<f64> = t_grid.par_iter().map(|&t| sp.value(t)).collect();
            HeatTraceSeries::new(t_grid.to_vec(), values, MethodKind::DenseSpectral, vec![0.0; t_grid.len()], label)
        }
        TraceMethod::Krylov => {
            let n = pair.dim();
            let rows: Vec<Result<(f64, f64)>> = t_grid
                .iter()
                .map(|&t| {
                    let per_site: Vec<Result<(f64, f64)>> = (0..n)
                        .into_par_iter()
                        .map(|i| {
                            let mut e = DVector::zeros(n);
                            e[i] = 1.0;
                            let a = krylov::expm_multiply(|x| pair.base().apply(x), n, t, &e)?;
                            let b = krylov::expm_multiply(|x| pair.perturbed().apply(x), n, t, &e)?;
                            Ok((a.value[i] - b.value[i], a.error_estimate + b.error_estimate))
                        })
                        .collect();
                    let mut sum = 0.0;
                    let mut err = 0.0;
                    for r in per_site {
                        let (v, e) = r?;
                        sum += v;
                        err += e;
                    }
                    Ok((sum, err))
                })
                .collect();
            let (values, errors): (Vec<f64>, Vec<f64>) =
                rows.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
            HeatTraceSeries::new(t_grid.to_vec(), values, MethodKind::Krylov, errors, label)
        }
        TraceMethod::Stochastic { probes, seed } => {
            if probes == 0 {
                return Err(Error::Parameter("stochastic trace needs at least one probe".into()));
            }
            let n = pair.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probe_vecs: Vec<DVector<f64>> = (0..probes)
                .map(|_| DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }))
                .collect();
            let samples = stochastic_samples(pair, t_grid, &probe_vecs)?;
            let k = probes as f64;
            let mut values = Vec::with_capacity(t_grid.len());
            let mut errors = Vec::with_capacity(t_grid.len());
            for row in samples {
                let mean = row.iter().sum::<f64>() / k;
                let var =
                    if probes > 1 { row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
                values.push(mean);
                errors.push((var / k).sqrt());
            }
            HeatTraceSeries::new(t_grid.to_vec(), values, MethodKind::Stochastic, errors, label)
        }
    }
}

/// zᵀ(e^{-tA} − e^{-tA'})z for every t (rows) and probe (columns).
fn stochastic_samples(pair: &PerturbationPair, t_grid: &[f64], probes: &[DVector<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = pair.dim();
    if n <= DENSE_THRESHOLD {
        let sa = pair.base().spectrum()?;
        let sb = pair.perturbed().spectrum()?;
        // Spectral weights (Qᵀz)_k² make every t a cheap sum.
        let weights: Vec<(Vec<f64>, Vec<f64>)> = probes
            .par_iter()
            .map(|z| {
                let ca = sa.vectors.tr_mul(z).iter().map(|c| c * c).collect();
                let cb = sb.vectors.tr_mul(z).iter().map(|c| c * c).collect();
                (ca, cb)
            })
            .collect();
        Ok(t_grid
            .iter()
            .map(|&t| {
                weights
                    .iter()
                    .map(|(ca, cb)| {
                        let a: f64 = ca.iter().zip(sa.values.iter()).map(|(w, &l)| w * (-t * l).exp()).sum();
                        let b: f64 = cb.iter().zip(sb.values.iter()).map(|(w, &l)| w * (-t * l).exp()).sum();
                        a - b
                    })
                    .collect()
            })
            .collect())
    } else {
        t_grid
            .iter()
            .map(|&t| {
                probes
                    .par_iter()
                    .map(|z| {
                        let a = krylov::expm_multiply(|x| pair.base().apply(x), n, t, z)?;
                        let b = krylov::expm_multiply(|x| pair.perturbed().apply(x), n, t, z)?;
                        Ok(z.dot(&(a.value - b.value)))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect()
    }
}

/// tr(τ e^{-tD²}) = tr e^{-tD⁻D⁺} − tr e^{-tD⁺D⁻}.
pub fn supertrace(graded: &GradedOperator, t: f64) -> Result<f64> {
    check_time(t)?;
    let (plus, minus) = graded.squared_blocks();
    let tr = |m: &DMatrix<f64>| -> f64 { linalg::symmetric_eigenvalues(m).iter().map(|&l| (-t * l).exp()).sum() };
    Ok(tr(&plus) - tr(&minus))
}

/// One row of an off-diagonal decay probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayProbeRow {
    pub t: f64,
    /// (graph distance, max |W(t, site, p)| over p at that distance).
    pub profile: Vec<(usize, f64)>,
    /// Least-squares slope of ln|W| against −d²/(4t) over d ≥ 1 with |W| > 1e-280.
    pub gaussian_slope: Option<f64>,
}

/// Off-diagonal decay of the heat kernel column at `site`. Needs a sparse
/// operator, whose pattern supplies the graph distance.
pub fn offdiag_decay_probe(a: &OperatorHandle, t_list: &[f64], site: usize) -> Result<Vec<DecayProbeRow>> {
    let dist = a.distances_from(site)?;
    let max_d = dist.iter().flatten().copied().max().unwrap_or(0);
    t_list
        .iter()
        .map(|&t| {
            let mut e = DVector::zeros(a.dim());
            e[site] = 1.0;
            let col = heat_apply(a, t, &e)?;
            let mut best = vec![0.0f64; max_d + 1];
            for (p, d) in dist.iter().enumerate() {
                if let Some(d) = d {
                    best[*d] = best[*d].max(col[p].abs());
                }
            }
            let profile: Vec<(usize, f64)> = best.into_iter().enumerate().collect();
            let pts: Vec<(f64, f64)> = profile
                .iter()
                .filter(|&&(d, w)| d >= 1 && w > 1e-280)
                .map(|&(d, w)| (-((d * d) as f64) / (4.0 * t), w.ln()))
                .collect();
            let gaussian_slope = if pts.len() >= 2 {
                let k = pts.len() as f64;
                let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
                let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
                let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
                let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                (sxx > 0.0).then(|| sxy / sxx)
            } else {
                None
            };
            Ok(DecayProbeRow { t, profile, gaussian_slope })
        })
        .collect()
}
