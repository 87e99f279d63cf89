//! Invariant suites across all modules, with a deterministic text report.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use relspec::asymptotics::{basis_exponents, coefficient_difference_report, fit_expansion, ExponentStep};
use relspec::duhamel::{direct_difference, duhamel_difference, exact_duhamel_difference, uniform_bound_scan};
use relspec::heat::{heat_apply, heat_kernel, relative_heat_trace, HeatTraceSeries, TraceMethod};
use relspec::hodge::{build_hodge_tower, ComplexSpec};
use relspec::linalg::log_grid;
use relspec::model::{
    build_graded, build_model, GradedBlockSpec, GraphSpec, ModelSpec, Profile, RandomSpdSpec, SchrodingerSpec,
};
use relspec::operator::{OperatorHandle, PerturbationPair};
use relspec::quadrature::QuadratureRule;
use relspec::zeta::{dense_log_torsion, relative_index, relative_torsion, WeightConvention, ZetaConfig, ZetaPipeline};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fast,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    /// observed ≤ bound
    AtMost,
    /// observed ≥ bound
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub module: String,
    pub invariant: String,
    pub observed: f64,
    pub bound: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub level: Level,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One line per check, then a summary line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let op = match c.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            let _ = writeln!(
                out,
                "{} {}/{}: observed {:.6e} {op} bound {:.3e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.module,
                c.invariant,
                c.observed,
                c.bound
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(out, "{} checks, {} failed", self.checks.len(), failed);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub level: Level,
    /// Size of the rayon pool the suite runs in; the global pool when `None`.
    pub threads: Option<usize>,
    /// Test hook: scale every Duhamel quadrature weight by this factor.
    pub corrupt_quadrature: Option<f64>,
}

impl VerifyOptions {
    pub fn new(level: Level) -> Self {
        Self { level, threads: None, corrupt_quadrature: None }
    }
}

struct Suite<'a> {
    opts: &'a VerifyOptions,
    checks: Vec<Check>,
}

impl Suite<'_> {
    fn at_most(&mut self, module: &str, invariant: &str, observed: f64, bound: f64) {
        self.push(module, invariant, observed, bound, Comparison::AtMost);
    }

    fn at_least(&mut self, module: &str, invariant: &str, observed: f64, bound: f64) {
        self.push(module, invariant, observed, bound, Comparison::AtLeast);
    }

    fn push(&mut self, module: &str, invariant: &str, observed: f64, bound: f64, comparison: Comparison) {
        let passed = match comparison {
            Comparison::AtMost => observed <= bound,
            Comparison::AtLeast => observed >= bound,
        };
        self.checks.push(Check {
            module: module.into(),
            invariant: invariant.into(),
            observed,
            bound,
            comparison,
            passed,
        });
    }

    /// Records an error from a check body as a failed check with observed = NaN.
    fn guard(&mut self, module: &str, invariant: &str, bound: f64, f: impl FnOnce(&mut Self) -> relspec::Result<()>) {
        if let Err(e) = f(self) {
            eprintln!("{module}/{invariant}: {e}");
            self.at_most(module, invariant, f64::NAN, bound);
        }
    }

    fn rule(&self, nodes: usize, t: f64) -> relspec::Result<QuadratureRule> {
        let r = QuadratureRule::gauss_legendre(nodes, t)?;
        Ok(match self.opts.corrupt_quadrature {
            Some(f) => r.with_scaled_weights_unchecked(f),
            None => r,
        })
    }
}

/// Runs the suite for `opts.level`. The report has no timings, so repeated
/// runs (at any thread count) render identically.
pub fn verify_suite(opts: &VerifyOptions) -> VerifyReport {
    let run = || {
        let mut s = Suite { opts, checks: Vec::new() };
        operator_checks(&mut s);
        heat_checks(&mut s);
        duhamel_checks(&mut s);
        asymptotic_checks(&mut s);
        zeta_checks(&mut s);
        if opts.level == Level::Full {
            full_checks(&mut s);
        }
        VerifyReport { level: opts.level, checks: s.checks }
    };
    match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("rayon pool").install(run),
        None => run(),
    }
}

pub(crate) fn random_pair(n: usize, seed: u64, monotone: bool, shift: f64) -> relspec::Result<PerturbationPair> {
    build_model(&ModelSpec::RandomSpd(RandomSpdSpec {
        n,
        seed,
        window: Some((n / 3, (2 * n / 3).max(n / 3 + 1))),
        amplitude: 0.5,
        shift,
        monotone,
    }))
}

fn path_spec(n: usize, potential_prime: Option<Vec<f64>>, cycle: bool) -> ModelSpec {
    let g = GraphSpec { n, mesh_width: 1.0, weights: None, weights_prime: None, potential: None, potential_prime };
    if cycle {
        ModelSpec::CycleGraph(g)
    } else {
        ModelSpec::PathGraph(g)
    }
}

fn expm(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (a * -t).exp()
}

fn operator_checks(s: &mut Suite<'_>) {
    s.guard("operator_core", "eigen_reconstruction", 1e-12, |s| {
        let p = random_pair(30, 1, false, 0.5)?;
        let e = p.base().reconstruction_error()?.max(p.perturbed().reconstruction_error()?);
        s.at_most("operator_core", "eigen_reconstruction", e, 1e-12);
        Ok(())
    });
    s.guard("operator_core", "cycle_kernel_dimension", 0.0, |s| {
        let p = build_model(&path_spec(20, None, true))?;
        let (a, _) = p.kernel_dims()?;
        s.at_most("operator_core", "cycle_kernel_dimension", (a as f64 - 1.0).abs(), 0.0);
        Ok(())
    });
}

fn heat_checks(s: &mut Suite<'_>) {
    s.guard("heat_engine", "semigroup", 1e-12, |s| {
        let mut worst = 0.0f64;
        for seed in 0..5 {
            let p = random_pair(12, 10 + seed, false, 0.5)?;
            let a = p.base();
            let v = DVector::from_fn(12, |i, _| (i as f64 * 0.7).sin());
            let lhs = heat_apply(a, 1.3, &v)?;
            let rhs = heat_apply(a, 0.5, &heat_apply(a, 0.8, &v)?)?;
            worst = worst.max((&lhs - &rhs).norm() / lhs.norm());
        }
        s.at_most("heat_engine", "semigroup", worst, 1e-12);
        Ok(())
    });
    s.guard("heat_engine", "relative_trace_vs_pade", 1e-11, |s| {
        let p = random_pair(10, 3, false, 0.5)?;
        let grid = [0.01, 0.3, 3.0];
        let series = relative_heat_trace(&p, &grid, TraceMethod::DenseSpectral)?;
        let mut worst = 0.0f64;
        for (&t, &v) in grid.iter().zip(series.values()) {
            let want = (expm(&p.base().to_dense(), t) - expm(&p.perturbed().to_dense(), t)).trace();
            worst = worst.max((v - want).abs() / (1.0 + want.abs()));
        }
        s.at_most("heat_engine", "relative_trace_vs_pade", worst, 1e-11);
        Ok(())
    });
    s.guard("heat_engine", "cycle_row_sums", 1e-12, |s| {
        let p = build_model(&path_spec(17, None, true))?;
        let k = heat_kernel(p.base(), 2.0)?;
        let worst = (0..17).map(|i| (k.entries.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
        s.at_most("heat_engine", "cycle_row_sums", worst, 1e-12);
        Ok(())
    });
}

fn duhamel_residual(s: &Suite<'_>, p: &PerturbationPair, t: f64, nodes: usize) -> relspec::Result<f64> {
    let want = direct_difference(p, t)?;
    let q = duhamel_difference(p, t, &s.rule(nodes, t)?)?;
    Ok((q - &want).norm() / want.norm())
}

// Against the divided-difference form, which has no subtraction floor, so
// the error sequence stays clean down to roundoff.
fn duhamel_error(s: &Suite<'_>, p: &PerturbationPair, t: f64, nodes: usize) -> relspec::Result<f64> {
    let want = exact_duhamel_difference(p, t)?;
    let q = duhamel_difference(p, t, &s.rule(nodes, t)?)?;
    Ok((q - &want).norm() / want.norm())
}

fn duhamel_checks(s: &mut Suite<'_>) {
    s.guard("duhamel", "quadrature_residual", 1e-8, |s| {
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let p = random_pair(8, 500 + seed, false, 0.5)?;
            for t in [0.1, 1.0, 5.0] {
                worst = worst.max(duhamel_residual(s, &p, t, 64)?);
            }
        }
        s.at_most("duhamel", "quadrature_residual", worst, 1e-8);
        Ok(())
    });
    s.guard("duhamel", "node_doubling_factor", 10.0, |s| {
        let mut worst = f64::INFINITY;
        for seed in 0..5 {
            let p = random_pair(8, 900 + seed, false, 0.5)?;
            for t in [0.1, 1.0, 5.0] {
                let errs = [4, 8, 16, 32, 64]
                    .iter()
                    .map(|&n| duhamel_error(s, &p, t, n))
                    .collect::<relspec::Result<Vec<f64>>>()?;
                for w in errs.windows(2) {
                    if w[0] > 1e-13 && w[1] > 1e-13 {
                        worst = worst.min(w[0] / w[1]);
                    }
                }
            }
        }
        s.at_least("duhamel", "node_doubling_factor", worst, 10.0);
        Ok(())
    });
    s.guard("duhamel", "uniform_bound_left_endpoint", 0.0, |s| {
        let mut worst = 0.0f64;
        for seed in 0..10 {
            let p = random_pair(10, 700 + seed, true, 12.0)?;
            let scan = uniform_bound_scan(&p, 0.1, 10.0, 100)?;
            if !scan.trace_norms.iter().all(|v| v.is_finite()) {
                worst = f64::INFINITY;
            }
            worst = worst.max(scan.argmax - 0.1);
        }
        s.at_most("duhamel", "uniform_bound_left_endpoint", worst, 0.0);
        Ok(())
    });
}

fn asymptotic_checks(s: &mut Suite<'_>) {
    s.guard("asymptotics", "synthetic_recovery", 1e-6, |s| {
        let coeffs = [1.7, -0.4, 2.5];
        let mut worst = 0.0f64;
        for n in 1..=3u32 {
            let p = basis_exponents(n, 2, ExponentStep::Auto);
            let series = HeatTraceSeries::from_fn(log_grid(1e-3, 1e-1, 40), "syn", |t| {
                p.iter().zip(&coeffs).map(|(&e, &a)| a * t.powf(e)).sum()
            })?;
            let e = fit_expansion(&series, n, 2, (1e-3, 1e-1))?;
            for (got, want) in e.coefficients.iter().zip(&coeffs) {
                worst = worst.max((got - want).abs() / want.abs());
            }
        }
        s.at_most("asymptotics", "synthetic_recovery", worst, 1e-6);
        Ok(())
    });
}

fn weighted_complexes() -> Vec<ComplexSpec> {
    let spec = |simplices: Vec<Vec<usize>>, wp: Vec<Vec<f64>>| ComplexSpec {
        simplices: Some(simplices),
        boundaries: None,
        weights: None,
        weights_prime: Some(wp),
    };
    vec![
        spec(vec![vec![0, 1], vec![1, 2], vec![0, 2]], vec![vec![1.0, 2.0, 0.5], vec![1.5, 1.0, 0.7]]),
        spec(vec![vec![0, 1, 2]], vec![vec![1.0, 1.2, 0.8], vec![2.0, 1.0, 1.0], vec![0.6]]),
        spec(
            vec![vec![0, 1, 2], vec![0, 1, 3], vec![0, 2, 3], vec![1, 2, 3]],
            vec![vec![1.0, 1.5, 1.0, 0.7], vec![1.0, 2.0, 1.0, 1.0, 0.5, 1.0], vec![1.0, 1.3, 0.9, 1.0]],
        ),
    ]
}

fn log_det_ratio(p: &PerturbationPair) -> f64 {
    p.base().to_dense().determinant().ln() - p.perturbed().to_dense().determinant().ln()
}

fn zeta_checks(s: &mut Suite<'_>) {
    let z = "zeta_invariants";
    s.guard(z, "determinant_oracle", 1e-5, |s| {
        let mut worst = 0.0f64;
        for k in 0..25u64 {
            let n = 8 + (k as usize * 42) / 24;
            let p = random_pair(n, 1000 + k, false, 0.5)?;
            let want = log_det_ratio(&p).exp();
            let got = ZetaPipeline::new(&p, &ZetaConfig::default())?.determinant()?;
            worst = worst.max((got - want).abs() / want);
        }
        s.at_most(z, "determinant_oracle", worst, 1e-5);
        Ok(())
    });
    s.guard(z, "closed_form_diag", 1e-6, |s| {
        let p = PerturbationPair::new(
            "diag",
            OperatorHandle::diagonal("a", &[1.0, 2.0])?,
            OperatorHandle::diagonal("b", &[1.0, 1.0])?,
        )?;
        let pipe = ZetaPipeline::new(&p, &ZetaConfig::default())?;
        let mut worst = (pipe.determinant()? - 2.0).abs();
        for sv in [0.5, 1.0, 2.0] {
            let want = 2f64.powf(-sv) - 1.0;
            worst = worst.max((pipe.zeta(Complex64::new(sv, 0.0))?.re - want).abs());
        }
        s.at_most(z, "closed_form_diag", worst, 1e-6);
        Ok(())
    });
    s.guard(z, "split_independence", 1e-6, |s| {
        let mut worst = 0.0f64;
        for seed in 0..4 {
            let p = random_pair(20, 120 + seed, false, 0.5)?;
            let a = ZetaPipeline::new(&p, &ZetaConfig::default())?.zeta_prime_at_zero()?.0;
            let cfg = ZetaConfig { split_point: 0.5, ..ZetaConfig::default() };
            let b = ZetaPipeline::new(&p, &cfg)?.zeta_prime_at_zero()?.0;
            worst = worst.max((a - b).abs());
        }
        s.at_most(z, "split_independence", worst, 1e-6);
        Ok(())
    });
    s.guard(z, "antisymmetry", 1e-8, |s| {
        let mut worst = 0.0f64;
        for seed in 0..4 {
            let p = random_pair(15, 300 + seed, false, 0.5)?;
            let cfg = ZetaConfig::default();
            let d1 = ZetaPipeline::new(&p, &cfg)?.determinant()?;
            let d2 = ZetaPipeline::new(&p.reversed()?, &cfg)?.determinant()?;
            worst = worst.max((d1 * d2 - 1.0).abs());
        }
        s.at_most(z, "antisymmetry", worst, 1e-8);
        Ok(())
    });
    s.guard(z, "torsion_vs_dense", 1e-6, |s| {
        let mut worst = 0.0f64;
        for c in weighted_complexes() {
            let tower = build_hodge_tower(&c)?;
            let t = relative_torsion(&tower, WeightConvention::PaperAsWritten, &ZetaConfig::default())?;
            worst = worst.max((t.log_torsion - dense_log_torsion(&tower)?).abs());
        }
        s.at_most(z, "torsion_vs_dense", worst, 1e-6);
        Ok(())
    });
    s.guard(z, "relative_index_constancy", 1e-9, |s| {
        let (a, b) = build_graded(&GradedBlockSpec {
            dplus: vec![vec![1.0, 0.5], vec![0.0, 2.0], vec![0.3, 0.1]],
            dplus_prime: vec![vec![1.2, 0.5], vec![0.0, 1.0], vec![0.3, 0.4]],
        })?;
        let r = relative_index(&a, &b, &[0.1, 1.0, 10.0])?;
        let off = r.max_deviation.max((r.mean - r.kernel_index_difference as f64).abs());
        s.at_most(z, "relative_index_constancy", off, 1e-9);
        Ok(())
    });
    s.guard(z, "mckean_singer_euler", 1e-8, |s| {
        let mut worst = 0.0f64;
        for c in weighted_complexes() {
            let chi = c.chain_complex()?.euler_characteristic() as f64;
            let tower = build_hodge_tower(&c)?;
            for t in [0.01, 0.1, 1.0, 10.0, 100.0] {
                let mut v = 0.0;
                for (q, p) in tower.iter().enumerate() {
                    let tr = expm(&p.perturbed().to_dense(), t).trace();
                    v += if q % 2 == 0 { tr } else { -tr };
                }
                worst = worst.max((v - chi).abs());
            }
        }
        s.at_most(z, "mckean_singer_euler", worst, 1e-8);
        Ok(())
    });
}

/// Leading t^{1/2} coefficient of a bump-potential Schrödinger pair with
/// `np1` − 1 interior points on (0, 12).
pub(crate) fn schrodinger_leading_coefficient(np1: usize) -> relspec::Result<f64> {
    let n = np1 - 1;
    let len = 12.0;
    let dx = len / np1 as f64;
    let lo = ((5.0 / dx).floor() as usize).saturating_sub(2);
    let hi = ((7.0 / dx).ceil() as usize + 2).min(n);
    let spec = ModelSpec::Schrodinger1d(SchrodingerSpec {
        n,
        length: len,
        window: (lo, hi),
        background: Profile::Zero,
        potential: Profile::Zero,
        potential_prime: Profile::Bump { center: 6.0, half_width: 1.0, amplitude: 1.0, offset: 0.0 },
        density: None,
    });
    let pair = build_model(&spec)?;
    let series = relative_heat_trace(&pair, &log_grid(0.01, 0.3, 40), TraceMethod::DenseSpectral)?;
    Ok(fit_expansion(&series, 1, 6, (0.02, 0.2))?.coefficients[2])
}

/// Empirical order from three refinements and the Richardson limit from the last two.
pub(crate) fn richardson(v: &[f64]) -> (f64, f64) {
    let k = v.len();
    let order = ((v[k - 3] - v[k - 2]) / (v[k - 2] - v[k - 1])).abs().log2();
    let limit = v[k - 1] + (v[k - 1] - v[k - 2]) / (2f64.powf(order) - 1.0);
    (order, limit)
}

fn full_checks(s: &mut Suite<'_>) {
    s.guard("heat_engine", "krylov_vs_dense_200", 1e-9, |s| {
        let p = random_pair(200, 11, false, 0.5)?;
        let grid = [0.05, 0.5, 2.0, 8.0];
        let d = relative_heat_trace(&p, &grid, TraceMethod::DenseSpectral)?;
        let k = relative_heat_trace(&p, &grid, TraceMethod::Krylov)?;
        let worst =
            d.values().iter().zip(k.values()).map(|(a, b)| (a - b).abs() / a.abs().max(1e-3)).fold(0.0, f64::max);
        s.at_most("heat_engine", "krylov_vs_dense_200", worst, 1e-9);
        Ok(())
    });
    s.guard("heat_engine", "stochastic_rate", 1.0, |s| {
        let p = random_pair(200, 2, false, 0.5)?;
        let grid = [0.5];
        let exact = relative_heat_trace(&p, &grid, TraceMethod::DenseSpectral)?.values()[0];
        let run = |probes| -> relspec::Result<(f64, f64)> {
            let r = relative_heat_trace(&p, &grid, TraceMethod::Stochastic { probes, seed: 99 })?;
            Ok((r.values()[0], r.error_estimates()[0]))
        };
        let (v16, e16) = run(16)?;
        let (v1024, e1024) = run(1024)?;
        // 64× the probes should shrink the standard error 8×: log₂ ratio ≈ 3.
        s.at_most("heat_engine", "stochastic_rate", ((e16 / e1024).log2() - 3.0).abs(), 1.0);
        s.at_most(
            "heat_engine",
            "stochastic_coverage",
            ((v16 - exact) / e16).abs().max(((v1024 - exact) / e1024).abs()),
            5.0,
        );
        Ok(())
    });
    s.guard("asymptotics", "per_site_locality_200", 1e-8, |s| {
        let mut v = vec![0.0; 200];
        for (k, x) in v.iter_mut().enumerate().take(110).skip(90) {
            *x = 0.5 + 0.01 * k as f64;
        }
        let p = build_model(&path_spec(200, Some(v), false))?;
        let r = coefficient_difference_report(&p, &log_grid(1e-3, 1e-1, 30), 0, 3, (1e-3, 1e-1))?;
        let worst = r
            .per_site
            .iter()
            .enumerate()
            .filter(|(m, _)| m + 20 < 90 || *m >= 130)
            .map(|(_, c)| c[0].abs().max(c[1].abs()))
            .fold(0.0, f64::max);
        s.at_most("asymptotics", "per_site_locality_200", worst, 1e-8);
        Ok(())
    });
    s.guard("asymptotics", "schrodinger_refinement_order", 1.0, |s| {
        let mut limits = Vec::new();
        let mut order = f64::INFINITY;
        for fam in [[240usize, 480, 960], [300, 600, 1200]] {
            let vals = fam.iter().map(|&n| schrodinger_leading_coefficient(n)).collect::<relspec::Result<Vec<_>>>()?;
            let (o, l) = richardson(&vals);
            order = order.min(o);
            limits.push(l);
        }
        s.at_least("asymptotics", "schrodinger_refinement_order", order, 1.0);
        s.at_most("asymptotics", "richardson_reproducibility", (limits[0] - limits[1]).abs(), 1e-4);
        Ok(())
    });
    s.guard("zeta_invariants", "determinant_oracle_200", 1e-5, |s| {
        let p = random_pair(200, 77, false, 0.5)?;
        let want = log_det_ratio(&p).exp();
        let got = ZetaPipeline::new(&p, &ZetaConfig::default())?.determinant()?;
        s.at_most("zeta_invariants", "determinant_oracle_200", (got - want).abs() / want, 1e-5);
        Ok(())
    });
}
