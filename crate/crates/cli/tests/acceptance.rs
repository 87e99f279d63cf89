//! Acceptance suite: one PASS/FAIL line per criterion, each measured against
//! an oracle computed here from nalgebra or from closed forms.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use relspec::asymptotics::{basis_exponents, coefficient_difference_report, fit_expansion, ExponentStep};
use relspec::duhamel::{duhamel_difference, uniform_bound_scan};
use relspec::heat::{heat_kernel, relative_heat_trace, HeatTraceSeries, TraceMethod};
use relspec::hodge::{build_hodge_tower, ComplexSpec};
use relspec::linalg::log_grid;
use relspec::model::{
    build_graded, build_model, GradedBlockSpec, GraphSpec, ModelSpec, Profile, RandomSpdSpec, SchrodingerSpec,
};
use relspec::operator::PerturbationPair;
use relspec::quadrature::QuadratureRule;
use relspec::zeta::{relative_index, relative_torsion, WeightConvention, ZetaConfig, ZetaPipeline};
use relspec_cli::{verify_suite, ExperimentConfig, Level, VerifyOptions};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn random_pair(n: usize, seed: u64, monotone: bool, shift: f64) -> PerturbationPair {
    build_model(&ModelSpec::RandomSpd(RandomSpdSpec {
        n,
        seed,
        window: Some((n / 3, 2 * n / 3)),
        amplitude: 0.5,
        shift,
        monotone,
    }))
    .unwrap()
}

fn dense(p: &PerturbationPair) -> (DMatrix<f64>, DMatrix<f64>) {
    (p.base().to_dense(), p.perturbed().to_dense())
}

// e^{-tM} by nalgebra's Padé exponential.
fn expm(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (m * -t).exp()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..25u64 {
        let n = 8 + (k as usize * 42) / 24;
        let p = random_pair(n, 1000 + k, false, 0.5);
        let (a, b) = dense(&p);
        let want = (a.lu().determinant().ln() - b.lu().determinant().ln()).exp();
        let got = ZetaPipeline::new(&p, &ZetaConfig::default()).unwrap().determinant().unwrap();
        worst = worst.max((got - want).abs() / want);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-5 && secs < 30.0, format!("worst relative error {worst:.2e} (<= 1e-5), {secs:.1} s (< 30 s)"))
}

// Divided-difference form of ∫₀ᵗ e^{-sA} η e^{-(t-s)A'} ds in the two eigenbases.
fn duhamel_oracle(p: &PerturbationPair, t: f64) -> DMatrix<f64> {
    let (a, b) = dense(p);
    let (ea, eb) = (a.clone().symmetric_eigen(), b.clone().symmetric_eigen());
    let core = ea.eigenvectors.transpose() * (&b - &a) * &eb.eigenvectors;
    let g = DMatrix::from_fn(a.nrows(), b.nrows(), |k, l| {
        let (x, y) = (ea.eigenvalues[k], eb.eigenvalues[l]);
        if (x - y).abs() * t < 1e-12 {
            t * (-t * 0.5 * (x + y)).exp()
        } else {
            ((-t * x).exp() - (-t * y).exp()) / (y - x)
        }
    });
    &ea.eigenvectors * core.component_mul(&g) * eb.eigenvectors.transpose()
}

fn criterion_2() -> Outcome {
    let mut residual = 0.0f64;
    let mut factor = f64::INFINITY;
    for seed in 0..20u64 {
        let p = random_pair(8, 2000 + seed, false, 0.5);
        let (a, b) = dense(&p);
        for t in [0.1, 1.0, 5.0] {
            let direct = expm(&a, t) - expm(&b, t);
            let q = duhamel_difference(&p, t, &QuadratureRule::gauss_legendre(64, t).unwrap()).unwrap();
            residual = residual.max((&q - &direct).norm() / direct.norm());

            let exact = duhamel_oracle(&p, t);
            let errs: Vec<f64> = [4, 8, 16, 32, 64]
                .iter()
                .map(|&n| {
                    let q = duhamel_difference(&p, t, &QuadratureRule::gauss_legendre(n, t).unwrap()).unwrap();
                    (q - &exact).norm() / exact.norm()
                })
                .collect();
            for w in errs.windows(2) {
                if w[1] > 1e-13 {
                    factor = factor.min(w[0] / w[1]);
                }
            }
        }
    }
    outcome(
        residual <= 1e-8 && factor >= 10.0,
        format!("64-node residual {residual:.2e} (<= 1e-8), worst doubling factor {factor:.1} (>= 10) above 1e-13"),
    )
}

fn trace_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().sum()
}

fn criterion_3() -> Outcome {
    let mut left = 0;
    let mut scan_err = 0.0f64;
    let mut finite = true;
    for seed in 0..10u64 {
        for monotone in [true, false] {
            let p = random_pair(10, 3000 + seed, monotone, 12.0);
            let scan = uniform_bound_scan(&p, 0.1, 10.0, 100).unwrap();
            finite &= scan.trace_norms.iter().all(|v| v.is_finite()) && scan.max.is_finite();
            if monotone {
                let (a, b) = dense(&p);
                for (&t, &v) in scan.t_grid.iter().zip(&scan.trace_norms) {
                    let want = trace_norm(&(expm(&a, t) - expm(&b, t)));
                    scan_err = scan_err.max((v - want).abs() / want);
                }
                // the oracle's own maximum over the same grid
                let first = trace_norm(&(expm(&a, 0.1) - expm(&b, 0.1)));
                let others = scan.t_grid[1..].iter().all(|&t| trace_norm(&(expm(&a, t) - expm(&b, t))) <= first);
                if scan.argmax == 0.1 && others {
                    left += 1;
                }
            }
        }
    }
    outcome(
        left == 10 && finite && scan_err <= 1e-9,
        format!(
            "max at t = 0.1 for {left}/10 monotone pairs, all 20 scans finite: {finite}, scan vs oracle {scan_err:.1e}"
        ),
    )
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-10 * top.max(1.0)).count()
}

type Block = Vec<Vec<f64>>;

fn graded_pairs() -> Vec<(Block, Block)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let shapes = [(2, 3), (3, 2), (3, 3), (4, 2), (2, 4), (1, 3), (3, 1), (4, 4), (2, 2), (5, 3)];
    shapes
        .iter()
        .enumerate()
        .map(|(k, &(rows, cols))| {
            let mut m = |drop: Option<usize>| -> Block {
                (0..rows)
                    .map(|i| {
                        (0..cols)
                            .map(|j| if Some(j) == drop || Some(i) == drop { 0.0 } else { rng.random_range(-1.0..1.0) })
                            .collect()
                    })
                    .collect()
            };
            // every other pair loses rank on one side
            let a = m(if k % 2 == 0 { Some(0) } else { None });
            let b = m(None);
            (a, b)
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let times = [0.1, 1.0, 10.0];
    let (mut spread, mut off) = (0.0f64, 0.0f64);
    let mut oracle_err = 0.0f64;
    for (dplus, dplus_prime) in graded_pairs() {
        let (ga, gb) =
            build_graded(&GradedBlockSpec { dplus: dplus.clone(), dplus_prime: dplus_prime.clone() }).unwrap();
        let r = relative_index(&ga, &gb, &times).unwrap();
        let to_m = |v: &Block| DMatrix::from_fn(v.len(), v[0].len(), |i, j| v[i][j]);
        let (d, dp) = (to_m(&dplus), to_m(&dplus_prime));
        // rank-nullity: ind D⁺ = dim ker D⁺ − dim coker D⁺
        let ind = |m: &DMatrix<f64>| (m.ncols() - rank(m)) as i64 - (m.nrows() - rank(m)) as i64;
        let want = (ind(&d) - ind(&dp)) as f64;
        for (&t, &v) in times.iter().zip(&r.values) {
            spread = spread.max((v - r.values[0]).abs());
            off = off.max((v - want).abs());
            // tr e^{-tD⁻D⁺} − tr e^{-tD⁺D⁻}, for D and D'
            let st = |m: &DMatrix<f64>| expm(&(m.transpose() * m), t).trace() - expm(&(m * m.transpose()), t).trace();
            oracle_err = oracle_err.max((v - (st(&d) - st(&dp))).abs());
        }
    }
    outcome(
        spread <= 1e-9 && off <= 1e-9 && oracle_err <= 1e-9,
        format!("variation over t {spread:.1e}, distance to ind D - ind D' {off:.1e}, supertrace vs Pade {oracle_err:.1e} (all <= 1e-9)"),
    )
}

fn schrodinger_coefficient(np1: usize, window: (f64, f64), l: usize) -> f64 {
    let n = np1 - 1;
    let len = 12.0;
    let dx = len / np1 as f64;
    let spec = ModelSpec::Schrodinger1d(SchrodingerSpec {
        n,
        length: len,
        window: ((5.0 / dx) as usize - 2, (7.0 / dx) as usize + 3),
        background: Profile::Zero,
        potential: Profile::Zero,
        potential_prime: Profile::Bump { center: 6.0, half_width: 1.0, amplitude: 1.0, offset: 0.0 },
        density: None,
    });
    let pair = build_model(&spec).unwrap();
    let grid = log_grid(window.0 / 2.0, window.1 * 1.5, 40);
    let series = relative_heat_trace(&pair, &grid, TraceMethod::DenseSpectral).unwrap();
    // exponents −1/2, 0, 1/2, ...: the first nonvanishing one is t^{1/2}
    fit_expansion(&series, 1, l, window).unwrap().coefficients[2]
}

// (order, limit) from three successive halvings of the mesh width.
fn extrapolate(v: &[f64]) -> (f64, f64) {
    let ratio = (v[0] - v[1]) / (v[1] - v[2]);
    let order = ratio.abs().log2();
    (order, v[2] + (v[2] - v[1]) / (ratio.abs() - 1.0))
}

// ∫ exp(1 − 1/(1 − r²)) dr over (−1, 1) by composite Simpson.
fn bump_integral() -> f64 {
    let n = 20_000;
    let h = 2.0 / n as f64;
    let f = |r: f64| if r.abs() < 1.0 { (1.0 - 1.0 / (1.0 - r * r)).exp() } else { 0.0 };
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * f(-1.0 + i as f64 * h)
        })
        .sum::<f64>()
        * h
        / 3.0
}

fn criterion_5() -> Outcome {
    let coeffs = [1.7, -0.4, 2.5];
    let mut synth = 0.0f64;
    for n in 1..=3u32 {
        let p = basis_exponents(n, 2, ExponentStep::Auto);
        let series = HeatTraceSeries::from_fn(log_grid(1e-3, 1e-1, 40), "synthetic", |t| {
            p.iter().zip(&coeffs).map(|(&e, &a)| a * t.powf(e)).sum()
        })
        .unwrap();
        for l in [2, 4] {
            let e = fit_expansion(&series, n, l, (1e-3, 1e-1)).unwrap();
            for (got, want) in e.coefficients.iter().zip(&coeffs) {
                synth = synth.max((got - want).abs() / want.abs());
            }
        }
    }

    let families = [[240, 480, 960], [300, 600, 1200]];
    let mut order = f64::INFINITY;
    let mut limits = vec![];
    for fam in families {
        let v: Vec<f64> = fam.iter().map(|&n| schrodinger_coefficient(n, (0.02, 0.2), 6)).collect();
        let (o, lim) = extrapolate(&v);
        order = order.min(o);
        limits.push(lim);
    }
    let repro = (limits[0] - limits[1]).abs();

    // Continuum value ∫(V' − V)/√(4π); a narrower window removes the
    // truncation bias of the wide one.
    let continuum = bump_integral() / (4.0 * std::f64::consts::PI).sqrt();
    let narrow = extrapolate(&[300, 600, 1200].map(|n| schrodinger_coefficient(n, (0.01, 0.1), 8))).1;
    let analytic = (narrow - continuum).abs() / continuum;

    outcome(
        synth <= 1e-6 && order >= 1.0 && repro <= 1e-4 && analytic <= 1e-3,
        format!(
            "synthetic {synth:.1e} (<= 1e-6), order {order:.2} (>= 1), limits {:.10} / {:.10} differ {repro:.1e} (<= 1e-4), narrow-window limit vs continuum {analytic:.1e}",
            limits[0], limits[1]
        ),
    )
}

fn criterion_6() -> Outcome {
    let n = 200;
    let support = 90..110;
    let mut v = vec![0.0; n];
    for k in support.clone() {
        v[k] = 0.5 + 0.01 * k as f64;
    }
    let pair = build_model(&ModelSpec::PathGraph(GraphSpec {
        n,
        mesh_width: 1.0,
        weights: None,
        weights_prime: None,
        potential: None,
        potential_prime: Some(v.clone()),
    }))
    .unwrap();
    let grid = log_grid(1e-3, 1e-1, 30);
    let r = coefficient_difference_report(&pair, &grid, 0, 3, (1e-3, 1e-1)).unwrap();
    let far = |m: usize| m + 20 < support.start || m >= support.end + 20;
    let outside =
        (0..n).filter(|&m| far(m)).map(|m| r.per_site[m][0].abs().max(r.per_site[m][1].abs())).fold(0.0, f64::max);
    // Inside, the t¹ coefficient of the diagonal difference is V'(m) − V(m).
    let inside = support.clone().map(|m| (r.per_site[m][1] - v[m]).abs()).fold(0.0, f64::max);
    // Padé check of the claim itself at the largest fitted time.
    let (a, b) = dense(&pair);
    let d = expm(&a, 0.1) - expm(&b, 0.1);
    let direct = (0..n).filter(|&m| far(m)).map(|m| d[(m, m)].abs()).fold(0.0, f64::max);
    outcome(
        outside <= 1e-8 && direct <= 1e-8,
        format!("max leading coefficient beyond 20 sites {outside:.1e}, direct diagonal {direct:.1e} (<= 1e-8); inside, t^1 vs V'-V {inside:.1e}"),
    )
}

fn weighted_complex(simplices: Vec<Vec<usize>>, wp: Vec<Vec<f64>>) -> ComplexSpec {
    ComplexSpec { simplices: Some(simplices), boundaries: None, weights: None, weights_prime: Some(wp) }
}

fn test_complexes() -> Vec<ComplexSpec> {
    vec![
        weighted_complex(vec![vec![0, 1], vec![1, 2], vec![0, 2]], vec![vec![1.0, 2.0, 0.5], vec![1.5, 1.0, 0.7]]),
        weighted_complex(
            vec![vec![0, 1, 2], vec![2, 3]],
            vec![vec![1.0, 1.2, 0.8, 1.1], vec![2.0, 1.0, 1.0, 0.4], vec![0.6]],
        ),
        weighted_complex(
            vec![vec![0, 1, 2], vec![0, 1, 3], vec![0, 2, 3], vec![1, 2, 3]],
            vec![vec![1.0, 1.5, 1.0, 0.7], vec![1.0, 2.0, 1.0, 1.0, 0.5, 1.0], vec![1.0, 1.3, 0.9, 1.0]],
        ),
    ]
}

// ln det⁺ from the eigenvalues above the numerical kernel.
fn log_det_plus(m: &DMatrix<f64>) -> f64 {
    let ev = m.clone().symmetric_eigen().eigenvalues;
    let top = ev.iter().cloned().fold(0.0, f64::max);
    ev.iter().filter(|&&x| x > 1e-9 * top.max(1.0)).map(|x| x.ln()).sum()
}

fn criterion_7() -> Outcome {
    let mut worst = 0.0f64;
    for spec in test_complexes() {
        let tower = build_hodge_tower(&spec).unwrap();
        let t = relative_torsion(&tower, WeightConvention::PaperAsWritten, &ZetaConfig::default()).unwrap();
        let oracle = 0.5
            * tower
                .iter()
                .enumerate()
                .map(|(q, p)| {
                    let (a, b) = dense(p);
                    let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (log_det_plus(&b) - log_det_plus(&a))
                })
                .sum::<f64>();
        worst = worst.max((t.log_torsion - oracle).abs());
    }
    outcome(worst <= 1e-6, format!("worst |log torsion - dense| {worst:.1e} (<= 1e-6) over 3 complexes"))
}

fn regression_pairs() -> Vec<(String, PerturbationPair, ZetaConfig)> {
    let mut out = vec![];
    for k in 0..10u64 {
        let n = 8 + 4 * k as usize;
        out.push((format!("random_{n}"), random_pair(n, 4000 + k, k % 2 == 0, 0.5), ZetaConfig::default()));
    }
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<_> = fs::read_dir(configs).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    for path in files {
        let cfg = ExperimentConfig::from_toml(&fs::read_to_string(&path).unwrap()).unwrap();
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        match &cfg.model {
            ModelSpec::HodgeComplex(c) => {
                for (q, p) in build_hodge_tower(c).unwrap().into_iter().enumerate() {
                    out.push((format!("{name}_q{q}"), p, cfg.zeta_config()));
                }
            }
            ModelSpec::GradedBlock(_) => {}
            m => out.push((name, build_model(m).unwrap(), cfg.zeta_config())),
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let (mut split, mut anti) = (0.0f64, 0.0f64);
    let pairs = regression_pairs();
    for (_, p, cfg) in &pairs {
        let at = |split_point: f64| {
            let c = ZetaConfig { split_point, fit_window: None, ..cfg.clone() };
            ZetaPipeline::new(p, &c).unwrap().zeta_prime_at_zero().unwrap().0
        };
        split = split.max((at(1.0) - at(0.5)).abs());
        let fwd = ZetaPipeline::new(p, cfg).unwrap().determinant().unwrap();
        let back = ZetaPipeline::new(&p.reversed().unwrap(), cfg).unwrap().determinant().unwrap();
        anti = anti.max((fwd * back - 1.0).abs());
    }
    outcome(
        split <= 1e-6 && anti <= 1e-8,
        format!("{} pairs: split drift {split:.1e} (<= 1e-6), |det·det_rev - 1| {anti:.1e} (<= 1e-8)", pairs.len()),
    )
}

// χ = Σ (−1)^k #(k-faces), counting faces of the generators directly.
fn euler_by_counting(generators: &[Vec<usize>]) -> i64 {
    let mut faces = std::collections::BTreeSet::new();
    for g in generators {
        for mask in 1u32..(1 << g.len()) {
            let mut f: Vec<usize> = (0..g.len()).filter(|i| mask & (1 << i) != 0).map(|i| g[i]).collect();
            f.sort();
            faces.insert(f);
        }
    }
    faces.iter().map(|f| if f.len() % 2 == 1 { 1 } else { -1 }).sum()
}

fn criterion_9() -> Outcome {
    let mut cases: Vec<ComplexSpec> = test_complexes();
    cases.push(ComplexSpec {
        simplices: Some(vec![vec![0, 1], vec![1, 2], vec![2, 0], vec![2, 3], vec![3, 4], vec![4, 2]]),
        boundaries: None,
        weights: None,
        weights_prime: None,
    });
    let mut worst = 0.0f64;
    for spec in &cases {
        let chi = euler_by_counting(spec.simplices.as_ref().unwrap()) as f64;
        let tower = build_hodge_tower(spec).unwrap();
        for t in [0.01, 0.1, 1.0, 5.0, 50.0] {
            // both the unit-weight and the reweighted Laplacians
            for side in 0..2 {
                let s: f64 = tower
                    .iter()
                    .enumerate()
                    .map(|(q, p)| {
                        let op = if side == 0 { p.base() } else { p.perturbed() };
                        let tr: f64 = heat_kernel(op, t).unwrap().diagonal().iter().sum();
                        if q % 2 == 0 {
                            tr
                        } else {
                            -tr
                        }
                    })
                    .sum();
                worst = worst.max((s - chi).abs());
            }
        }
    }
    outcome(
        worst <= 1e-8,
        format!("worst |supertrace - chi| {worst:.1e} (<= 1e-8) over {} complexes, 5 times", cases.len()),
    )
}

fn criterion_10() -> Outcome {
    let run =
        |threads| verify_suite(&VerifyOptions { level: Level::Full, threads: Some(threads), corrupt_quadrature: None });
    let (one, four) = (run(1), run(4));
    let same_text = one.render() == four.render();
    let same_json = serde_json::to_string(&one).unwrap() == serde_json::to_string(&four).unwrap();
    outcome(
        same_text && same_json,
        format!(
            "{} checks; text identical: {same_text}, json identical: {same_json}; suite passed: {}",
            one.checks.len(),
            one.passed()
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("finite-determinant oracle", criterion_1),
        ("Duhamel identity", criterion_2),
        ("uniform trace-norm bound", criterion_3),
        ("relative index", criterion_4),
        ("expansion recovery", criterion_5),
        ("per-site coefficient locality", criterion_6),
        ("torsion oracle", criterion_7),
        ("split-point and antisymmetry", criterion_8),
        ("McKean-Singer / Euler", criterion_9),
        ("determinism across thread counts", criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let o = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        if !o.passed {
            failed += 1;
        }
        println!("{} criterion {:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, k + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
