use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relspec::heat::*;
use relspec::model::{build_model, GraphSpec, ModelSpec, RandomSpdSpec};
use relspec::operator::{OperatorHandle, PerturbationPair};

fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

// Padé matrix exponential from nalgebra, independent of the spectral path.
fn expm(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (a * -t).exp()
}

fn path(n: usize) -> OperatorHandle {
    let spec = ModelSpec::PathGraph(GraphSpec {
        n,
        mesh_width: 1.0,
        weights: None,
        weights_prime: None,
        potential: None,
        potential_prime: None,
    });
    build_model(&spec).unwrap().base().clone()
}

#[test]
fn semigroup_property_over_seeds() {
    for seed in 0..20 {
        let m = random_spd(12, seed);
        let a = OperatorHandle::dense("a", m).unwrap();
        let v = DVector::from_fn(12, |i, _| (i as f64 * 0.7).sin());
        let (t, s) = (0.3 + 0.05 * seed as f64, 0.8);
        let lhs = heat_apply(&a, t + s, &v).unwrap();
        let rhs = heat_apply(&a, t, &heat_apply(&a, s, &v).unwrap()).unwrap();
        assert!((&lhs - &rhs).norm() <= 1e-12 * lhs.norm(), "seed {seed}");
    }
}

#[test]
fn kernel_matches_pade_and_is_symmetric() {
    let m = random_spd(15, 7);
    let a = OperatorHandle::dense("a", m.clone()).unwrap();
    for t in [0.01, 1.0, 20.0] {
        let k = heat_kernel(&a, t).unwrap();
        let want = expm(&m, t);
        assert!((&k.entries - &want).norm() <= 1e-12 * want.norm());
        assert!((&k.entries - k.entries.transpose()).norm() <= 1e-14 * want.norm());
        assert_eq!(k.diagonal().len(), 15);
    }
}

#[test]
fn single_trace_strictly_decreases() {
    let a = OperatorHandle::dense("a", random_spd(10, 3)).unwrap();
    let grid = default_t_grid();
    let traces: Vec<f64> = grid.iter().map(|&t| heat_kernel(&a, t).unwrap().diagonal().iter().sum()).collect();
    assert!(traces.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn cycle_kernel_rows_sum_to_one() {
    let spec = ModelSpec::CycleGraph(GraphSpec {
        n: 17,
        mesh_width: 1.0,
        weights: None,
        weights_prime: None,
        potential: None,
        potential_prime: None,
    });
    let a = build_model(&spec).unwrap().base().clone();
    for t in [0.1, 1.0, 10.0] {
        let k = heat_kernel(&a, t).unwrap();
        for i in 0..17 {
            assert!((k.entries.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn dense_and_krylov_traces_agree() {
    let spec = ModelSpec::RandomSpd(RandomSpdSpec {
        n: 200,
        seed: 11,
        window: Some((80, 120)),
        amplitude: 0.5,
        shift: 0.5,
        monotone: false,
    });
    let pair = build_model(&spec).unwrap();
    let grid = [0.05, 0.5, 2.0, 8.0];
    let dense = relative_heat_trace(&pair, &grid, TraceMethod::DenseSpectral).unwrap();
    let kry = relative_heat_trace(&pair, &grid, TraceMethod::Krylov).unwrap();
    for (d, k) in dense.values().iter().zip(kry.values()) {
        assert!((d - k).abs() <= 1e-9 * d.abs().max(1e-3), "{d} vs {k}");
    }
    assert_eq!(kry.method(), MethodKind::Krylov);
}

#[test]
fn relative_trace_matches_direct_difference() {
    let a = random_spd(9, 21);
    let mut b = a.clone();
    b[(4, 4)] += 0.7;
    b[(3, 4)] += 0.1;
    b[(4, 3)] += 0.1;
    let pair = PerturbationPair::new(
        "p",
        OperatorHandle::dense("a", a.clone()).unwrap(),
        OperatorHandle::dense("b", b.clone()).unwrap(),
    )
    .unwrap();
    let grid = [0.001, 0.1, 1.0, 30.0];
    let s = relative_heat_trace(&pair, &grid, TraceMethod::DenseSpectral).unwrap();
    for (&t, &v) in grid.iter().zip(s.values()) {
        let want = (expm(&a, t) - expm(&b, t)).trace();
        assert!((v - want).abs() <= 1e-12 * (1.0 + want.abs()), "t={t}");
    }
}

#[test]
fn stochastic_error_shrinks_like_inverse_sqrt_probes() {
    let spec = ModelSpec::RandomSpd(RandomSpdSpec {
        n: 60,
        seed: 2,
        window: Some((20, 40)),
        amplitude: 0.5,
        shift: 0.5,
        monotone: false,
    });
    let pair = build_model(&spec).unwrap();
    let grid = [0.5];
    let exact = relative_heat_trace(&pair, &grid, TraceMethod::DenseSpectral).unwrap().values()[0];
    let run = |probes: usize| {
        let s = relative_heat_trace(&pair, &grid, TraceMethod::Stochastic { probes, seed: 99 }).unwrap();
        (s.values()[0], s.error_estimates()[0])
    };
    let (v16, e16) = run(16);
    let (v1024, e1024) = run(1024);
    let ratio = e16 / e1024;
    assert!(ratio > 4.0 && ratio < 16.0, "stderr ratio {ratio}");
    assert!((v16 - exact).abs() < 5.0 * e16);
    assert!((v1024 - exact).abs() < 5.0 * e1024);
    // Same seed, same numbers.
    assert_eq!(run(16), (v16, e16));
}

#[test]
fn decay_probe_on_a_path_is_gaussian_like() {
    let a = path(50);
    let rows = offdiag_decay_probe(&a, &[0.5, 2.0], 25).unwrap();
    for row in &rows {
        // Below ~1e-14 the dense kernel is roundoff.
        let prof: Vec<f64> = row.profile.iter().map(|&(_, w)| w).take_while(|&w| w > 1e-14).collect();
        assert!(prof.len() > 5);
        assert!(prof.windows(2).all(|w| w[1] <= w[0]));
        assert!(row.gaussian_slope.unwrap() > 0.0);
    }
    // Faster decay at the smaller time.
    assert!(rows[0].profile[10].1 < rows[1].profile[10].1);
}

#[test]
fn series_rejects_bad_grids_and_times() {
    let a = path(5);
    assert!(heat_kernel(&a, 0.0).is_err());
    assert!(heat_apply(&a, -1.0, &DVector::zeros(5)).is_err());
    assert!(HeatTraceSeries::from_fn(vec![1.0, 0.5], "x", |t| t).is_err());
}
