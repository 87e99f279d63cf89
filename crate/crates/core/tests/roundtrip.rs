use num_complex::Complex64;
use proptest::prelude::*;
use relspec::asymptotics::AsymptoticExpansion;
use relspec::heat::{HeatTraceSeries, MethodKind};
use relspec::zeta::{PoleInfo, ZetaDiagnostics, ZetaResult};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e12..1e12f64, -1e-12..1e-12f64, Just(0.0)]
}

fn nonneg() -> impl Strategy<Value = f64> {
    prop_oneof![0.0..1e6f64, 0.0..1e-9f64]
}

fn series() -> impl Strategy<Value = HeatTraceSeries> {
    (1usize..30)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(1e-6..10.0f64, n),
                prop::collection::vec(finite(), n),
                prop::collection::vec(nonneg(), n),
            )
        })
        .prop_map(|(steps, values, errs)| {
            let mut t = 0.0;
            let grid: Vec<f64> = steps
                .iter()
                .map(|s| {
                    t += s;
                    t
                })
                .collect();
            HeatTraceSeries::new(grid, values, MethodKind::Stochastic, errs, "p").unwrap()
        })
}

fn expansion() -> impl Strategy<Value = AsymptoticExpansion> {
    (0u32..5, 0usize..6)
        .prop_flat_map(|(n_dim, l)| {
            (
                Just(n_dim),
                prop::collection::vec(finite(), l + 1),
                prop::collection::vec(nonneg(), l + 1),
                (1e-6..1e-3f64, 1e-2..1.0f64),
                nonneg(),
                1.0..1e15f64,
                1usize..500,
                prop::collection::vec("[a-z][a-z0-9 .()]{0,20}[a-z0-9)]", 0..3),
            )
        })
        .prop_map(|(n_dim, coefficients, stderr, fit_window, residual_rms, condition_number, samples, warnings)| {
            let l = coefficients.len() - 1;
            AsymptoticExpansion {
                n_dim,
                l,
                exponents: (0..=l).map(|j| -(n_dim as f64) / 2.0 + 0.5 * j as f64).collect(),
                coefficients,
                stderr,
                fit_window,
                residual_rms,
                condition_number,
                samples,
                warnings,
            }
        })
}

fn complex() -> impl Strategy<Value = Complex64> {
    (finite(), finite()).prop_map(|(a, b)| Complex64::new(a, b))
}

fn zeta_result() -> impl Strategy<Value = ZetaResult> {
    (
        prop::collection::vec((complex(), complex()), 0..6),
        finite(),
        -5i64..5,
        prop::collection::vec((finite(), finite()), 0..4),
        0.01..10.0f64,
        prop::collection::vec(nonneg(), 7),
    )
        .prop_map(|(sz, zp, h, poles, split, d)| ZetaResult {
            s_values: sz.iter().map(|p| p.0).collect(),
            zeta_values: sz.iter().map(|p| p.1).collect(),
            zeta_prime_at_zero: zp,
            h,
            poles: poles.into_iter().map(|(location, residue)| PoleInfo { location, residue }).collect(),
            split_point: split,
            determinant: (-zp / 1e12).exp(),
            diagnostics: ZetaDiagnostics {
                fit_residual: d[0],
                fit_condition_number: d[1],
                tail_deviation: d[2],
                tail_truncation_bound: d[3],
                small_t_remainder: d[4],
                zeta_prime_error_estimate: d[5],
                gap: d[6],
            },
        })
}

proptest! {
    #[test]
    fn series_csv_round_trip(s in series()) {
        let back = HeatTraceSeries::from_csv(&s.to_csv(), s.method(), s.pair_label()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn expansion_csv_round_trip(e in expansion()) {
        let back = AsymptoticExpansion::from_csv(&e.to_csv()).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn zeta_result_json_round_trip(r in zeta_result()) {
        let text = serde_json::to_string(&r).unwrap();
        let back: ZetaResult = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, r);
    }
}
