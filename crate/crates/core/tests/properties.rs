//! Property tests for the invariants of each module, with `nalgebra` as an
//! independent linear-algebra oracle.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use dhym_core::cohomology::compute_z;
use dhym_core::diagnostics::{q_functional, tensor_norms, QConfig};
use dhym_core::flow::{BaseCurvature, FlowProblem, FlowState};
use dhym_core::geometry::{bandlimited_noise, TorusGeometry};
use dhym_core::harness::normalized_perturbation;
use dhym_core::io::{parse_config_str, read_scalar_snapshot, write_snapshot};
use dhym_core::linalg::CMat;
use dhym_core::phase::pointwise_phase;

fn to_na(m: &CMat) -> DMatrix<Complex64> {
    let n = m.n();
    DMatrix::from_fn(n, n, |i, j| m[(i, j)])
}

fn hermitian(n: usize, entries: &[f64]) -> CMat {
    let mut m = CMat::zeros(n);
    let mut k = 0;
    for i in 0..n {
        m[(i, i)] = Complex64::new(entries[k], 0.0);
        k += 1;
        for j in 0..i {
            let z = Complex64::new(entries[k], entries[k + 1]);
            k += 2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

fn metric(n: usize, entries: &[f64]) -> CMat {
    let mut a = CMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let k = 2 * (i * n + j);
            a[(i, j)] = Complex64::new(entries[k], entries[k + 1]);
        }
    }
    (a * a.adjoint() + CMat::scalar(n, 0.5)).hermitize()
}

/// (n, F, g) with F entries in [−3, 3] and g = AA* + ½I.
fn matrix_pair() -> impl Strategy<Value = (usize, CMat, CMat)> {
    (1usize..=3).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(-3.0f64..3.0, n * n),
            prop::collection::vec(-1.0f64..1.0, 2 * n * n),
        )
            .prop_map(|(n, f, a)| (n, hermitian(n, &f), metric(n, &a)))
    })
}

/// Eigenvalues of g⁻¹F via nalgebra's Cholesky and Hermitian eigensolver.
fn oracle_eigenvalues(f: &CMat, g: &CMat) -> Vec<f64> {
    let l = to_na(g).cholesky().unwrap().l();
    let l_inv = l.try_inverse().unwrap();
    let k = &l_inv * to_na(f) * l_inv.adjoint();
    let k = (&k + k.adjoint()) * Complex64::new(0.5, 0.0);
    let mut vals: Vec<f64> = k.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
    (a - b).norm() <= tol * (1.0 + b.norm())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn eigenvalues_match_oracle((n, f, g) in matrix_pair()) {
        let d = pointwise_phase(&f, &g).unwrap();
        let want = oracle_eigenvalues(&f, &g);
        prop_assert_eq!(d.lambda.len(), n);
        for (a, b) in d.lambda.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn theta_in_range_and_sum_of_arctans((n, f, g) in matrix_pair()) {
        let d = pointwise_phase(&f, &g).unwrap();
        let bound = n as f64 * FRAC_PI_2;
        prop_assert!(d.theta > -bound && d.theta < bound);
        let sum: f64 = oracle_eigenvalues(&f, &g).iter().map(|l| l.atan()).sum();
        prop_assert!((d.theta - sum).abs() <= 1e-10);
    }

    #[test]
    fn zeta_is_determinant_and_has_phase_theta((n, f, g) in matrix_pair()) {
        let d = pointwise_phase(&f, &g).unwrap();
        let g_inv = to_na(&g).try_inverse().unwrap();
        let m = DMatrix::<Complex64>::identity(n, n)
            + g_inv * to_na(&f) * Complex64::new(0.0, 1.0);
        prop_assert!(close(d.zeta, m.determinant(), 1e-10));
        let unit = Complex64::from_polar(d.zeta.norm(), d.theta);
        prop_assert!(close(unit, d.zeta, 1e-12));
    }

    #[test]
    fn eta_matches_formula_and_dominates_metric((n, f, g) in matrix_pair()) {
        let d = pointwise_phase(&f, &g).unwrap();
        let (fa, ga) = (to_na(&f), to_na(&g));
        let want = &ga + &fa * ga.clone().try_inverse().unwrap() * &fa;
        let got = to_na(&d.eta);
        prop_assert!((&got - &want).norm() <= 1e-11 * (1.0 + want.norm()));
        let inv = to_na(&d.eta_inv);
        prop_assert!((&got * &inv - DMatrix::identity(n, n)).norm() <= 1e-10);
        // det η / det g = |ζ|²
        let ratio = got.determinant().re / ga.determinant().re;
        prop_assert!((ratio - d.zeta.norm_sqr()).abs() <= 1e-9 * (1.0 + ratio));
        let gap = &got - &ga;
        let gap = (&gap + gap.adjoint()) * Complex64::new(0.5, 0.0);
        let min = gap.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-12 * (1.0 + got.norm()));
    }

    #[test]
    fn theta_is_monotone_in_f(
        (n, f, g) in matrix_pair(),
        p in prop::collection::vec(-1.0f64..1.0, 18),
        s in 0.0f64..2.0,
    ) {
        let mut a = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = Complex64::new(p[2 * (i * 3 + j)], p[2 * (i * 3 + j) + 1]);
            }
        }
        let psd = (a * a.adjoint()).hermitize();
        let lo = pointwise_phase(&f, &g).unwrap().theta;
        let hi = pointwise_phase(&(f + psd * s), &g).unwrap().theta;
        prop_assert!(hi >= lo - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn spectral_round_trip(n in 1usize..=2, seed in 0u64..1000) {
        let geom = TorusGeometry::standard(n, 8).unwrap();
        let u = bandlimited_noise(&geom, 2, 1.0, seed).unwrap();
        let back = geom.to_physical(geom.spectrum(&u));
        let err = u.axpy(-1.0, &back).sup_abs();
        prop_assert!(err <= 1e-13 * (1.0 + u.sup_abs()));
    }

    #[test]
    fn hessian_is_hermitian_with_zero_mean(n in 1usize..=2, seed in 0u64..1000) {
        let geom = TorusGeometry::standard(n, 8).unwrap();
        let u = bandlimited_noise(&geom, 2, 1.0, seed).unwrap();
        let h = geom.complex_hessian(&u);
        prop_assert!(h.hermitian_deviation() <= 1e-12 * (1.0 + h.sup_norm()));
        for i in 0..n {
            for j in 0..n {
                let mean = h.entry_field(i, j).mean();
                prop_assert!(mean.norm() <= 1e-12 * (1.0 + h.sup_norm()));
            }
        }
    }

    #[test]
    fn z_is_invariant_under_potential_shift(n in 1usize..=2, seed in 0u64..1000, c in 0.2f64..3.0) {
        let geom = TorusGeometry::standard(n, 8).unwrap();
        let base = BaseCurvature::multiple_of_metric(&geom, c);
        let u = normalized_perturbation(&geom, 2, 0.5, seed).unwrap();
        let z0 = compute_z(&base.realized(&geom), &geom).unwrap();
        let z1 = compute_z(&base.curvature(&geom, &u), &geom).unwrap();
        prop_assert!(close(z1, z0, 1e-12));
        // constant F = cω: Z = vol (1 + ic)^n
        let want = Complex64::new(1.0, c).powi(n as i32) * geom.vol();
        prop_assert!(close(z0, want, 1e-12));
    }

    #[test]
    fn norms_are_quadratically_homogeneous(seed in 0u64..1000, s in 0.1f64..5.0) {
        let geom = TorusGeometry::standard(2, 8).unwrap();
        let u = bandlimited_noise(&geom, 2, 1.0, seed).unwrap();
        let a = tensor_norms(&u, &geom);
        let b = tensor_norms(&u.scaled(s), &geom);
        let rel = |x: f64, y: f64| (x - y).abs() <= 1e-11 * (1.0 + x.abs());
        prop_assert!(rel(b.grad_sq_sup(), s * s * a.grad_sq_sup()));
        prop_assert!(rel(b.hess_sup(), s * a.hess_sup()));
        prop_assert!(rel(b.gamma_sup(), s * s * a.gamma_sup()));
    }

    #[test]
    fn q_is_nonnegative(seed in 0u64..1000, k1 in 0.1f64..5.0, k2 in 0.1f64..5.0) {
        let geom = TorusGeometry::standard(1, 16).unwrap();
        let u = bandlimited_noise(&geom, 3, 1.0, seed).unwrap();
        let qcfg = QConfig { k1, k2, base_point: 3 };
        let (q, sup) = q_functional(&u, u.values[3], &qcfg, &geom).unwrap();
        prop_assert!(q.min() >= -1e-12);
        prop_assert!((sup - q.max()).abs() <= 1e-15);
    }

    #[test]
    fn perturbation_is_normalized(seed in 0u64..1000, delta in 1e-3f64..1.0) {
        let geom = TorusGeometry::standard(1, 16).unwrap();
        let u = normalized_perturbation(&geom, 2, delta, seed).unwrap();
        let h = tensor_norms(&u, &geom).hess_sup();
        prop_assert!((h / delta - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn constants_are_stationary(n in 1usize..=2, c in -3.0f64..3.0, shift in -5.0f64..5.0) {
        let geom = TorusGeometry::standard(n, 8).unwrap();
        let problem = FlowProblem {
            base: BaseCurvature::multiple_of_metric(&geom, c),
            hat_theta: n as f64 * c.atan(),
            geometry: geom.clone(),
        };
        let u = geom.zeros().map(|_| shift);
        let s = FlowState::new(&problem, 0.0, u).unwrap();
        prop_assert!(s.udot.sup_abs() <= 1e-14);
    }
}

#[test]
fn quarter_laplacian_of_plane_wave() {
    let geom = TorusGeometry::standard(1, 16).unwrap();
    let u = geom.field_from_fn(|x| (2.0 * x[0] - x[1]).cos());
    let h = geom.complex_hessian(&u);
    for p in 0..geom.num_points() {
        let want = -0.25 * 5.0 * u.values[p];
        assert!((h.entry(p, 0, 0) - Complex64::new(want, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let geom = TorusGeometry::standard(2, 8).unwrap();
    let u = bandlimited_noise(&geom, 2, 1.0, 9).unwrap();
    let path = dir.path().join("u.snap");
    write_snapshot(&u, "u", 1.5, &geom, &path).unwrap();
    let (meta, back) = read_scalar_snapshot(&path, &geom).unwrap();
    assert_eq!(meta.t, 1.5);
    assert_eq!(back.values, u.values);
}

#[test]
fn config_round_trip_preserves_values() {
    let text = r#"{"dimension": 1, "resolution": 32, "hat_theta": 0.5,
        "initial": {"type": "modes", "modes": [{"m": [1, 0], "amplitude": 0.1}]},
        "time": {"t_max": 10, "dt_safety": 0.25}}"#;
    let cfg = parse_config_str(text).unwrap();
    assert_eq!(parse_config_str(&cfg.to_json()).unwrap(), cfg);
    let flow = cfg.flow_config(None).unwrap();
    assert_eq!(flow.hat_theta, 0.5);
    assert_eq!(flow.t_max, 10.0);
}
