mod common;

use common::*;
use funcalc::{
    contour_sum, default_contour, dunford, exp_decay, lookup, phi, zeta, Contour, FuncError,
    TestFunctionFamily,
};
use gridspace::{make_grid, norm, GridVector};
use num_complex::Complex64;
use opcore::{apply, dense_matrix, operator_norm};
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

#[test]
fn scalar_phi_matches_closed_form() {
    let grid = make_grid(1, 8).unwrap();
    let tag = l2tag();
    let op = scalar_dense(2.0, &tag);
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    let res = dunford(&op, grid, 0.0, &phi(), &ct).unwrap();
    let m = dense_matrix(&res.op).unwrap();
    // phi(2) = 2 / (1+2)^2 = 2/9
    assert!((m[(0, 0)] - c(2.0 / 9.0, 0.0)).norm() <= 1e-6);
    assert!(res.error_estimate.is_finite() && res.error_estimate > 0.0);
}

#[test]
fn default_contour_follows_operator_scale() {
    let grid = make_grid(1, 64).unwrap();
    let op = one_minus_lap(&l2tag());
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    // symbol range on the 64-point grid is [1, 1 + 32^2]
    assert_eq!(ct.nodes_per_ray(), 400);
    assert!((ct.r_min() / 1e-6 - 1.0).abs() <= 1e-12);
    assert!((ct.r_max() / (1025.0 * 1e6) - 1.0).abs() <= 1e-12);
    assert!(ct.theta() > 0.0 && ct.theta() < 2.5);
}

#[test]
fn multiplier_phi_matches_per_mode_oracle() {
    let grid = make_grid(1, 64).unwrap();
    let tag = l2tag();
    let op = one_minus_lap(&tag);
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    let res = dunford(&op, grid, 0.0, &phi(), &ct).unwrap();
    let f = phi();
    let oracle =
        opcore::OperatorHandle::scalar_multiplier("oracle", tag.clone(), tag.clone(), 0.0, move |xi| {
            f.eval(c(1.0 + abs2(xi), 0.0))
        });
    let diff = res.op.clone().sum(oracle.scaled(c(-1.0, 0.0)));
    let gap = operator_norm(&diff, grid, &tag, &tag).unwrap().0;
    assert!(gap <= 1e-6, "oracle gap {gap}");
}

#[test]
fn results_are_contour_angle_independent() {
    let grid = make_grid(1, 64).unwrap();
    let tag = l2tag();
    let op = one_minus_lap(&tag);
    let ct1 = default_contour(&op, grid, 0.0, 2.5).unwrap();
    let ct2 = Contour::new(1.1, ct1.r_min(), ct1.r_max(), 400).unwrap();
    let r1 = dunford(&op, grid, 0.0, &phi(), &ct1).unwrap();
    let r2 = dunford(&op, grid, 0.0, &phi(), &ct2).unwrap();
    let gap = operator_norm(
        &r1.op.clone().sum(r2.op.clone().scaled(c(-1.0, 0.0))),
        grid,
        &tag,
        &tag,
    )
    .unwrap()
    .0;
    assert!(
        gap <= r1.error_estimate + r2.error_estimate,
        "gap {gap} exceeds summed estimates {}",
        r1.error_estimate + r2.error_estimate
    );
}

#[test]
fn refining_the_rule_moves_the_result_less_than_the_estimate() {
    let grid = make_grid(1, 64).unwrap();
    let op = one_minus_lap(&l2tag());
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    let base = dunford(&op, grid, 0.0, &phi(), &ct).unwrap();
    let refined = dunford(&op, grid, 0.0, &phi(), &ct.refined()).unwrap();
    assert!(refined.doubling_delta <= base.error_estimate);
}

#[test]
fn contour_angle_outside_function_sector_is_refused() {
    let grid = make_grid(1, 8).unwrap();
    let op = one_minus_lap(&l2tag());
    // exp_decay is bounded only up to pi/2; a contour at angle 2.0 leaves
    // its sector.
    let ct = Contour::new(2.0, 1e-6, 1e6, 64).unwrap();
    match dunford(&op, grid, 0.0, &exp_decay(1.0), &ct) {
        Err(FuncError::AngleOutsideWindow { .. }) => {}
        other => panic!("expected window rejection, got {other:?}"),
    }
}

#[test]
fn spectrum_on_the_contour_is_reported_as_nonconvergent() {
    let grid = make_grid(1, 8).unwrap();
    let tag = l2tag();
    let on_ray = Complex64::from_polar(1.0, FRAC_PI_4);
    let op = opcore::OperatorHandle::dense(
        "on_ray",
        nalgebra::DMatrix::from_element(1, 1, on_ray),
        tag.clone(),
        tag,
    );
    let ct = Contour::new(FRAC_PI_4, 1e-6, 1e6, 400).unwrap();
    match dunford(&op, grid, 0.5, &phi(), &ct) {
        Err(FuncError::NonConvergent { .. }) => {}
        other => panic!("expected nonconvergent gate, got {other:?}"),
    }
}

#[test]
fn invalid_contours_are_rejected() {
    assert!(matches!(
        Contour::new(0.0, 1e-6, 1e6, 64),
        Err(FuncError::InvalidContour(_))
    ));
    assert!(matches!(
        Contour::new(1.0, 1e6, 1e-6, 64),
        Err(FuncError::InvalidContour(_))
    ));
    assert!(matches!(
        Contour::new(1.0, 1e-6, 1e6, 1),
        Err(FuncError::InvalidContour(_))
    ));
}

#[test]
fn halving_node_spacing_gains_at_least_a_factor_four() {
    let grid = make_grid(1, 8).unwrap();
    let tag = l2tag();
    let diag = [1.0, 3.0, 10.0];
    let mut m = nalgebra::DMatrix::<Complex64>::zeros(3, 3);
    for (i, d) in diag.iter().enumerate() {
        m[(i, i)] = c(*d, 0.0);
    }
    let op = opcore::OperatorHandle::dense("diag3", m, tag.clone(), tag);
    let f = phi();
    let oracle: Vec<f64> = diag.iter().map(|d| f.eval(c(*d, 0.0)).re).collect();
    let worst_err = |h: &opcore::OperatorHandle| {
        let mat = dense_matrix(h).unwrap();
        (0..3)
            .map(|i| (mat[(i, i)] - c(oracle[i], 0.0)).norm())
            .fold(0.0f64, f64::max)
    };
    // Truncation wide enough that node density is the dominant error until
    // well past these counts; 40 -> 79 -> 157 halves the log-spacing twice.
    let mut errs = Vec::new();
    for nodes in [40usize, 79, 157] {
        let ct = Contour::new(FRAC_PI_4, 1e-6, 1e8, nodes).unwrap();
        errs.push(worst_err(&contour_sum(&op, grid, &f, &ct).unwrap()));
    }
    assert!(errs[0] / errs[1] >= 4.0, "first halving gained {}", errs[0] / errs[1]);
    assert!(errs[1] / errs[2] >= 4.0, "second halving gained {}", errs[1] / errs[2]);
}

#[test]
fn calculus_is_multiplicative_on_a_normal_operator() {
    let grid = make_grid(1, 64).unwrap();
    let tag = l2tag();
    let op = one_minus_lap(&tag);
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    let f1 = dunford(&op, grid, 0.0, &phi(), &ct).unwrap();
    let f2 = dunford(&op, grid, 0.0, &phi().squared(), &ct).unwrap();
    let n1 = operator_norm(&f1.op, grid, &tag, &tag).unwrap().0;
    let prod = f1.op.clone().compose(f1.op.clone());
    let gap = operator_norm(
        &prod.sum(f2.op.clone().scaled(c(-1.0, 0.0))),
        grid,
        &tag,
        &tag,
    )
    .unwrap()
    .0;
    // |F1^2 - F2| <= |F1^2 - f1(T)^2| + |f1(T)^2 - f2(T)| with the first
    // term bounded through (F1 - f1)(F1 + f1); factor 2 covers the cross
    // terms both ways.
    let budget = 2.0 * (f2.error_estimate + f1.error_estimate * (2.0 * n1 + f1.error_estimate));
    assert!(gap <= budget, "gap {gap} exceeds budget {budget}");
}

#[test]
fn resolvent_difference_approximants_converge_monotonically() {
    let grid = make_grid(1, 64).unwrap();
    let tag = l2tag();
    let op = one_minus_lap(&tag);
    let mut v = vec![Complex64::default(); 64];
    for flat in grid.modes() {
        let k = grid.k_at(flat)[0] as f64;
        v[flat] = c((-k * k / 16.0).exp(), 0.0);
    }
    let vv = GridVector::from_freq(grid, 1, v.clone()).unwrap();

    let mut norms = Vec::new();
    let mut gaps = Vec::new();
    for n in [1u32, 2, 4, 8, 16, 32, 64] {
        let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
        let res = dunford(&op, grid, 0.0, &zeta(n), &ct).unwrap();
        let on = operator_norm(&res.op, grid, &tag, &tag).unwrap().0;
        // On [1, inf) the symbol of zeta_n peaks at 1 with value (n-1)/(n+1).
        let peak = (n as f64 - 1.0) / (n as f64 + 1.0);
        assert!((on - peak).abs() <= 1e-6, "zeta_{n} norm {on} vs {peak}");
        assert!(on <= 1.0 + 1e-9);
        norms.push(on);
        let w = apply(&res.op, &vv).unwrap();
        let diff: Vec<Complex64> = w.freq().iter().zip(v.iter()).map(|(a, b)| a - b).collect();
        gaps.push(norm(&GridVector::from_freq(grid, 1, diff).unwrap(), &tag).unwrap());
    }
    for pair in gaps.windows(2) {
        assert!(pair[1] < pair[0], "approximation error must shrink: {gaps:?}");
    }
    for pair in norms.windows(2) {
        assert!(pair[1] >= pair[0]);
    }
}

#[test]
fn registry_resolves_every_documented_key() {
    for key in [
        "phi",
        "zeta_n(4)",
        "power(0.25)",
        "exp_decay(2)",
        "blaschke(1.5)",
        "comb(3)",
    ] {
        let f = lookup(key).unwrap();
        // round-trip: the resolved function's name is a valid key again
        assert_eq!(lookup(f.name()).unwrap().name(), f.name());
    }
    assert!(matches!(
        lookup("wavelet(3)"),
        Err(FuncError::UnknownFunction { .. })
    ));
    assert!(matches!(
        lookup("power(0)"),
        Err(FuncError::UnknownFunction { .. })
    ));
    assert!(matches!(
        lookup("comb(0)"),
        Err(FuncError::UnknownFunction { .. })
    ));
}

#[test]
fn family_rejects_members_whose_sector_is_too_narrow() {
    let mut fam = TestFunctionFamily::new(2.0).unwrap();
    match fam.push(exp_decay(1.0)) {
        Err(FuncError::ApertureTooWide { .. }) => {}
        other => panic!("expected aperture rejection, got {other:?}"),
    }
    assert!(fam.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // zeta_1(z) = 1/(1+z) - 1/(1+z) vanishes identically
    #[test]
    fn zeta_one_is_identically_zero(logr in -6.0f64..6.0, arg in -1.4f64..1.4) {
        let z = Complex64::from_polar(10f64.powf(logr), arg);
        prop_assert!(zeta(1).eval(z).norm() <= 1e-14);
    }

    // every standard member decays at both ends of the sector
    #[test]
    fn standard_members_decay_at_both_ends(arg in -1.4f64..1.4) {
        let fam = TestFunctionFamily::standard(FRAC_PI_2).unwrap();
        for f in fam.members() {
            let near = f.eval(Complex64::from_polar(1e-9, arg)).norm();
            let far = f.eval(Complex64::from_polar(1e9, arg)).norm();
            prop_assert!(near <= 1e-2, "{} near origin: {near}", f.name());
            prop_assert!(far <= 1e-2, "{} near infinity: {far}", f.name());
        }
    }
}
