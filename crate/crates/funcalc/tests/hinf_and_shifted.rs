mod common;

use common::*;
use funcalc::{
    default_contour, hinf_bound, lookup, phi, shifted_calculus_residual, Contour, FuncError,
    TestFunctionFamily,
};
use gridspace::make_grid;
use num_complex::Complex64;
use opcore::OperatorHandle;
use std::f64::consts::FRAC_PI_2;

#[test]
fn identity_operator_stays_below_the_sup_norm() {
    let grid = make_grid(1, 8).unwrap();
    let ident = OperatorHandle::identity(l2tag());
    let fam = TestFunctionFamily::standard(FRAC_PI_2).unwrap();
    let ct = default_contour(&ident, grid, 0.0, fam.psi()).unwrap();
    let rep = hinf_bound(&ident, grid, 0.0, &fam, &ct).unwrap();
    // every member contributes |f(1)| / sup |f|
    assert!(rep.value <= 1.0, "identity value {}", rep.value);
    assert!((rep.value - 0.831557).abs() <= 1e-3);
    assert_eq!(rep.members.len(), fam.len());
}

#[test]
fn self_adjoint_operator_saturates_at_most_the_spectral_bound() {
    let grid = make_grid(1, 8).unwrap();
    let tag = l2tag();
    let diag = [0.5, 1.0, 2.0, 5.0, 9.0, 17.0, 33.0, 120.0];
    let mut m = nalgebra::DMatrix::<Complex64>::zeros(8, 8);
    for (i, d) in diag.iter().enumerate() {
        m[(i, i)] = c(*d, 0.0);
    }
    let op = OperatorHandle::dense("sa", m, tag.clone(), tag);
    let fam = TestFunctionFamily::standard(FRAC_PI_2).unwrap();
    let ct = default_contour(&op, grid, 0.0, fam.psi()).unwrap();
    let rep = hinf_bound(&op, grid, 0.0, &fam, &ct).unwrap();
    // spectral theorem: |f(T)| = max |f(spec)| <= sup |f|, so the reported
    // lower bound cannot exceed 1 beyond quadrature noise
    assert!(rep.value <= 1.0 + 2e-3, "self-adjoint value {}", rep.value);
    assert!((rep.value - 0.838076).abs() <= 1e-3);
    for mb in &rep.members {
        assert!(mb.hinf_norm > 0.0 && mb.op_norm >= 0.0);
        assert!(mb.ratio <= 1.0 + 2e-3, "{} ratio {}", mb.name, mb.ratio);
    }
}

#[test]
fn reported_value_is_monotone_under_family_growth() {
    let grid = make_grid(1, 8).unwrap();
    let tag = l2tag();
    let op = OperatorHandle::dense("cb8", summing_matrix(8, 4.0), tag.clone(), tag);
    let ct = {
        let base = default_contour(&op, grid, 0.0, FRAC_PI_2).unwrap();
        Contour::new(base.theta(), base.r_min(), base.r_max(), 600).unwrap()
    };
    let small = TestFunctionFamily::lacunary(FRAC_PI_2, &[1, 2]).unwrap();
    let large = TestFunctionFamily::lacunary(FRAC_PI_2, &[1, 2, 4, 8]).unwrap();
    let v_small = hinf_bound(&op, grid, 0.0, &small, &ct).unwrap().value;
    let v_large = hinf_bound(&op, grid, 0.0, &large, &ct).unwrap().value;
    assert!(v_large >= v_small, "family growth lowered the value: {v_small} -> {v_large}");
}

#[test]
fn empty_family_is_rejected() {
    let grid = make_grid(1, 8).unwrap();
    let ident = OperatorHandle::identity(l2tag());
    let fam = TestFunctionFamily::new(FRAC_PI_2).unwrap();
    let ct = default_contour(&ident, grid, 0.0, FRAC_PI_2).unwrap();
    match hinf_bound(&ident, grid, 0.0, &fam, &ct) {
        Err(FuncError::EmptyFamily) => {}
        other => panic!("expected empty-family rejection, got {other:?}"),
    }
}

// A diagonalizable operator whose eigenbasis is the summing basis: spectral
// projections have norms growing with dimension, so the calculus constant
// measured through scale-spanning combs grows while each member stays
// uniformly bounded on the sector.
#[test]
fn non_orthogonal_spectral_projections_make_the_constant_grow() {
    let grid = make_grid(1, 8).unwrap();
    let tag = l2tag();
    let rho = 4.0;
    let mut values = Vec::new();
    for dim in [4usize, 16, 64] {
        let op = OperatorHandle::dense(
            format!("cb{dim}"),
            summing_matrix(dim, rho),
            tag.clone(),
            tag.clone(),
        );
        // deep combs probe all scales at once; one member per size keeps
        // the contour work proportionate
        let fam = TestFunctionFamily::lacunary(FRAC_PI_2, &[dim as u32]).unwrap();
        let base = default_contour(&op, grid, 0.0, fam.psi()).unwrap();
        // the spectral range spans rho^dim, so the rule needs more nodes
        // than the default to keep the doubling check clean
        let nodes = 400.max(20 * dim);
        let ct = Contour::new(base.theta(), base.r_min(), base.r_max(), nodes).unwrap();
        let rep = hinf_bound(&op, grid, 0.0, &fam, &ct).unwrap();
        let member = &rep.members[0];
        // exact oracle: f(T) = S diag(f(rho^k)) S^{-1} in closed form
        let oracle = summing_calculus_oracle(dim, rho, &lookup(&member.name).unwrap());
        let tol = (3.0 * member.error_estimate).max(1e-2 * oracle);
        assert!(
            (member.op_norm - oracle).abs() <= tol,
            "dim {dim}: quadrature {} vs closed form {oracle}",
            member.op_norm
        );
        values.push(rep.value);
    }
    assert!(values[0] < values[1] && values[1] < values[2], "no growth: {values:?}");
    assert!(
        values[2] >= 3.0 * values[0],
        "growth too weak: {values:?} (measured about 0.60 -> 1.20 -> 3.57)"
    );
}

#[test]
fn member_failures_carry_the_offending_name() {
    let grid = make_grid(1, 8).unwrap();
    let tag = l2tag();
    // spectrum sitting on the integration ray poisons every member
    let on_ray = Complex64::from_polar(1.0, 0.75);
    let op = OperatorHandle::dense(
        "on_ray",
        nalgebra::DMatrix::from_element(1, 1, on_ray),
        tag.clone(),
        tag,
    );
    let fam = TestFunctionFamily::standard(FRAC_PI_2).unwrap();
    let ct = Contour::new(0.75, 1e-6, 1e6, 400).unwrap();
    match hinf_bound(&op, grid, 0.5, &fam, &ct) {
        Err(FuncError::MemberFailed { name, .. }) => {
            assert!(fam.members().iter().any(|f| f.name() == name));
        }
        other => panic!("expected a tagged member failure, got {other:?}"),
    }
}

#[test]
fn scalar_shift_identity_matches_arithmetic() {
    let grid = make_grid(1, 8).unwrap();
    let tag = l2tag();
    let op = scalar_dense(1.0, &tag);
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    let res = shifted_calculus_residual(&op, grid, 0.0, 1.0, &phi(), &ct).unwrap();
    // phi(1) - phi(2) = 1/4 - 2/9 = 1/36
    assert!(
        (res.scaled_norm - 1.0 / 36.0).abs() <= 1e-6,
        "scaled residual {}",
        res.scaled_norm
    );
    assert!(res.identity_gap <= 1e-6);
}

#[test]
fn shift_identity_holds_per_mode() {
    let grid = make_grid(1, 64).unwrap();
    let op = one_minus_lap(&l2tag());
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    let res = shifted_calculus_residual(&op, grid, 0.0, 1.0, &phi(), &ct).unwrap();
    assert!(res.identity_gap <= 1e-6, "identity gap {}", res.identity_gap);
    assert!(res.r_norm.is_finite() && res.r_norm > 0.0);
}

#[test]
fn zero_shift_degenerates_to_zero() {
    let grid = make_grid(1, 64).unwrap();
    let op = one_minus_lap(&l2tag());
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    let res = shifted_calculus_residual(&op, grid, 0.0, 0.0, &phi(), &ct).unwrap();
    assert_eq!(res.scaled_norm, 0.0);
    assert!(res.identity_gap <= 1e-9);
}

#[test]
fn shift_requires_an_invertible_base() {
    let grid = make_grid(1, 64).unwrap();
    let tag = l2tag();
    // plain Laplacian: 0 sits in the spectrum at the zero mode
    let lap = OperatorHandle::scalar_multiplier("lap", tag.clone(), tag.clone(), 2.0, |xi| {
        c(abs2(xi), 0.0)
    });
    let ct = Contour::new(1.2, 1e-6, 1e9, 400).unwrap();
    match shifted_calculus_residual(&lap, grid, 0.0, 1.0, &phi(), &ct) {
        Err(FuncError::BaseNotInvertible { .. }) => {}
        other => panic!("expected invertibility rejection, got {other:?}"),
    }
}

#[test]
fn negative_shift_is_rejected() {
    let grid = make_grid(1, 8).unwrap();
    let op = scalar_dense(1.0, &l2tag());
    let ct = default_contour(&op, grid, 0.0, 2.5).unwrap();
    match shifted_calculus_residual(&op, grid, 0.0, -1.0, &phi(), &ct) {
        Err(FuncError::ThetaOutOfRange { .. }) => {}
        other => panic!("expected parameter rejection, got {other:?}"),
    }
}
