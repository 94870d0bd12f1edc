#![allow(dead_code)]

use blockfact::{assemble_block, BlockOperator};
use gridspace::{make_grid, FreqGrid, SpaceTag, ZeroModePolicy};
use nalgebra::DMatrix;
use num_complex::Complex64;
use opcore::OperatorHandle;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn abs2(xi: &[f64; 3]) -> f64 {
    xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]
}

pub fn l2tag() -> SpaceTag {
    SpaceTag::new(0.0, 2.0)
}

pub fn one_minus_lap(tag: &SpaceTag) -> OperatorHandle {
    OperatorHandle::scalar_multiplier("one_minus_lap", tag.clone(), tag.clone(), 2.0, |xi| {
        c(1.0 + abs2(xi), 0.0)
    })
}

pub fn scalar_dense(value: f64, tag: &SpaceTag) -> OperatorHandle {
    OperatorHandle::dense(
        format!("diag({value})"),
        DMatrix::from_element(1, 1, c(value, 0.0)),
        tag.clone(),
        tag.clone(),
    )
}

/// Convective coupling block: momentum-like first row, transported scalar in
/// the second, with antisymmetric first-order exchange. Per mode the full
/// symbol is xi^2 (I + N) with N^2 = -I, so its eigenvalues are xi^2 (1 +- i).
pub fn convective_block(n: usize) -> (BlockOperator, FreqGrid) {
    let grid = make_grid(1, n).unwrap();
    let x1 = SpaceTag::homogeneous(-1.0, 2.0, ZeroModePolicy::Project);
    let x2 = SpaceTag::homogeneous(0.0, 2.0, ZeroModePolicy::Project);
    let a = OperatorHandle::scalar_multiplier("A", x1.clone(), x1.clone(), 2.0, |xi| {
        c(abs2(xi), 0.0)
    });
    let b = OperatorHandle::scalar_multiplier("B", x2.clone(), x1.clone(), 3.0, |xi| {
        c(0.0, -abs2(xi) * xi[0])
    });
    let cc =
        OperatorHandle::scalar_multiplier("C", x1.clone(), x2.clone(), 1.0, |xi| c(0.0, -xi[0]));
    let d = OperatorHandle::scalar_multiplier("D", x2.clone(), x2.clone(), 2.0, |xi| {
        c(abs2(xi), 0.0)
    });
    (assemble_block("convective", a, b, cc, d, x1, x2).unwrap(), grid)
}

/// T = S diag(rho^k) S^{-1} with S the upper-triangular ones matrix (the
/// summing basis written in coordinates). Column l carries rho^l on the
/// diagonal and rho^l - rho^{l-1} in every entry above it, so f(T) has the
/// same shape with f(rho^k) in place of rho^k: an exact calculus oracle for
/// a non-normal operator whose spectral projections are far from orthogonal.
pub fn summing_matrix(dim: usize, rho: f64) -> DMatrix<Complex64> {
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for l in 0..dim {
        let lam = rho.powi(l as i32);
        m[(l, l)] = c(lam, 0.0);
        if l > 0 {
            let step = lam - rho.powi(l as i32 - 1);
            for j in 0..l {
                m[(j, l)] = c(step, 0.0);
            }
        }
    }
    m
}

pub fn summing_calculus_oracle(dim: usize, rho: f64, f: &funcalc::FunctionSpec) -> f64 {
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    let mut prev = Complex64::default();
    for l in 0..dim {
        let fl = f.eval(c(rho.powi(l as i32), 0.0));
        m[(l, l)] = fl;
        for j in 0..l {
            m[(j, l)] = fl - prev;
        }
        prev = fl;
    }
    m.svd(false, false).singular_values[0]
}
