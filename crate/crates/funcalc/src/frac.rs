use crate::quad::sigma_max_of;
use crate::FuncError;
use blockfact::{diagonal_part, full_operator, BlockOperator};
use gridspace::{norm, FreqGrid, GridVector, ZeroModePolicy};
use nalgebra::DMatrix;
use num_complex::Complex64;
use opcore::{apply, dense_matrix, densify, MultiplierOp, OpError, OpKind, OperatorHandle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Sampled two-sided comparison of the homogeneous fractional domains of a
/// block operator and its diagonal part.
#[derive(Clone, Copy, Debug)]
pub struct FracBracket {
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
}

fn off_cut(z: Complex64, scale: f64) -> bool {
    !(z.im.abs() <= 1e-14 * scale.max(1e-300) && z.re <= 0.0) && z.norm() > 0.0
}

fn principal_power(z: Complex64, gamma: f64) -> Complex64 {
    z.powf(gamma)
}

/// Power of a general 2x2 block: Lagrange interpolation on the two
/// eigenvalues, or the first-order Jordan formula when they collide.
fn two_by_two_power(
    sym: &DMatrix<Complex64>,
    gamma: f64,
    k: [i64; 3],
    zero_to_zero: bool,
) -> Result<DMatrix<Complex64>, FuncError> {
    let scale = sym.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if scale == 0.0 {
        // A vanishing block only appears at a projected zero mode, where
        // extension by zero is the canonical choice for every exponent.
        if zero_to_zero {
            return Ok(DMatrix::zeros(2, 2));
        }
        return Err(FuncError::Op(OpError::BranchCut { k, value: Complex64::default() }));
    }
    let tr = sym[(0, 0)] + sym[(1, 1)];
    let det = sym[(0, 0)] * sym[(1, 1)] - sym[(0, 1)] * sym[(1, 0)];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let l1 = (tr + disc) / 2.0;
    let l2 = (tr - disc) / 2.0;
    for l in [l1, l2] {
        if !off_cut(l, scale) {
            return Err(FuncError::Op(OpError::BranchCut { k, value: l }));
        }
    }
    let eye = DMatrix::<Complex64>::identity(2, 2);
    if (l1 - l2).norm() > 1e-8 * scale {
        let p1 = principal_power(l1, gamma);
        let p2 = principal_power(l2, gamma);
        let n1 = sym - eye.map(|e| e * l2);
        let n2 = sym - eye.map(|e| e * l1);
        Ok(n1.map(|z| z * p1 / (l1 - l2)) + n2.map(|z| z * p2 / (l2 - l1)))
    } else {
        let l = (l1 + l2) / 2.0;
        let p = principal_power(l, gamma);
        let dp = principal_power(l, gamma - 1.0) * gamma;
        Ok(eye.map(|e| e * p) + (sym - eye.map(|e| e * l)).map(|z| z * dp))
    }
}

/// Balakrishnan integral for a dense matrix: A^gamma with gamma in (0, 1)
/// via sin(pi gamma)/pi * int t^{gamma-1} (t+A)^{-1} A dt, and the mirrored
/// formula for gamma in (-1, 0). Log-trapezoid rule, geometric convergence.
fn balakrishnan(mat: &DMatrix<Complex64>, gamma: f64) -> Result<DMatrix<Complex64>, FuncError> {
    if !(gamma.abs() < 1.0 && gamma != 0.0) {
        return Err(FuncError::ThetaOutOfRange { theta: gamma });
    }
    let dim = mat.nrows();
    let hi = sigma_max_of(mat).max(1e-300);
    let positive = gamma > 0.0;
    let s = gamma.abs();
    if !positive {
        // Negative powers need an invertible base.
        let sv = if dim <= 512 {
            mat.clone().svd(false, false).singular_values.iter().fold(f64::INFINITY, |a, x| a.min(*x))
        } else if mat.clone().try_inverse().is_some() {
            hi * 1e-6
        } else {
            0.0
        };
        if sv <= hi * 1e-14 {
            return Err(FuncError::BaseNotInvertible { sigma_min: sv });
        }
    }
    let (t_min, t_max, n) = (1e-9 * hi, 1e9 * hi, 700usize);
    let h = (t_max / t_min).ln() / (n - 1) as f64;
    let mut sum = DMatrix::<Complex64>::zeros(dim, dim);
    for j in 0..n {
        let t = t_min * (h * j as f64).exp();
        let w = if j == 0 || j == n - 1 { 0.5 * h * t } else { h * t };
        let mut shifted = mat.clone();
        for i in 0..dim {
            shifted[(i, i)] += Complex64::new(t, 0.0);
        }
        let inv = shifted.try_inverse().ok_or(FuncError::Op(OpError::BranchCut {
            k: [0, 0, 0],
            value: Complex64::new(-t, 0.0),
        }))?;
        let factor = if positive { t.powf(gamma - 1.0) } else { t.powf(-s) };
        let term = if positive { inv * mat } else { inv };
        sum += term.map(|z| z * (w * factor));
    }
    let front = Complex64::new((PI * s).sin() / PI, 0.0);
    Ok(sum.map(|z| z * front))
}

/// Fractional power T^gamma. Normal symbols and Hermitian dense blocks use
/// the eager pointwise path; non-normal 2x2 symbols get the eigenvalue
/// interpolation formula, and everything else goes through the Balakrishnan
/// integral on a densified matrix (|gamma| < 1 there).
pub fn frac_power(
    op: &OperatorHandle,
    grid: FreqGrid,
    gamma: f64,
) -> Result<OperatorHandle, FuncError> {
    match opcore::fractional_power(op, gamma, grid) {
        Ok(h) => Ok(h),
        Err(OpError::NonNormalSymbol { .. }) => {
            if op.has_symbol() && op.in_components() == 2 {
                let projecting = op.in_tag.is_homogeneous()
                    && op.in_tag.zero_mode_policy() == ZeroModePolicy::Project;
                let stride = 4;
                let mut table = vec![Complex64::default(); grid.points() * stride];
                for flat in grid.modes() {
                    let sym = op.symbol_at(&grid.xi_at(flat)).expect("has_symbol checked");
                    let zero_ok = projecting && flat == grid.zero_mode();
                    let powered = two_by_two_power(&sym, gamma, grid.k_at(flat), zero_ok)?;
                    for r in 0..2 {
                        for c in 0..2 {
                            table[flat * stride + r * 2 + c] = powered[(r, c)];
                        }
                    }
                }
                let base = op.clone();
                let fallback = move |xi: &[f64; 3]| {
                    let sym = base.symbol_at(xi).expect("symbol available by construction");
                    two_by_two_power(&sym, gamma, [0, 0, 0], false).unwrap_or_else(|_| {
                        DMatrix::from_element(2, 2, Complex64::new(f64::NAN, 0.0))
                    })
                };
                let mult = MultiplierOp::from_table(grid, 2, 2, table, fallback);
                Ok(OperatorHandle {
                    kind: OpKind::Multiplier(mult),
                    in_tag: op.in_tag.clone(),
                    out_tag: op.out_tag.clone(),
                    order: op.order * gamma,
                    name: format!("{}^{gamma}", op.name),
                })
            } else {
                let mat = dense_matrix(op).or_else(|_| densify(op, grid))?;
                let powered = balakrishnan(&mat, gamma)?;
                Ok(OperatorHandle::dense(
                    format!("{}^{gamma}", op.name),
                    powered,
                    op.in_tag.clone(),
                    op.out_tag.clone(),
                ))
            }
        }
        Err(e) => Err(e.into()),
    }
}

/// Compares || (full block)^theta v || against || (diagonal part)^theta v ||
/// over seeded random samples, in the block's own product norm. The returned
/// bracket certifies two-sided comparability of the homogeneous fractional
/// domains on the sampled span.
pub fn frac_domain_equivalence(
    block: &BlockOperator,
    grid: FreqGrid,
    theta: f64,
    samples: usize,
    seed: u64,
) -> Result<FracBracket, FuncError> {
    if !(theta > -0.5 && theta < 1.0) {
        return Err(FuncError::ThetaOutOfRange { theta });
    }
    let full = full_operator(block, grid)?;
    let tag = full.in_tag.clone();
    if theta < 0.0 && tag.p() != 2.0 {
        return Err(FuncError::NegativeThetaNotHilbert { theta, p: tag.p() });
    }
    let diag = full_operator(&diagonal_part(block), grid)?;
    let a_pow = frac_power(&full, grid, theta)?;
    let d_pow = frac_power(&diag, grid, theta)?;

    let projecting =
        tag.is_homogeneous() && tag.zero_mode_policy() == ZeroModePolicy::Project;
    let comps = tag.components();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = f64::INFINITY;
    let mut upper: f64 = 0.0;
    let mut used = 0usize;
    for _ in 0..samples.max(1) {
        let v = if projecting {
            GridVector::random_mean_free(grid, comps, &mut rng)
        } else {
            GridVector::random_freq(grid, comps, &mut rng)
        };
        let num = norm(&apply(&a_pow, &v)?, &tag)?;
        let den = norm(&apply(&d_pow, &v)?, &tag)?;
        if den <= 1e-300 {
            continue;
        }
        let ratio = num / den;
        lower = lower.min(ratio);
        upper = upper.max(ratio);
        used += 1;
    }
    if used == 0 {
        return Err(FuncError::EmptyEnsemble);
    }
    Ok(FracBracket { lower, upper, samples: used })
}
