use crate::FuncError;
use blockfact::{full_operator, BlockOperator};
use gridspace::{norm, FreqGrid, GridVector, ZeroModePolicy};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use opcore::{dense_matrix, densify, OpError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_2;

/// Cap on the stacked dimension for the dense propagator path; matrix
/// exponentials beyond this are not worth waiting for.
const DENSE_EXP_CAP: usize = 512;

/// Forcing ensemble members for the inhomogeneous Cauchy problem.
#[derive(Clone, Debug)]
pub enum Forcing {
    /// Spatially constant profile, constant in time.
    Constant,
    /// Seeded random frequency profiles, constant in time.
    Random { count: usize },
    /// Seeded random profiles whose global sign flips every step: the
    /// roughest right-hand side a piecewise-constant discretization admits.
    Alternating { count: usize },
}

#[derive(Clone, Debug)]
pub struct MaxRegReport {
    /// Worst ratio (||x'||_p + ||Ax||_p) / ||f||_p over the ensemble.
    pub ratio: f64,
    pub per_forcing: Vec<f64>,
    /// Certified spectral half-angle of the forward operator.
    pub angle: f64,
    pub steps: usize,
    pub t_end: f64,
}

fn eigenvalues_of(sym: &DMatrix<Complex64>) -> Option<Vec<Complex64>> {
    match sym.nrows() {
        1 => Some(vec![sym[(0, 0)]]),
        2 => {
            let tr = sym[(0, 0)] + sym[(1, 1)];
            let det = sym[(0, 0)] * sym[(1, 1)] - sym[(0, 1)] * sym[(1, 0)];
            let disc = (tr * tr - 4.0 * det).sqrt();
            Some(vec![(tr + disc) / 2.0, (tr - disc) / 2.0])
        }
        _ => {
            let schur = nalgebra::linalg::Schur::try_new(sym.clone(), 1e-13, 100_000)?;
            Some(schur.eigenvalues()?.iter().copied().collect())
        }
    }
}

/// Largest |arg| over the spectrum, ignoring eigenvalues that vanish
/// relative to the block scale (those generate constant modes, which the
/// integrator handles exactly).
fn spectral_angle(blocks: &[DMatrix<Complex64>]) -> Result<f64, FuncError> {
    let scale = blocks
        .iter()
        .flat_map(|b| b.iter())
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut angle: f64 = 0.0;
    for b in blocks {
        let eigs = eigenvalues_of(b).ok_or(FuncError::AngleTooLarge { angle: std::f64::consts::PI })?;
        for l in eigs {
            if l.norm() > 1e-12 * scale {
                angle = angle.max(l.arg().abs());
            }
        }
    }
    Ok(angle)
}

/// Matrix exponential by scaling-and-squaring with an order-18 Taylor core;
/// at spectral radius <= 1/4 the truncation sits far below double rounding.
fn expm(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let dim = a.nrows();
    let inf_norm = (0..dim)
        .map(|r| (0..dim).map(|c| a[(r, c)].norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0f64;
    while inf_norm * scale > 0.25 {
        squarings += 1;
        scale *= 0.5;
    }
    let b = a.map(|z| z * scale);
    let mut term = DMatrix::<Complex64>::identity(dim, dim);
    let mut sum = DMatrix::<Complex64>::identity(dim, dim);
    for k in 1..=18u32 {
        term = (&term * &b).map(|z| z / k as f64);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// One-step propagators for x' = -M x + f with f frozen over the step:
/// x_{n+1} = E x_n + P f, where E = e^{-hM} and P = h phi1(-hM). Both come
/// from one augmented exponential, which is exact at defective or zero M.
fn propagators(msym: &DMatrix<Complex64>, h: f64) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let m = msym.nrows();
    let mut aug = DMatrix::<Complex64>::zeros(2 * m, 2 * m);
    for r in 0..m {
        for c in 0..m {
            aug[(r, c)] = -h * msym[(r, c)];
        }
        aug[(r, m + r)] = Complex64::new(1.0, 0.0);
    }
    let e = expm(&aug);
    let big_e = e.view((0, 0), (m, m)).into_owned();
    let big_p = e.view((0, m), (m, m)).into_owned().map(|z| z * h);
    (big_e, big_p)
}

struct TimeLp {
    p: f64,
    h: f64,
    sum: f64,
}

impl TimeLp {
    fn new(p: f64, h: f64) -> Self {
        TimeLp { p, h, sum: 0.0 }
    }

    fn add(&mut self, value: f64) {
        self.sum += self.h * value.powf(self.p);
    }

    fn norm(&self) -> f64 {
        self.sum.powf(1.0 / self.p)
    }
}

/// Discrete maximal-regularity probe: integrates x' = -(block) x + f from
/// x(0) = 0 with the exponential Euler rule and reports the worst ratio
/// (||x'||_{L^p} + ||(block) x||_{L^p}) / ||f||_{L^p} over the forcing
/// ensemble, all three norms taken as step-weighted time sums of the
/// block's own product-space norm.
pub fn maxreg_probe(
    block: &BlockOperator,
    grid: FreqGrid,
    p: f64,
    forcings: &[Forcing],
    t_end: f64,
    steps: usize,
    seed: u64,
) -> Result<MaxRegReport, FuncError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(FuncError::ThetaOutOfRange { theta: p });
    }
    if !(t_end > 0.0 && t_end.is_finite()) || steps < 2 {
        return Err(FuncError::InvalidContour(format!(
            "time window [0, {t_end}] with {steps} steps cannot be integrated"
        )));
    }
    if forcings.is_empty() {
        return Err(FuncError::EmptyEnsemble);
    }
    let full = full_operator(block, grid)?;
    let tag = full.in_tag.clone();
    let comps = tag.components();
    let points = grid.points();
    let h = t_end / steps as f64;

    // Per-mode symbol blocks, or the densified matrix as a single block.
    let (blocks, dense): (Vec<DMatrix<Complex64>>, bool) = if full.has_symbol() {
        (
            grid.modes()
                .map(|flat| full.symbol_at(&grid.xi_at(flat)).expect("has_symbol checked"))
                .collect(),
            false,
        )
    } else {
        let mat = dense_matrix(&full).or_else(|_| densify(&full, grid))?;
        if mat.nrows() > DENSE_EXP_CAP {
            return Err(FuncError::Op(OpError::SizeGuard {
                dim: mat.nrows(),
                cap: DENSE_EXP_CAP,
            }));
        }
        (vec![mat], true)
    };

    let angle = spectral_angle(&blocks)?;
    if angle >= FRAC_PI_2 - 1e-9 {
        return Err(FuncError::AngleTooLarge { angle });
    }

    let props: Vec<(DMatrix<Complex64>, DMatrix<Complex64>)> =
        blocks.iter().map(|b| propagators(b, h)).collect();

    // Forcing profiles as stacked frequency data.
    let projecting =
        tag.is_homogeneous() && tag.zero_mode_policy() == ZeroModePolicy::Project;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles: Vec<(Vec<Complex64>, bool)> = Vec::new();
    for forcing in forcings {
        match forcing {
            Forcing::Constant => {
                let ones = vec![Complex64::new(1.0, 0.0); comps];
                let v = GridVector::constant(grid, &ones);
                profiles.push((v.freq().as_ref().clone(), false));
            }
            Forcing::Random { count } => {
                for _ in 0..*count {
                    let v = if projecting {
                        GridVector::random_mean_free(grid, comps, &mut rng)
                    } else {
                        GridVector::random_freq(grid, comps, &mut rng)
                    };
                    profiles.push((v.freq().as_ref().clone(), false));
                }
            }
            Forcing::Alternating { count } => {
                for _ in 0..*count {
                    let v = if projecting {
                        GridVector::random_mean_free(grid, comps, &mut rng)
                    } else {
                        GridVector::random_freq(grid, comps, &mut rng)
                    };
                    profiles.push((v.freq().as_ref().clone(), true));
                }
            }
        }
    }

    let space_norm = |data: &[Complex64]| -> Result<f64, FuncError> {
        let v = GridVector::from_freq(grid, comps, data.to_vec())?;
        Ok(norm(&v, &tag)?)
    };

    // x and f live as stacked coefficients, component-major like GridVector.
    let mode_of = |flat: usize| -> Vec<usize> { (0..comps).map(|c| c * points + flat).collect() };

    let mut per_forcing = Vec::with_capacity(profiles.len());
    for (profile, alternating) in &profiles {
        let mut x = vec![Complex64::default(); comps * points];
        let mut ax = vec![Complex64::default(); comps * points];
        let mut n_dx = TimeLp::new(p, h);
        let mut n_ax = TimeLp::new(p, h);
        let mut n_f = TimeLp::new(p, h);
        let mut sign = 1.0f64;
        for _ in 0..steps {
            let f_step: Vec<Complex64> = profile.iter().map(|z| z * sign).collect();
            if dense {
                let xv = DVector::from_column_slice(&x);
                let fv = DVector::from_column_slice(&f_step);
                let (e, pr) = &props[0];
                let xn = e * &xv + pr * &fv;
                let axn = &blocks[0] * &xn;
                x.copy_from_slice(xn.as_slice());
                ax.copy_from_slice(axn.as_slice());
            } else {
                for (i, flat) in grid.modes().enumerate() {
                    let idx = mode_of(flat);
                    let xm = DVector::from_iterator(comps, idx.iter().map(|&j| x[j]));
                    let fm = DVector::from_iterator(comps, idx.iter().map(|&j| f_step[j]));
                    let (e, pr) = &props[i];
                    let xn = e * &xm + pr * &fm;
                    let axn = &blocks[i] * &xn;
                    for (row, &j) in idx.iter().enumerate() {
                        x[j] = xn[row];
                        ax[j] = axn[row];
                    }
                }
            }
            let dx: Vec<Complex64> =
                f_step.iter().zip(&ax).map(|(f, a)| f - a).collect();
            n_dx.add(space_norm(&dx)?);
            n_ax.add(space_norm(&ax)?);
            n_f.add(space_norm(&f_step)?);
            if *alternating {
                sign = -sign;
            }
        }
        let denom = n_f.norm();
        if denom <= 1e-300 {
            continue;
        }
        per_forcing.push((n_dx.norm() + n_ax.norm()) / denom);
    }

    if per_forcing.is_empty() {
        return Err(FuncError::EmptyEnsemble);
    }
    let ratio = per_forcing.iter().copied().fold(0.0f64, f64::max);
    Ok(MaxRegReport { ratio, per_forcing, angle, steps, t_end })
}
