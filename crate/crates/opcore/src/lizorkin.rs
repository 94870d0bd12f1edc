use crate::norms::sigma_max;
use crate::{OpError, OperatorHandle};
use gridspace::{make_grid, FreqGrid};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Finite-difference step for the symbol derivatives. Half the minimal
/// lattice spacing, so sample points stay well separated from each other.
const DIFF_STEP: f64 = 0.25;

/// Relative agreement between the last two refinements for `stable`.
const STABLE_TOL: f64 = 0.05;

/// Mixed-derivative smoothness certificate for a multiplier symbol:
/// sup over the lattice of |xi^alpha| * ||D^alpha m(xi)|| for every
/// alpha in {0,1}^d, evaluated on a sequence of refinements.
#[derive(Debug, Clone)]
pub struct SymbolCertificate {
    /// alpha = 0 term on the finest grid: plain sup of the symbol norm.
    pub sup_bound: f64,
    /// Max over all alpha on the finest grid.
    pub lizorkin_bound: f64,
    /// Per-alpha values on the finest grid.
    pub per_alpha: Vec<([usize; 3], f64)>,
    /// (n, lizorkin bound) per refinement, in the order given.
    pub refinements: Vec<(usize, f64)>,
    /// True when the last two refinements agree to 5% relative.
    pub stable: bool,
}

fn central_diff(
    op: &OperatorHandle,
    xi: &[f64; 3],
    alpha: &[usize; 3],
    axis: usize,
) -> DMatrix<Complex64> {
    if axis == 3 {
        return op.symbol_at(xi).expect("caller checked has_symbol");
    }
    if alpha[axis] == 0 {
        return central_diff(op, xi, alpha, axis + 1);
    }
    let mut plus = *xi;
    plus[axis] += DIFF_STEP;
    let mut minus = *xi;
    minus[axis] -= DIFF_STEP;
    let num = central_diff(op, &plus, alpha, axis + 1) - central_diff(op, &minus, alpha, axis + 1);
    num.map(|z| z / Complex64::new(2.0 * DIFF_STEP, 0.0))
}

fn alphas(d: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for mask in 0..(1usize << d) {
        let mut a = [0usize; 3];
        for (axis, slot) in a.iter_mut().enumerate().take(d) {
            *slot = (mask >> axis) & 1;
        }
        out.push(a);
    }
    out
}

fn alpha_values(op: &OperatorHandle, grid: FreqGrid, d: usize) -> Vec<([usize; 3], f64)> {
    alphas(d)
        .into_iter()
        .map(|alpha| {
            let mut sup = 0.0f64;
            for flat in grid.modes() {
                let xi = grid.xi_at(flat);
                let monomial: f64 = (0..d)
                    .filter(|axis| alpha[*axis] == 1)
                    .map(|axis| xi[axis].abs())
                    .product();
                if monomial == 0.0 && alpha.iter().any(|a| *a == 1) {
                    continue;
                }
                let deriv = central_diff(op, &xi, &alpha, 0);
                sup = sup.max(monomial * sigma_max(&deriv));
            }
            (alpha, sup)
        })
        .collect()
}

/// Evaluates the certificate on each refinement `n` of a d-dimensional grid.
/// Refinements are nested lattices, so each bound is nondecreasing along the
/// sequence; `stable` records whether the last two agree to 5%.
pub fn lizorkin_certificate(
    op: &OperatorHandle,
    d: usize,
    refinements: &[usize],
) -> Result<SymbolCertificate, OpError> {
    if !op.has_symbol() {
        return Err(OpError::NoSymbol);
    }
    assert!(!refinements.is_empty(), "need at least one refinement");
    let mut table = Vec::with_capacity(refinements.len());
    let mut finest: Vec<([usize; 3], f64)> = Vec::new();
    for &n in refinements {
        let grid = make_grid(d, n)?;
        let values = alpha_values(op, grid, d);
        let bound = values.iter().fold(0.0f64, |acc, (_, v)| acc.max(*v));
        table.push((n, bound));
        finest = values;
    }
    let stable = if table.len() < 2 {
        true
    } else {
        let last = table[table.len() - 1].1;
        let prev = table[table.len() - 2].1;
        (last - prev).abs() <= STABLE_TOL * last.max(1e-9)
    };
    let sup_bound = finest
        .iter()
        .find(|(a, _)| a.iter().all(|x| *x == 0))
        .map(|(_, v)| *v)
        .unwrap_or(0.0);
    let lizorkin_bound = finest.iter().fold(0.0f64, |acc, (_, v)| acc.max(*v));
    Ok(SymbolCertificate { sup_bound, lizorkin_bound, per_alpha: finest, refinements: table, stable })
}
