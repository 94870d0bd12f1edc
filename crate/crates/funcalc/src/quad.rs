use crate::{Contour, FuncError, FunctionSpec};
use gridspace::FreqGrid;
use nalgebra::DMatrix;
use num_complex::Complex64;
use opcore::{dense_matrix, densify, MultiplierOp, OpError, OpKind, OperatorHandle, COND_GUARD};
use rayon::prelude::*;
use std::f64::consts::PI;

/// One node of the discretized boundary path. `coeff` carries the full
/// prefactor w * f(lambda) * (direction) / (2 pi i), so the integral is the
/// plain sum of coeff * (lambda - T)^{-1}.
struct Node {
    lambda: Complex64,
    coeff: Complex64,
    edge: Edge,
}

#[derive(Clone, Copy, PartialEq)]
enum Edge {
    Inner,
    Outer,
    Interior,
}

pub(crate) struct QuadOutput {
    pub handle: OperatorHandle,
    /// max |lambda| * ||(lambda - T)^{-1}|| over the innermost node pair.
    pub m_inner: f64,
    pub m_outer: f64,
    /// max |f| over the innermost / outermost node pair.
    pub f_inner: f64,
    pub f_outer: f64,
}

/// Kahan-compensated accumulator for a flat block of complex entries.
struct Kahan {
    sum: Vec<Complex64>,
    comp: Vec<Complex64>,
}

impl Kahan {
    fn new(len: usize) -> Self {
        Kahan { sum: vec![Complex64::default(); len], comp: vec![Complex64::default(); len] }
    }

    fn add(&mut self, i: usize, x: Complex64) {
        let y = x - self.comp[i];
        let t = self.sum[i] + y;
        self.comp[i] = (t - self.sum[i]) - y;
        self.sum[i] = t;
    }

    fn into_sum(self) -> Vec<Complex64> {
        self.sum
    }
}

/// Both rays of the path, sector interior kept on the left: the upper ray
/// runs inward (carrying -e^{i theta}), the lower ray outward (+e^{-i theta}).
fn contour_nodes(contour: &Contour, f: &FunctionSpec) -> Vec<Node> {
    let theta = contour.theta();
    let up = Complex64::from_polar(1.0, theta);
    let down = Complex64::from_polar(1.0, -theta);
    let two_pi_i = Complex64::new(0.0, 2.0 * PI);
    let rule = contour.radial_rule();
    let last = rule.len() - 1;
    let mut nodes = Vec::with_capacity(2 * rule.len());
    for (j, (r, w)) in rule.into_iter().enumerate() {
        let edge = if j == 0 {
            Edge::Inner
        } else if j == last {
            Edge::Outer
        } else {
            Edge::Interior
        };
        let lam_up = up * r;
        let lam_down = down * r;
        nodes.push(Node { lambda: lam_up, coeff: -w * up * f.eval(lam_up) / two_pi_i, edge });
        nodes.push(Node { lambda: lam_down, coeff: w * down * f.eval(lam_down) / two_pi_i, edge });
    }
    nodes
}

fn edge_f_sups(nodes: &[Node], f: &FunctionSpec) -> (f64, f64) {
    let mut f_inner: f64 = 0.0;
    let mut f_outer: f64 = 0.0;
    for n in nodes {
        match n.edge {
            Edge::Inner => f_inner = f_inner.max(f.eval(n.lambda).norm()),
            Edge::Outer => f_outer = f_outer.max(f.eval(n.lambda).norm()),
            Edge::Interior => {}
        }
    }
    (f_inner, f_outer)
}

fn singular(k: [i64; 3], sigma_min: f64) -> FuncError {
    FuncError::Op(OpError::SingularResolvent { k, sigma_min })
}

/// Contour quadrature along a multiplier symbol: per-mode accumulation of
/// coeff * (lambda - m(xi))^{-1} with compensated summation.
fn quad_symbol(
    op: &OperatorHandle,
    grid: FreqGrid,
    f: &FunctionSpec,
    contour: &Contour,
) -> Result<QuadOutput, FuncError> {
    let m = op.in_components();
    let stride = m * m;
    let nodes = contour_nodes(contour, f);
    let flats: Vec<usize> = grid.modes().collect();

    let per_mode: Vec<Result<(Vec<Complex64>, f64, f64), FuncError>> = flats
        .par_iter()
        .map(|&flat| {
            let xi = grid.xi_at(flat);
            let sym = op.symbol_at(&xi).expect("symbol path requires has_symbol");
            let mut acc = Kahan::new(stride);
            let mut m_inner: f64 = 0.0;
            let mut m_outer: f64 = 0.0;
            for node in &nodes {
                let mut a = sym.map(|z| -z);
                for i in 0..m {
                    a[(i, i)] += node.lambda;
                }
                let sv = a.clone().svd(false, false).singular_values;
                let (lo, hi) = sv
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
                let scale = hi.max(node.lambda.norm()).max(1e-300);
                if lo <= scale / COND_GUARD {
                    return Err(singular(grid.k_at(flat), lo));
                }
                let inv = a.try_inverse().ok_or_else(|| singular(grid.k_at(flat), lo))?;
                // Table layout is row-major within each mode block.
                for r in 0..m {
                    for c in 0..m {
                        acc.add(r * m + c, node.coeff * inv[(r, c)]);
                    }
                }
                match node.edge {
                    Edge::Inner => m_inner = m_inner.max(node.lambda.norm() / lo),
                    Edge::Outer => m_outer = m_outer.max(node.lambda.norm() / lo),
                    Edge::Interior => {}
                }
            }
            Ok((acc.into_sum(), m_inner, m_outer))
        })
        .collect();

    let mut table = vec![Complex64::default(); grid.points() * stride];
    let mut m_inner: f64 = 0.0;
    let mut m_outer: f64 = 0.0;
    for (&flat, result) in flats.iter().zip(per_mode) {
        let (block, mi, mo) = result?;
        table[flat * stride..flat * stride + stride].copy_from_slice(&block);
        m_inner = m_inner.max(mi);
        m_outer = m_outer.max(mo);
    }

    let (f_inner, f_outer) = edge_f_sups(&nodes, f);
    let base = op.clone();
    let fname = f.clone();
    let off_grid_contour = contour.clone();
    let fallback = move |xi: &[f64; 3]| {
        let sym = base.symbol_at(xi).expect("symbol available by construction");
        pointwise_quadrature(&sym, &fname, &off_grid_contour)
            .unwrap_or_else(|_| DMatrix::from_element(sym.nrows(), sym.ncols(), Complex64::new(f64::NAN, 0.0)))
    };
    let mult = MultiplierOp::from_table(grid, m, m, table, fallback);
    let handle = OperatorHandle {
        kind: OpKind::Multiplier(mult),
        in_tag: op.in_tag.clone(),
        out_tag: op.in_tag.clone(),
        order: 0.0,
        name: format!("{}[{}]", f.name(), op.name),
    };
    Ok(QuadOutput { handle, m_inner, m_outer, f_inner, f_outer })
}

/// Same node sum on a single matrix block; used for off-grid fallback
/// evaluation of quadrature-backed multipliers.
fn pointwise_quadrature(
    sym: &DMatrix<Complex64>,
    f: &FunctionSpec,
    contour: &Contour,
) -> Result<DMatrix<Complex64>, FuncError> {
    let m = sym.nrows();
    let nodes = contour_nodes(contour, f);
    let mut acc = Kahan::new(m * m);
    for node in &nodes {
        let mut a = sym.map(|z| -z);
        for i in 0..m {
            a[(i, i)] += node.lambda;
        }
        let inv = a.try_inverse().ok_or_else(|| singular([0, 0, 0], 0.0))?;
        for r in 0..m {
            for c in 0..m {
                acc.add(r * m + c, node.coeff * inv[(r, c)]);
            }
        }
    }
    let sum = acc.into_sum();
    Ok(DMatrix::from_fn(m, m, |r, c| sum[r * m + c]))
}

/// Largest singular value, estimated by power iteration on M*M for large
/// matrices and exactly otherwise. Deterministic start vector.
pub(crate) fn sigma_max_of(mat: &DMatrix<Complex64>) -> f64 {
    let dim = mat.nrows().max(mat.ncols());
    if dim <= 128 {
        return mat
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(0.0f64, |a, s| a.max(*s));
    }
    let mut v = nalgebra::DVector::<Complex64>::from_element(mat.ncols(), Complex64::new(1.0, 0.0));
    let mut sigma = 0.0;
    for _ in 0..30 {
        let w = mat * &v;
        let u = mat.adjoint() * w;
        let n = u.norm();
        if n == 0.0 {
            return 0.0;
        }
        sigma = n.sqrt();
        v = u / Complex64::new(n, 0.0);
    }
    sigma
}

/// Contour quadrature for a dense operator: one LU solve per node, summed
/// in node order with compensated summation.
fn quad_dense(
    op: &OperatorHandle,
    grid: FreqGrid,
    f: &FunctionSpec,
    contour: &Contour,
) -> Result<QuadOutput, FuncError> {
    let mat = dense_matrix(op).or_else(|_| densify(op, grid))?;
    if mat.nrows() != mat.ncols() {
        return Err(FuncError::Op(OpError::ShapeMismatch(format!(
            "calculus of a non-square dense operator {}x{}",
            mat.nrows(),
            mat.ncols()
        ))));
    }
    let dim = mat.nrows();
    let nodes = contour_nodes(contour, f);

    let terms: Vec<Result<(DMatrix<Complex64>, f64, Edge), FuncError>> = nodes
        .par_iter()
        .map(|node| {
            let mut a = mat.map(|z| -z);
            for i in 0..dim {
                a[(i, i)] += node.lambda;
            }
            let inv = a.try_inverse().ok_or(FuncError::Op(OpError::IllConditioned {
                cond: f64::INFINITY,
                guard: COND_GUARD,
            }))?;
            let m_val = if node.edge == Edge::Interior {
                0.0
            } else {
                node.lambda.norm() * sigma_max_of(&inv)
            };
            Ok((inv.map(|z| node.coeff * z), m_val, node.edge))
        })
        .collect();

    let mut acc = Kahan::new(dim * dim);
    let mut m_inner: f64 = 0.0;
    let mut m_outer: f64 = 0.0;
    for term in terms {
        let (t, m_val, edge) = term?;
        for (i, v) in t.iter().enumerate() {
            acc.add(i, *v);
        }
        match edge {
            Edge::Inner => m_inner = m_inner.max(m_val),
            Edge::Outer => m_outer = m_outer.max(m_val),
            Edge::Interior => {}
        }
    }

    let sum = DMatrix::from_vec(dim, dim, acc.into_sum());
    let (f_inner, f_outer) = edge_f_sups(&nodes, f);
    let handle = OperatorHandle::dense(
        format!("{}[{}]", f.name(), op.name),
        sum,
        op.in_tag.clone(),
        op.in_tag.clone(),
    );
    Ok(QuadOutput { handle, m_inner, m_outer, f_inner, f_outer })
}

pub(crate) fn quadrature(
    op: &OperatorHandle,
    grid: FreqGrid,
    f: &FunctionSpec,
    contour: &Contour,
) -> Result<QuadOutput, FuncError> {
    if op.has_symbol() {
        quad_symbol(op, grid, f, contour)
    } else {
        quad_dense(op, grid, f, contour)
    }
}

/// Quadrature of f(lambda) (lambda - T)^{-1} (lambda - mu0 - T)^{-1}: the
/// two-resolvent residual integrand of the shifted calculus.
pub(crate) fn quadrature_pair(
    op: &OperatorHandle,
    grid: FreqGrid,
    mu0: f64,
    f: &FunctionSpec,
    contour: &Contour,
) -> Result<OperatorHandle, FuncError> {
    let nodes = contour_nodes(contour, f);
    let name = format!("res[{}, mu0={mu0}]({})", f.name(), op.name);
    if op.has_symbol() {
        let m = op.in_components();
        let stride = m * m;
        let flats: Vec<usize> = grid.modes().collect();
        let per_mode: Vec<Result<Vec<Complex64>, FuncError>> = flats
            .par_iter()
            .map(|&flat| {
                let xi = grid.xi_at(flat);
                let sym = op.symbol_at(&xi).expect("symbol path requires has_symbol");
                let mut acc = Kahan::new(stride);
                for node in &nodes {
                    let term = pair_term(&sym, node.lambda, mu0)
                        .ok_or_else(|| singular(grid.k_at(flat), 0.0))?;
                    for r in 0..m {
                        for c in 0..m {
                            acc.add(r * m + c, node.coeff * term[(r, c)]);
                        }
                    }
                }
                Ok(acc.into_sum())
            })
            .collect();
        let mut table = vec![Complex64::default(); grid.points() * stride];
        for (&flat, result) in flats.iter().zip(per_mode) {
            table[flat * stride..flat * stride + stride].copy_from_slice(&result?);
        }
        let base = op.clone();
        let c2 = contour.clone();
        let f2 = f.clone();
        let fallback = move |xi: &[f64; 3]| {
            let sym = base.symbol_at(xi).expect("symbol available by construction");
            let dim = sym.nrows();
            let mut acc = Kahan::new(dim * dim);
            for node in contour_nodes(&c2, &f2) {
                match pair_term(&sym, node.lambda, mu0) {
                    Some(t) => {
                        for r in 0..dim {
                            for c in 0..dim {
                                acc.add(r * dim + c, node.coeff * t[(r, c)]);
                            }
                        }
                    }
                    None => {
                        return DMatrix::from_element(dim, dim, Complex64::new(f64::NAN, 0.0))
                    }
                }
            }
            let sum = acc.into_sum();
            DMatrix::from_fn(dim, dim, |r, c| sum[r * dim + c])
        };
        let mult = MultiplierOp::from_table(grid, m, m, table, fallback);
        Ok(OperatorHandle {
            kind: OpKind::Multiplier(mult),
            in_tag: op.in_tag.clone(),
            out_tag: op.in_tag.clone(),
            order: 0.0,
            name,
        })
    } else {
        let mat = dense_matrix(op).or_else(|_| densify(op, grid))?;
        let dim = mat.nrows();
        let terms: Vec<Result<DMatrix<Complex64>, FuncError>> = nodes
            .par_iter()
            .map(|node| {
                let term = pair_term(&mat, node.lambda, mu0).ok_or(FuncError::Op(
                    OpError::IllConditioned { cond: f64::INFINITY, guard: COND_GUARD },
                ))?;
                Ok(term.map(|z| node.coeff * z))
            })
            .collect();
        let mut acc = Kahan::new(dim * dim);
        for term in terms {
            for (i, v) in term?.iter().enumerate() {
                acc.add(i, *v);
            }
        }
        let sum = DMatrix::from_vec(dim, dim, acc.into_sum());
        Ok(OperatorHandle::dense(name, sum, op.in_tag.clone(), op.in_tag.clone()))
    }
}

fn pair_term(
    sym: &DMatrix<Complex64>,
    lambda: Complex64,
    mu0: f64,
) -> Option<DMatrix<Complex64>> {
    let dim = sym.nrows();
    let mut a1 = sym.map(|z| -z);
    let mut a2 = a1.clone();
    for i in 0..dim {
        a1[(i, i)] += lambda;
        a2[(i, i)] += lambda - mu0;
    }
    Some(a1.try_inverse()? * a2.try_inverse()?)
}
