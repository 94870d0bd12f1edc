//! Operator algebra on top of gridspace: matrix-valued Fourier multipliers,
//! dense complex matrices, and composite trees, with resolvents, fractional
//! powers, operator norms, and symbol certificates.
//!
//! Dense operators act on stacked frequency coefficients (component-major,
//! matching `GridVector::freq`). A multiplier materialized to a dense matrix
//! therefore has exactly the same action as the multiplier itself.

mod lizorkin;
mod norms;

pub use lizorkin::{lizorkin_certificate, SymbolCertificate};
pub use norms::{norm_witness, operator_norm, NormMethod};

use gridspace::{FreqGrid, GridError, GridVector, SpaceTag, ZeroModePolicy};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use thiserror::Error;

/// Densification guard: mixed-kind operations refuse matrices beyond this.
pub const DENSIFY_CAP: usize = 4096;

/// Condition-number guard for dense resolvents.
pub const COND_GUARD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum OpError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("input has {found} components, operator expects {expected}")]
    ComponentMismatch { expected: usize, found: usize },
    #[error("dense operator of shape {rows}x{cols} cannot act on a stack of length {found}")]
    DenseShape { rows: usize, cols: usize, found: usize },
    #[error("operand shapes do not compose: {0}")]
    ShapeMismatch(String),
    #[error("resolvent is singular at lattice point {k:?} (smallest singular value {sigma_min:.3e})")]
    SingularResolvent { k: [i64; 3], sigma_min: f64 },
    #[error("dense resolvent condition number {cond:.3e} exceeds the guard {guard:.1e}")]
    IllConditioned { cond: f64, guard: f64 },
    #[error("symbol spectrum touches the branch cut (-inf, 0] at lattice point {k:?} (value {value})")]
    BranchCut { k: [i64; 3], value: Complex64 },
    #[error("matrix symbol at lattice point {k:?} is not normal; use the contour-based calculus instead")]
    NonNormalSymbol { k: [i64; 3] },
    #[error("dense matrix of dimension {dim} exceeds the densification cap {cap}")]
    SizeGuard { dim: usize, cap: usize },
    #[error("operation requires an exact symbol, but the operator contains dense parts")]
    NoSymbol,
}

type SymbolFn = dyn Fn(&[f64; 3]) -> DMatrix<Complex64> + Send + Sync;

/// Matrix-valued Fourier multiplier with a lazily filled per-grid value cache.
/// The cache is write-once per grid; `values_on` computes it on first use.
#[derive(Clone)]
pub struct MultiplierOp {
    rows: usize,
    cols: usize,
    symbol: Arc<SymbolFn>,
    cache: Arc<RwLock<HashMap<FreqGrid, Arc<Vec<Complex64>>>>>,
}

impl MultiplierOp {
    pub fn new(
        rows: usize,
        cols: usize,
        symbol: impl Fn(&[f64; 3]) -> DMatrix<Complex64> + Send + Sync + 'static,
    ) -> Self {
        MultiplierOp {
            rows,
            cols,
            symbol: Arc::new(symbol),
            cache: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, xi: &[f64; 3]) -> DMatrix<Complex64> {
        let m = (self.symbol)(xi);
        debug_assert_eq!((m.nrows(), m.ncols()), (self.rows, self.cols), "symbol shape");
        m
    }

    /// Flat value table for a grid: entry (flat, r, c) at
    /// flat*rows*cols + r*cols + c.
    pub fn values_on(&self, grid: FreqGrid) -> Arc<Vec<Complex64>> {
        if let Some(hit) = self.cache.read().expect("symbol cache").get(&grid) {
            return hit.clone();
        }
        let stride = self.rows * self.cols;
        let mut table = vec![Complex64::default(); grid.points() * stride];
        for flat in grid.modes() {
            let m = self.at(&grid.xi_at(flat));
            for r in 0..self.rows {
                for c in 0..self.cols {
                    table[flat * stride + r * self.cols + c] = m[(r, c)];
                }
            }
        }
        let arc = Arc::new(table);
        self.cache
            .write()
            .expect("symbol cache")
            .entry(grid)
            .or_insert_with(|| arc.clone())
            .clone()
    }

    /// Precomputed table promoted to a multiplier; the closure fallback keeps
    /// the handle usable on other grids.
    pub fn from_table(
        grid: FreqGrid,
        rows: usize,
        cols: usize,
        table: Vec<Complex64>,
        fallback: impl Fn(&[f64; 3]) -> DMatrix<Complex64> + Send + Sync + 'static,
    ) -> Self {
        let op = MultiplierOp::new(rows, cols, fallback);
        op.cache
            .write()
            .expect("symbol cache")
            .insert(grid, Arc::new(table));
        op
    }
}

/// Dense complex matrix acting on stacked frequency coefficients. Dense
/// operators are unweighted: downstream norm computations treat their
/// coordinates as plain l^2 unless the shape matches a grid stack, in which
/// case tag weights apply per (component, mode).
#[derive(Clone)]
pub struct DenseOp {
    pub matrix: Arc<DMatrix<Complex64>>,
}

#[derive(Clone)]
pub enum OpKind {
    Multiplier(MultiplierOp),
    Dense(DenseOp),
    /// a + b
    Sum(Box<OperatorHandle>, Box<OperatorHandle>),
    /// a after b
    Product(Box<OperatorHandle>, Box<OperatorHandle>),
    /// c * a
    Scaled(Complex64, Box<OperatorHandle>),
    /// c * identity + a
    Shifted(Complex64, Box<OperatorHandle>),
}

/// An applicable linear map with space tags. `order` is informational
/// metadata (formal differential order); no operation branches on it.
#[derive(Clone)]
pub struct OperatorHandle {
    pub kind: OpKind,
    pub in_tag: SpaceTag,
    pub out_tag: SpaceTag,
    pub order: f64,
    pub name: String,
}

impl std::fmt::Debug for OperatorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "OperatorHandle({})", self.name)
    }
}

impl OperatorHandle {
    pub fn multiplier(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        in_tag: SpaceTag,
        out_tag: SpaceTag,
        order: f64,
        symbol: impl Fn(&[f64; 3]) -> DMatrix<Complex64> + Send + Sync + 'static,
    ) -> Self {
        assert_eq!(in_tag.components(), cols, "in_tag components must equal symbol cols");
        assert_eq!(out_tag.components(), rows, "out_tag components must equal symbol rows");
        OperatorHandle {
            kind: OpKind::Multiplier(MultiplierOp::new(rows, cols, symbol)),
            in_tag,
            out_tag,
            order,
            name: name.into(),
        }
    }

    /// Scalar (1x1) multiplier.
    pub fn scalar_multiplier(
        name: impl Into<String>,
        in_tag: SpaceTag,
        out_tag: SpaceTag,
        order: f64,
        symbol: impl Fn(&[f64; 3]) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        OperatorHandle::multiplier(name, 1, 1, in_tag, out_tag, order, move |xi| {
            DMatrix::from_element(1, 1, symbol(xi))
        })
    }

    pub fn dense(
        name: impl Into<String>,
        matrix: DMatrix<Complex64>,
        in_tag: SpaceTag,
        out_tag: SpaceTag,
    ) -> Self {
        OperatorHandle {
            kind: OpKind::Dense(DenseOp { matrix: Arc::new(matrix) }),
            in_tag,
            out_tag,
            order: 0.0,
            name: name.into(),
        }
    }

    /// Identity on `components` scalar fields.
    pub fn identity(tag: SpaceTag) -> Self {
        let m = tag.components();
        OperatorHandle::multiplier("identity", m, m, tag.clone(), tag, 0.0, move |_| {
            DMatrix::identity(m, m)
        })
    }

    pub fn sum(self, other: OperatorHandle) -> OperatorHandle {
        let name = format!("({} + {})", self.name, other.name);
        OperatorHandle {
            in_tag: self.in_tag.clone(),
            out_tag: self.out_tag.clone(),
            order: self.order.max(other.order),
            kind: OpKind::Sum(Box::new(self), Box::new(other)),
            name,
        }
    }

    /// Composition self after other.
    pub fn compose(self, other: OperatorHandle) -> OperatorHandle {
        let name = format!("({} . {})", self.name, other.name);
        OperatorHandle {
            in_tag: other.in_tag.clone(),
            out_tag: self.out_tag.clone(),
            order: self.order + other.order,
            kind: OpKind::Product(Box::new(self), Box::new(other)),
            name,
        }
    }

    pub fn scaled(self, c: Complex64) -> OperatorHandle {
        let name = format!("({c} * {})", self.name);
        OperatorHandle {
            in_tag: self.in_tag.clone(),
            out_tag: self.out_tag.clone(),
            order: self.order,
            kind: OpKind::Scaled(c, Box::new(self)),
            name,
        }
    }

    /// c*I + self; requires matching input/output component counts.
    pub fn shifted(self, c: Complex64) -> OperatorHandle {
        assert_eq!(
            self.in_tag.components(),
            self.out_tag.components(),
            "scalar shift needs a square operator"
        );
        let name = format!("({c} + {})", self.name);
        OperatorHandle {
            in_tag: self.in_tag.clone(),
            out_tag: self.out_tag.clone(),
            order: self.order,
            kind: OpKind::Shifted(c, Box::new(self)),
            name,
        }
    }

    pub fn in_components(&self) -> usize {
        self.in_tag.components()
    }

    pub fn out_components(&self) -> usize {
        self.out_tag.components()
    }

    /// Exact composed symbol at one frequency, if every leaf is a multiplier.
    pub fn symbol_at(&self, xi: &[f64; 3]) -> Option<DMatrix<Complex64>> {
        match &self.kind {
            OpKind::Multiplier(m) => Some(m.at(xi)),
            OpKind::Dense(_) => None,
            OpKind::Sum(a, b) => Some(a.symbol_at(xi)? + b.symbol_at(xi)?),
            OpKind::Product(a, b) => Some(a.symbol_at(xi)? * b.symbol_at(xi)?),
            OpKind::Scaled(c, a) => Some(a.symbol_at(xi)?.map(|z| c * z)),
            OpKind::Shifted(c, a) => {
                let m = a.symbol_at(xi)?;
                let eye = DMatrix::<Complex64>::identity(m.nrows(), m.ncols());
                Some(eye.map(|z| c * z) + m)
            }
        }
    }

    pub fn has_symbol(&self) -> bool {
        match &self.kind {
            OpKind::Multiplier(_) => true,
            OpKind::Dense(_) => false,
            OpKind::Sum(a, b) | OpKind::Product(a, b) => a.has_symbol() && b.has_symbol(),
            OpKind::Scaled(_, a) | OpKind::Shifted(_, a) => a.has_symbol(),
        }
    }
}

/// Applies the operator to a grid vector (frequency side for multipliers).
pub fn apply(op: &OperatorHandle, v: &GridVector) -> Result<GridVector, OpError> {
    if v.components() != op.in_components() {
        return Err(OpError::ComponentMismatch {
            expected: op.in_components(),
            found: v.components(),
        });
    }
    match &op.kind {
        OpKind::Multiplier(m) => {
            let grid = v.grid();
            let table = m.values_on(grid);
            let points = grid.points();
            let stride = m.rows * m.cols;
            let src = v.freq();
            let mut out = vec![Complex64::default(); m.rows * points];
            for flat in 0..points {
                for r in 0..m.rows {
                    let mut acc = Complex64::default();
                    for c in 0..m.cols {
                        acc += table[flat * stride + r * m.cols + c] * src[c * points + flat];
                    }
                    out[r * points + flat] = acc;
                }
            }
            Ok(GridVector::from_freq(grid, m.rows, out)?)
        }
        OpKind::Dense(d) => {
            let grid = v.grid();
            let points = grid.points();
            let (rows, cols) = (d.matrix.nrows(), d.matrix.ncols());
            if cols != v.components() * points || rows % points != 0 {
                return Err(OpError::DenseShape { rows, cols, found: v.components() * points });
            }
            let x = nalgebra::DVector::from_column_slice(v.freq().as_slice());
            let y = d.matrix.as_ref() * x;
            Ok(GridVector::from_freq(grid, rows / points, y.as_slice().to_vec())?)
        }
        OpKind::Sum(a, b) => Ok(apply(a, v)?.add(&apply(b, v)?)),
        OpKind::Product(a, b) => apply(a, &apply(b, v)?),
        OpKind::Scaled(c, a) => Ok(apply(a, v)?.scale(*c)),
        OpKind::Shifted(c, a) => Ok(v.scale(*c).add(&apply(a, v)?)),
    }
}

fn sigma_min_max(m: &DMatrix<Complex64>) -> (f64, f64) {
    if m.nrows() == 1 && m.ncols() == 1 {
        let a = m[(0, 0)].norm();
        return (a, a);
    }
    let sv = m.clone().svd(false, false).singular_values;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in sv.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    (lo, hi)
}

/// Handle for (lambda - op)^{-1}, validated eagerly on `grid`.
///
/// Multiplier path: pointwise inversion of lambda - m(xi), rejecting any
/// lattice point whose smallest singular value falls below the relative
/// guard. Dense path: LU with a condition-number guard. Mixed composites are
/// densified when the dimension permits.
pub fn resolvent(
    op: &OperatorHandle,
    lambda: Complex64,
    grid: FreqGrid,
) -> Result<OperatorHandle, OpError> {
    if op.in_components() != op.out_components() {
        return Err(OpError::ShapeMismatch(format!(
            "resolvent needs a square operator, got {}x{}",
            op.out_components(),
            op.in_components()
        )));
    }
    let m = op.in_components();
    if op.has_symbol() {
        let stride = m * m;
        let mut table = vec![Complex64::default(); grid.points() * stride];
        for flat in grid.modes() {
            let xi = grid.xi_at(flat);
            let sym = op.symbol_at(&xi).expect("has_symbol checked");
            let mut shifted = sym.map(|z| -z);
            for i in 0..m {
                shifted[(i, i)] += lambda;
            }
            let (lo, hi) = sigma_min_max(&shifted);
            let scale = hi.max(lambda.norm()).max(1e-300);
            if lo <= scale / COND_GUARD {
                return Err(OpError::SingularResolvent { k: grid.k_at(flat), sigma_min: lo });
            }
            let inv = invert_small(&shifted).ok_or(OpError::SingularResolvent {
                k: grid.k_at(flat),
                sigma_min: lo,
            })?;
            for r in 0..m {
                for c in 0..m {
                    table[flat * stride + r * m + c] = inv[(r, c)];
                }
            }
        }
        let base = op.clone();
        let fallback = move |xi: &[f64; 3]| {
            let sym = base.symbol_at(xi).expect("symbol available by construction");
            let mm = sym.nrows();
            let mut shifted = sym.map(|z| -z);
            for i in 0..mm {
                shifted[(i, i)] += lambda;
            }
            invert_small(&shifted)
                .unwrap_or_else(|| DMatrix::from_element(mm, mm, Complex64::new(f64::NAN, 0.0)))
        };
        let mult = MultiplierOp::from_table(grid, m, m, table, fallback);
        return Ok(OperatorHandle {
            kind: OpKind::Multiplier(mult),
            in_tag: op.out_tag.clone(),
            out_tag: op.in_tag.clone(),
            order: -op.order,
            name: format!("({lambda} - {})^-1", op.name),
        });
    }
    // Dense or mixed: materialize and invert. A tree of plain matrices
    // evaluates without the grid; anything containing multiplier leaves
    // goes through densification on the given grid.
    let mat = dense_matrix(op).or_else(|_| densify(op, grid))?;
    let dim = mat.nrows();
    if dim != mat.ncols() {
        return Err(OpError::ShapeMismatch("resolvent of a non-square dense operator".into()));
    }
    let shifted = DMatrix::<Complex64>::identity(dim, dim).map(|z| lambda * z) - &mat;
    let (lo, hi) = sigma_min_max(&shifted);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > COND_GUARD {
        return Err(OpError::IllConditioned { cond, guard: COND_GUARD });
    }
    let inv = shifted
        .clone()
        .try_inverse()
        .ok_or(OpError::IllConditioned { cond, guard: COND_GUARD })?;
    Ok(OperatorHandle::dense(
        format!("({lambda} - {})^-1", op.name),
        inv,
        op.out_tag.clone(),
        op.in_tag.clone(),
    ))
}

pub(crate) fn invert_small(m: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    if m.nrows() == 1 {
        let z = m[(0, 0)];
        if z.norm() == 0.0 {
            return None;
        }
        return Some(DMatrix::from_element(1, 1, z.inv()));
    }
    m.clone().try_inverse()
}

/// Evaluates a tree whose leaves are all dense matrices, independent of any
/// grid. Multiplier leaves are rejected; use `densify` for those.
pub fn dense_matrix(op: &OperatorHandle) -> Result<DMatrix<Complex64>, OpError> {
    match &op.kind {
        OpKind::Dense(d) => Ok(d.matrix.as_ref().clone()),
        OpKind::Multiplier(_) => Err(OpError::ShapeMismatch(
            "multiplier leaf in a grid-free dense evaluation".into(),
        )),
        OpKind::Sum(a, b) => {
            let (ma, mb) = (dense_matrix(a)?, dense_matrix(b)?);
            if ma.shape() != mb.shape() {
                return Err(OpError::ShapeMismatch(format!(
                    "sum of {:?} and {:?}",
                    ma.shape(),
                    mb.shape()
                )));
            }
            Ok(ma + mb)
        }
        OpKind::Product(a, b) => {
            let (ma, mb) = (dense_matrix(a)?, dense_matrix(b)?);
            if ma.ncols() != mb.nrows() {
                return Err(OpError::ShapeMismatch(format!(
                    "product of {:?} and {:?}",
                    ma.shape(),
                    mb.shape()
                )));
            }
            Ok(ma * mb)
        }
        OpKind::Scaled(c, a) => Ok(dense_matrix(a)?.map(|z| c * z)),
        OpKind::Shifted(c, a) => {
            let mut m = dense_matrix(a)?;
            for i in 0..m.nrows().min(m.ncols()) {
                m[(i, i)] += *c;
            }
            Ok(m)
        }
    }
}

/// Materializes any operator as a dense matrix on stacked coefficients.
pub fn densify(op: &OperatorHandle, grid: FreqGrid) -> Result<DMatrix<Complex64>, OpError> {
    let points = grid.points();
    let rows = op.out_components() * points;
    let cols = op.in_components() * points;
    if rows.max(cols) > DENSIFY_CAP {
        return Err(OpError::SizeGuard { dim: rows.max(cols), cap: DENSIFY_CAP });
    }
    match &op.kind {
        OpKind::Multiplier(m) => {
            let table = m.values_on(grid);
            let stride = m.rows * m.cols;
            let mut mat = DMatrix::<Complex64>::zeros(rows, cols);
            for flat in 0..points {
                for r in 0..m.rows {
                    for c in 0..m.cols {
                        mat[(r * points + flat, c * points + flat)] =
                            table[flat * stride + r * m.cols + c];
                    }
                }
            }
            Ok(mat)
        }
        OpKind::Dense(d) => {
            if d.matrix.nrows() != rows || d.matrix.ncols() != cols {
                return Err(OpError::DenseShape {
                    rows: d.matrix.nrows(),
                    cols: d.matrix.ncols(),
                    found: cols,
                });
            }
            Ok(d.matrix.as_ref().clone())
        }
        OpKind::Sum(a, b) => Ok(densify(a, grid)? + densify(b, grid)?),
        OpKind::Product(a, b) => Ok(densify(a, grid)? * densify(b, grid)?),
        OpKind::Scaled(c, a) => Ok(densify(a, grid)?.map(|z| c * z)),
        OpKind::Shifted(c, a) => {
            let mut m = densify(a, grid)?;
            for i in 0..m.nrows().min(m.ncols()) {
                m[(i, i)] += c;
            }
            Ok(m)
        }
    }
}

fn is_hermitian(m: &DMatrix<Complex64>, tol: f64) -> bool {
    let scale = m.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1e-300);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if (m[(r, c)] - m[(c, r)].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

fn is_diagonal(m: &DMatrix<Complex64>, tol: f64) -> bool {
    let scale = m.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1e-300);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if r != c && m[(r, c)].norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

fn principal_power(z: Complex64, gamma: f64) -> Complex64 {
    z.powf(gamma)
}

fn off_branch_cut(z: Complex64) -> bool {
    // Principal branch: reject the closed negative real axis including 0.
    !(z.im.abs() <= 1e-14 * z.norm().max(1e-300) && z.re <= 0.0) && z.norm() > 0.0
}

/// Pointwise matrix power for symbols that are scalar, diagonal, or
/// Hermitian positive definite. Returns the entrywise power table.
fn matrix_power(
    m: &DMatrix<Complex64>,
    gamma: f64,
    k: [i64; 3],
) -> Result<DMatrix<Complex64>, OpError> {
    let dim = m.nrows();
    if dim == 1 {
        let z = m[(0, 0)];
        if !off_branch_cut(z) {
            return Err(OpError::BranchCut { k, value: z });
        }
        return Ok(DMatrix::from_element(1, 1, principal_power(z, gamma)));
    }
    if is_diagonal(m, 1e-12) {
        let mut out = DMatrix::<Complex64>::zeros(dim, dim);
        for i in 0..dim {
            let z = m[(i, i)];
            if !off_branch_cut(z) {
                return Err(OpError::BranchCut { k, value: z });
            }
            out[(i, i)] = principal_power(z, gamma);
        }
        return Ok(out);
    }
    if is_hermitian(m, 1e-12) {
        let sym = nalgebra::SymmetricEigen::new(m.clone());
        let mut powered = DMatrix::<Complex64>::zeros(dim, dim);
        for i in 0..dim {
            let ev = sym.eigenvalues[i];
            if ev <= 0.0 {
                return Err(OpError::BranchCut { k, value: Complex64::new(ev, 0.0) });
            }
            powered[(i, i)] = Complex64::new(ev.powf(gamma), 0.0);
        }
        let q = &sym.eigenvectors;
        return Ok(q * powered * q.adjoint());
    }
    Err(OpError::NonNormalSymbol { k })
}

/// Principal-branch fractional power T^gamma, validated eagerly on `grid`.
///
/// A zero symbol value at the zero mode under a projecting homogeneous input
/// tag maps to zero: the operator is taken on the mean-free subspace and
/// extended by 0, which keeps it commuting with the zero-mode projection.
/// Matrix-valued symbols must be scalar, diagonal, or Hermitian; anything
/// else routes to the contour-based calculus.
pub fn fractional_power(
    op: &OperatorHandle,
    gamma: f64,
    grid: FreqGrid,
) -> Result<OperatorHandle, OpError> {
    if op.in_components() != op.out_components() {
        return Err(OpError::ShapeMismatch("fractional power of a non-square operator".into()));
    }
    let m = op.in_components();
    if gamma == 0.0 {
        return Ok(OperatorHandle::identity(op.in_tag.clone()));
    }
    if !op.has_symbol() {
        // Dense: same pointwise rules on the full matrix.
        let mat = dense_matrix(op).or_else(|_| densify(op, grid))?;
        let powered = matrix_power(&mat, gamma, [0, 0, 0])?;
        return Ok(OperatorHandle::dense(
            format!("{}^{gamma}", op.name),
            powered,
            op.in_tag.clone(),
            op.out_tag.clone(),
        ));
    }
    let projecting = op.in_tag.is_homogeneous()
        && op.in_tag.zero_mode_policy() == ZeroModePolicy::Project;
    let stride = m * m;
    let mut table = vec![Complex64::default(); grid.points() * stride];
    for flat in grid.modes() {
        let xi = grid.xi_at(flat);
        let sym = op.symbol_at(&xi).expect("has_symbol checked");
        let scale = sym.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let at_zero = flat == grid.zero_mode();
        let powered = if at_zero && projecting && scale == 0.0 {
            DMatrix::<Complex64>::zeros(m, m)
        } else {
            matrix_power(&sym, gamma, grid.k_at(flat))?
        };
        for r in 0..m {
            for c in 0..m {
                table[flat * stride + r * m + c] = powered[(r, c)];
            }
        }
    }
    let base = op.clone();
    let fallback = move |xi: &[f64; 3]| {
        let sym = base.symbol_at(xi).expect("symbol available by construction");
        matrix_power(&sym, gamma, [0, 0, 0])
            .unwrap_or_else(|_| DMatrix::from_element(sym.nrows(), sym.ncols(), Complex64::new(f64::NAN, 0.0)))
    };
    let mult = MultiplierOp::from_table(grid, m, m, table, fallback);
    Ok(OperatorHandle {
        kind: OpKind::Multiplier(mult),
        in_tag: op.in_tag.clone(),
        out_tag: op.out_tag.clone(),
        order: op.order * gamma,
        name: format!("{}^{gamma}", op.name),
    })
}
