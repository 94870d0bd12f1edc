//! 2x2 block operator matrices [[A, B], [C, D]] over a pair of tagged
//! spaces, with diagonal-dominance reports, the bounded factorization
//! lambda - 𝒜 = M(lambda)(lambda - 𝒟), resolvent assembly through M1/M2,
//! kernel splitting, and cross-exponent consistency checks.
//!
//! Combined vectors stack X1 components before X2 components on one grid.

mod bounds;
mod factor;
mod kernel;

pub use bounds::{relative_bounds, BoundMethod, RelativeBoundReport};
pub use factor::{
    block_resolvent, consistency_check, factorization_residual, invert_on_grid, m_factor,
    mcal_apply, mcal_inverse_apply, FactorBundle, InverseRep, ResolventMethod,
};
pub use kernel::{kernel_reassembly_residual, kernel_split, KernelSplit};

use gridspace::{FreqGrid, GridError, GridVector, SpaceTag};
use nalgebra::DMatrix;
use num_complex::Complex64;
use opcore::{dense_matrix, densify, OpError, OperatorHandle};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("entry {entry}: {detail}")]
    TagMismatch { entry: &'static str, detail: String },
    #[error("tags do not form a product space: {0}")]
    ProductTag(String),
    #[error("resolvent of diagonal entry {entry} failed: {source}")]
    DiagonalResolvent { entry: &'static str, source: OpError },
    #[error("{which} is singular (smallest singular value {sigma_min:.3e}, lattice point {k:?})")]
    NotInvertible { which: &'static str, k: Option<[i64; 3]>, sigma_min: f64 },
    #[error("neumann series did not contract after {terms} terms (first term norm {first:.3e}, last {last:.3e})")]
    SeriesDiverged { terms: usize, first: f64, last: f64 },
    #[error("diagonal entry {entry} has a kernel away from the zero mode, at lattice point {k:?}")]
    UnsupportedKernel { entry: &'static str, k: [i64; 3] },
    #[error("blocks do not share the same symbols: {0}")]
    SymbolMismatch(String),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Diagonally dominant 2x2 block operator on X1 x X2.
#[derive(Clone)]
pub struct BlockOperator {
    pub a: OperatorHandle,
    pub b: OperatorHandle,
    pub c: OperatorHandle,
    pub d: OperatorHandle,
    pub x1_tag: SpaceTag,
    pub x2_tag: SpaceTag,
    pub dominance: Option<RelativeBoundReport>,
    pub name: String,
}

impl std::fmt::Debug for BlockOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BlockOperator({})", self.name)
    }
}

fn check_entry(
    entry: &'static str,
    op: &OperatorHandle,
    in_tag: &SpaceTag,
    out_tag: &SpaceTag,
) -> Result<(), BlockError> {
    if &op.in_tag != in_tag {
        return Err(BlockError::TagMismatch {
            entry,
            detail: format!("input tag differs from the declared domain space ({})", op.name),
        });
    }
    if &op.out_tag != out_tag {
        return Err(BlockError::TagMismatch {
            entry,
            detail: format!("output tag differs from the declared range space ({})", op.name),
        });
    }
    Ok(())
}

pub fn assemble_block(
    name: impl Into<String>,
    a: OperatorHandle,
    b: OperatorHandle,
    c: OperatorHandle,
    d: OperatorHandle,
    x1_tag: SpaceTag,
    x2_tag: SpaceTag,
) -> Result<BlockOperator, BlockError> {
    check_entry("A", &a, &x1_tag, &x1_tag)?;
    check_entry("B", &b, &x2_tag, &x1_tag)?;
    check_entry("C", &c, &x1_tag, &x2_tag)?;
    check_entry("D", &d, &x2_tag, &x2_tag)?;
    Ok(BlockOperator { a, b, c, d, x1_tag, x2_tag, dominance: None, name: name.into() })
}

impl BlockOperator {
    pub fn n1(&self) -> usize {
        self.x1_tag.components()
    }

    pub fn n2(&self) -> usize {
        self.x2_tag.components()
    }

    pub fn has_symbol(&self) -> bool {
        self.a.has_symbol() && self.b.has_symbol() && self.c.has_symbol() && self.d.has_symbol()
    }
}

/// Zero operator between two tagged spaces.
pub fn zero_handle(in_tag: SpaceTag, out_tag: SpaceTag) -> OperatorHandle {
    let (rows, cols) = (out_tag.components(), in_tag.components());
    OperatorHandle::multiplier("zero", rows, cols, in_tag, out_tag, 0.0, move |_| {
        DMatrix::zeros(rows, cols)
    })
}

/// Product tag for the stacked space X1 x X2. Exponents must agree, and the
/// sides must share the homogeneity convention (both weighted at |xi| = 0 in
/// the same way); per-component smoothness is concatenated.
pub fn product_tag(t1: &SpaceTag, t2: &SpaceTag) -> Result<SpaceTag, BlockError> {
    if t1.p() != t2.p() {
        return Err(BlockError::ProductTag(format!("p = {} vs p = {}", t1.p(), t2.p())));
    }
    if t1.is_homogeneous() != t2.is_homogeneous()
        || (t1.is_homogeneous() && t1.zero_mode_policy() != t2.zero_mode_policy())
    {
        return Err(BlockError::ProductTag(
            "mixed homogeneity conventions on the two sides".into(),
        ));
    }
    let mut s_list = Vec::with_capacity(t1.components() + t2.components());
    for c in 0..t1.components() {
        s_list.push(t1.s_of(c));
    }
    for c in 0..t2.components() {
        s_list.push(t2.s_of(c));
    }
    let base = if t1.is_homogeneous() {
        SpaceTag::homogeneous(t1.s(), t1.p(), t1.zero_mode_policy())
    } else {
        SpaceTag::new(t1.s(), t1.p())
    };
    Ok(base.with_components(s_list.len()).with_component_smoothness(s_list))
}

pub fn join_vectors(top: &GridVector, bottom: &GridVector) -> Result<GridVector, BlockError> {
    if top.grid() != bottom.grid() {
        return Err(BlockError::Grid(GridError::GridMismatch {
            expected: top.grid(),
            found: bottom.grid(),
        }));
    }
    let mut data = Vec::with_capacity(top.freq().len() + bottom.freq().len());
    data.extend_from_slice(top.freq());
    data.extend_from_slice(bottom.freq());
    Ok(GridVector::from_freq(top.grid(), top.components() + bottom.components(), data)?)
}

pub fn split_vector(v: &GridVector, n1: usize) -> (GridVector, GridVector) {
    let points = v.grid().points();
    let data = v.freq();
    let top = GridVector::from_freq(v.grid(), n1, data[..n1 * points].to_vec())
        .expect("length by construction");
    let bottom =
        GridVector::from_freq(v.grid(), v.components() - n1, data[n1 * points..].to_vec())
            .expect("length by construction");
    (top, bottom)
}

/// Applies the block operator to a stacked vector.
pub fn apply_full(block: &BlockOperator, v: &GridVector) -> Result<GridVector, BlockError> {
    let (top, bottom) = split_vector(v, block.n1());
    let out_top = opcore::apply(&block.a, &top)?.add(&opcore::apply(&block.b, &bottom)?);
    let out_bottom = opcore::apply(&block.c, &top)?.add(&opcore::apply(&block.d, &bottom)?);
    join_vectors(&out_top, &out_bottom)
}

pub(crate) fn block2_closure(
    a: OperatorHandle,
    b: OperatorHandle,
    c: OperatorHandle,
    d: OperatorHandle,
) -> impl Fn(&[f64; 3]) -> DMatrix<Complex64> + Send + Sync {
    let (n1, n2) = (a.out_components(), d.out_components());
    move |xi| {
        let (sa, sb, sc, sd) = (
            a.symbol_at(xi).expect("symbol leaf"),
            b.symbol_at(xi).expect("symbol leaf"),
            c.symbol_at(xi).expect("symbol leaf"),
            d.symbol_at(xi).expect("symbol leaf"),
        );
        let mut m = DMatrix::zeros(n1 + n2, n1 + n2);
        m.view_mut((0, 0), (n1, n1)).copy_from(&sa);
        m.view_mut((0, n1), (n1, n2)).copy_from(&sb);
        m.view_mut((n1, 0), (n2, n1)).copy_from(&sc);
        m.view_mut((n1, n1), (n2, n2)).copy_from(&sd);
        m
    }
}

pub(crate) fn entry_matrix(
    op: &OperatorHandle,
    grid: FreqGrid,
) -> Result<DMatrix<Complex64>, BlockError> {
    Ok(dense_matrix(op).or_else(|_| densify(op, grid))?)
}

pub(crate) fn assemble_matrix2(
    tl: &DMatrix<Complex64>,
    tr: &DMatrix<Complex64>,
    bl: &DMatrix<Complex64>,
    br: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let (r1, c1) = (tl.nrows(), tl.ncols());
    let (r2, c2) = (br.nrows(), br.ncols());
    let mut m = DMatrix::zeros(r1 + r2, c1 + c2);
    m.view_mut((0, 0), (r1, c1)).copy_from(tl);
    m.view_mut((0, c1), (r1, c2)).copy_from(tr);
    m.view_mut((r1, 0), (r2, c1)).copy_from(bl);
    m.view_mut((r1, c1), (r2, c2)).copy_from(br);
    m
}

/// The full operator 𝒜 as a single handle on the stacked space: a combined
/// multiplier when every block carries a symbol, a dense assembly otherwise.
pub fn full_operator(block: &BlockOperator, grid: FreqGrid) -> Result<OperatorHandle, BlockError> {
    let tag = product_tag(&block.x1_tag, &block.x2_tag)?;
    if block.has_symbol() {
        let (n1, n2) = (block.n1(), block.n2());
        return Ok(OperatorHandle::multiplier(
            block.name.clone(),
            n1 + n2,
            n1 + n2,
            tag.clone(),
            tag,
            block.a.order.max(block.d.order),
            block2_closure(block.a.clone(), block.b.clone(), block.c.clone(), block.d.clone()),
        ));
    }
    Ok(OperatorHandle::dense(block.name.clone(), full_matrix(block, grid)?, tag.clone(), tag))
}

/// Dense materialization of 𝒜 on the stacked coefficient layout.
pub fn full_matrix(block: &BlockOperator, grid: FreqGrid) -> Result<DMatrix<Complex64>, BlockError> {
    let (ma, mb) = (entry_matrix(&block.a, grid)?, entry_matrix(&block.b, grid)?);
    let (mc, md) = (entry_matrix(&block.c, grid)?, entry_matrix(&block.d, grid)?);
    Ok(assemble_matrix2(&ma, &mb, &mc, &md))
}

/// Diagonal part 𝒟 = diag(A, D) as a block operator.
pub fn diagonal_part(block: &BlockOperator) -> BlockOperator {
    BlockOperator {
        a: block.a.clone(),
        b: zero_handle(block.x2_tag.clone(), block.x1_tag.clone()),
        c: zero_handle(block.x1_tag.clone(), block.x2_tag.clone()),
        d: block.d.clone(),
        x1_tag: block.x1_tag.clone(),
        x2_tag: block.x2_tag.clone(),
        dominance: None,
        name: format!("diag({})", block.name),
    }
}

/// Off-diagonal part ℬ = offdiag(B, C) as a block operator.
pub fn offdiagonal_part(block: &BlockOperator) -> BlockOperator {
    BlockOperator {
        a: zero_handle(block.x1_tag.clone(), block.x1_tag.clone()),
        b: block.b.clone(),
        c: block.c.clone(),
        d: zero_handle(block.x2_tag.clone(), block.x2_tag.clone()),
        x1_tag: block.x1_tag.clone(),
        x2_tag: block.x2_tag.clone(),
        dominance: None,
        name: format!("offdiag({})", block.name),
    }
}

/// Plain coefficient norm, used for algebraic-identity residuals.
pub fn l2(v: &GridVector) -> f64 {
    v.l2_inner(v).re.max(0.0).sqrt()
}
