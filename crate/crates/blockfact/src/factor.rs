use crate::{
    apply_full, block2_closure, diagonal_part, entry_matrix, join_vectors, l2, product_tag,
    split_vector, BlockError, BlockOperator,
};
use gridspace::{FreqGrid, GridVector};
use nalgebra::DMatrix;
use num_complex::Complex64;
use opcore::{apply, resolvent, OpError, OpKind, OperatorHandle};

const SINGULAR_GUARD: f64 = 1e-12;

/// All factorization objects at one spectral parameter, as lazy handles.
#[derive(Clone)]
pub struct FactorBundle {
    pub lambda: Complex64,
    /// M(lambda) = [[I, -B(lambda-D)^{-1}], [-C(lambda-A)^{-1}, I]] on X1 x X2.
    pub m: OperatorHandle,
    /// M1 = I - B(lambda-D)^{-1}C(lambda-A)^{-1} on X1.
    pub m1: OperatorHandle,
    /// M2 = I - C(lambda-A)^{-1}B(lambda-D)^{-1} on X2.
    pub m2: OperatorHandle,
    /// S1 = (lambda-A) - B(lambda-D)^{-1}C.
    pub s1: OperatorHandle,
    /// S2 = (lambda-D) - C(lambda-A)^{-1}B.
    pub s2: OperatorHandle,
    /// N1 = I - (lambda-A)^{-1}B(lambda-D)^{-1}C.
    pub n1: OperatorHandle,
    /// N2 = I - (lambda-D)^{-1}C(lambda-A)^{-1}B.
    pub n2: OperatorHandle,
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

pub(crate) fn diag_resolvent(
    op: &OperatorHandle,
    entry: &'static str,
    lambda: Complex64,
    grid: FreqGrid,
) -> Result<OperatorHandle, BlockError> {
    resolvent(op, lambda, grid).map_err(|source| BlockError::DiagonalResolvent { entry, source })
}

pub fn m_factor(
    block: &BlockOperator,
    lambda: Complex64,
    grid: FreqGrid,
) -> Result<FactorBundle, BlockError> {
    let ra = diag_resolvent(&block.a, "A", lambda, grid)?;
    let rd = diag_resolvent(&block.d, "D", lambda, grid)?;
    let (a, b, c, d) = (&block.a, &block.b, &block.c, &block.d);

    let m1 = b
        .clone()
        .compose(rd.clone())
        .compose(c.clone())
        .compose(ra.clone())
        .scaled(-one())
        .shifted(one());
    let m2 = c
        .clone()
        .compose(ra.clone())
        .compose(b.clone())
        .compose(rd.clone())
        .scaled(-one())
        .shifted(one());
    let lam_a = a.clone().scaled(-one()).shifted(lambda);
    let lam_d = d.clone().scaled(-one()).shifted(lambda);
    let s1 = lam_a.sum(b.clone().compose(rd.clone()).compose(c.clone()).scaled(-one()));
    let s2 = lam_d.sum(c.clone().compose(ra.clone()).compose(b.clone()).scaled(-one()));
    let n1 = ra
        .clone()
        .compose(b.clone())
        .compose(rd.clone())
        .compose(c.clone())
        .scaled(-one())
        .shifted(one());
    let n2 = rd
        .clone()
        .compose(c.clone())
        .compose(ra.clone())
        .compose(b.clone())
        .scaled(-one())
        .shifted(one());

    // The bounded factor M(lambda) as one handle on the stacked space.
    let tl = OperatorHandle::identity(block.x1_tag.clone());
    let tr = b.clone().compose(rd.clone()).scaled(-one());
    let bl = c.clone().compose(ra.clone()).scaled(-one());
    let br = OperatorHandle::identity(block.x2_tag.clone());
    let tag = product_tag(&block.x1_tag, &block.x2_tag)?;
    let m = if block.has_symbol() {
        let (n1c, n2c) = (block.n1(), block.n2());
        OperatorHandle::multiplier(
            format!("M({lambda})"),
            n1c + n2c,
            n1c + n2c,
            tag.clone(),
            tag,
            0.0,
            block2_closure(tl, tr, bl, br),
        )
    } else {
        let mat = crate::assemble_matrix2(
            &entry_matrix(&tl, grid)?,
            &entry_matrix(&tr, grid)?,
            &entry_matrix(&bl, grid)?,
            &entry_matrix(&br, grid)?,
        );
        OperatorHandle::dense(format!("M({lambda})"), mat, tag.clone(), tag)
    };

    Ok(FactorBundle { lambda, m, m1, m2, s1, s2, n1, n2 })
}

fn block_extremes(m: &DMatrix<Complex64>) -> (f64, f64) {
    if m.nrows() == 1 && m.ncols() == 1 {
        let a = m[(0, 0)].norm();
        return (a, a);
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(*s), hi.max(*s)))
}

/// Pointwise (or dense) inversion of a bounded operator on the grid.
///
/// Invertibility is judged against the operator's global scale: a symbol
/// block whose smallest singular value is tiny relative to the largest
/// block anywhere on the lattice reports NotInvertible, even though a
/// formal pointwise inverse exists.
pub fn invert_on_grid(
    op: &OperatorHandle,
    grid: FreqGrid,
    which: &'static str,
) -> Result<OperatorHandle, BlockError> {
    if op.has_symbol() {
        let m = op.in_components();
        let stride = m * m;
        let mut blocks = Vec::with_capacity(grid.points());
        let mut global = 0.0f64;
        for flat in grid.modes() {
            let sym = op.symbol_at(&grid.xi_at(flat)).expect("has_symbol checked");
            let (lo, hi) = block_extremes(&sym);
            global = global.max(hi);
            blocks.push((flat, sym, lo));
        }
        let scale = global.max(1e-300);
        let mut table = vec![Complex64::default(); grid.points() * stride];
        for (flat, sym, lo) in blocks {
            if lo <= scale / opcore::COND_GUARD {
                return Err(BlockError::NotInvertible {
                    which,
                    k: Some(grid.k_at(flat)),
                    sigma_min: lo,
                });
            }
            let inv = if m == 1 {
                DMatrix::from_element(1, 1, sym[(0, 0)].inv())
            } else {
                sym.clone().try_inverse().ok_or(BlockError::NotInvertible {
                    which,
                    k: Some(grid.k_at(flat)),
                    sigma_min: lo,
                })?
            };
            for r in 0..m {
                for c in 0..m {
                    table[flat * stride + r * m + c] = inv[(r, c)];
                }
            }
        }
        let base = op.clone();
        let fallback = move |xi: &[f64; 3]| {
            let sym = base.symbol_at(xi).expect("symbol available by construction");
            if sym.nrows() == 1 {
                return DMatrix::from_element(1, 1, sym[(0, 0)].inv());
            }
            let n = sym.nrows();
            sym.clone()
                .try_inverse()
                .unwrap_or_else(|| DMatrix::from_element(n, n, Complex64::new(f64::NAN, 0.0)))
        };
        let mult = opcore::MultiplierOp::from_table(grid, m, m, table, fallback);
        return Ok(OperatorHandle {
            kind: OpKind::Multiplier(mult),
            in_tag: op.out_tag.clone(),
            out_tag: op.in_tag.clone(),
            order: -op.order,
            name: format!("{which}^-1"),
        });
    }
    // Dense trees go through the resolvent at zero, whose condition-number
    // guard is already a global comparison.
    resolvent(&op.clone().scaled(-one()), Complex64::default(), grid).map_err(|e| match e {
        OpError::SingularResolvent { k, sigma_min } => {
            BlockError::NotInvertible { which, k: Some(k), sigma_min }
        }
        OpError::IllConditioned { cond, .. } => {
            BlockError::NotInvertible { which, k: None, sigma_min: 1.0 / cond }
        }
        other => BlockError::Op(other),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolventMethod {
    /// Pointwise inversion of the full stacked symbol (or dense matrix).
    Direct,
    /// (lambda-D)^{-1} M(lambda)^{-1} through M1/M2 inverses.
    Factorized,
    /// Factorized, with M1^{-1} and M2^{-1} from truncated Neumann series.
    Neumann { tol: f64, max_terms: usize },
}

/// Representations of M(lambda)^{-1} from the factorization identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseRep {
    /// [[M1^{-1}, M1^{-1}B(l-D)^{-1}], [M2^{-1}C(l-A)^{-1}, M2^{-1}]]
    Direct,
    /// upper-triangular factor with M2^{-1} after the lower unipotent factor
    LowerThenUpper,
    /// lower factor with M1^{-1} after the upper unipotent factor
    UpperThenLower,
}

fn sigma_extrema(m: &DMatrix<Complex64>) -> (f64, f64) {
    if m.nrows() == 1 && m.ncols() == 1 {
        let a = m[(0, 0)].norm();
        return (a, a);
    }
    let sv = m.clone().svd(false, false).singular_values;
    (sv.iter().cloned().fold(f64::INFINITY, f64::min), sv.iter().cloned().fold(0.0, f64::max))
}

fn shifted_by(lambda: Complex64, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut out = m.map(|z| -z);
    for i in 0..out.nrows() {
        out[(i, i)] += lambda;
    }
    out
}

fn guarded_inverse(
    m: &DMatrix<Complex64>,
    scale_hint: f64,
) -> Result<DMatrix<Complex64>, (Option<[i64; 3]>, f64)> {
    let (lo, hi) = sigma_extrema(m);
    let scale = hi.max(scale_hint).max(1e-300);
    if lo <= scale * SINGULAR_GUARD {
        return Err((None, lo));
    }
    m.clone().try_inverse().ok_or((None, lo))
}

fn neumann_inverse(
    k: &DMatrix<Complex64>,
    tol: f64,
    max_terms: usize,
) -> Result<DMatrix<Complex64>, BlockError> {
    let dim = k.nrows();
    let mut sum = DMatrix::<Complex64>::identity(dim, dim);
    let mut term = DMatrix::<Complex64>::identity(dim, dim);
    let mut first = 0.0f64;
    let mut last = 0.0f64;
    for n in 1..=max_terms {
        term = k * &term;
        let (_, nrm) = sigma_extrema(&term);
        if n == 1 {
            first = nrm;
        }
        last = nrm;
        sum += &term;
        if nrm <= tol {
            return Ok(sum);
        }
    }
    Err(BlockError::SeriesDiverged { terms: max_terms, first, last })
}

struct ModeSymbols {
    a: DMatrix<Complex64>,
    b: DMatrix<Complex64>,
    c: DMatrix<Complex64>,
    d: DMatrix<Complex64>,
}

fn mode_symbols(block: &BlockOperator, xi: &[f64; 3]) -> ModeSymbols {
    ModeSymbols {
        a: block.a.symbol_at(xi).expect("symbol leaf"),
        b: block.b.symbol_at(xi).expect("symbol leaf"),
        c: block.c.symbol_at(xi).expect("symbol leaf"),
        d: block.d.symbol_at(xi).expect("symbol leaf"),
    }
}

/// Per-mode resolvent blocks; shared by the symbol and dense paths.
fn resolvent_parts(
    sym: &ModeSymbols,
    lambda: Complex64,
    method: ResolventMethod,
    k: Option<[i64; 3]>,
) -> Result<DMatrix<Complex64>, BlockError> {
    let err_diag = |entry: &'static str, sigma_min: f64| match k {
        Some(kk) => BlockError::DiagonalResolvent {
            entry,
            source: OpError::SingularResolvent { k: kk, sigma_min },
        },
        None => BlockError::DiagonalResolvent {
            entry,
            source: OpError::IllConditioned { cond: 1.0 / sigma_min.max(1e-300), guard: 1e12 },
        },
    };
    let ra = guarded_inverse(&shifted_by(lambda, &sym.a), lambda.norm())
        .map_err(|(_, s)| err_diag("A", s))?;
    let rd = guarded_inverse(&shifted_by(lambda, &sym.d), lambda.norm())
        .map_err(|(_, s)| err_diag("D", s))?;
    let (n1, n2) = (sym.a.nrows(), sym.d.nrows());

    if let ResolventMethod::Direct = method {
        let mut full = DMatrix::zeros(n1 + n2, n1 + n2);
        full.view_mut((0, 0), (n1, n1)).copy_from(&sym.a);
        full.view_mut((0, n1), (n1, n2)).copy_from(&sym.b);
        full.view_mut((n1, 0), (n2, n1)).copy_from(&sym.c);
        full.view_mut((n1, n1), (n2, n2)).copy_from(&sym.d);
        return guarded_inverse(&shifted_by(lambda, &full), lambda.norm()).map_err(|(_, s)| {
            BlockError::Op(OpError::SingularResolvent { k: k.unwrap_or([0, 0, 0]), sigma_min: s })
        });
    }

    let k1 = &sym.b * &rd * &sym.c * &ra;
    let k2 = &sym.c * &ra * &sym.b * &rd;
    let eye1 = DMatrix::<Complex64>::identity(n1, n1);
    let eye2 = DMatrix::<Complex64>::identity(n2, n2);
    let (m1inv, m2inv) = match method {
        ResolventMethod::Factorized => {
            let m1inv = guarded_inverse(&(&eye1 - &k1), 1.0)
                .map_err(|(_, s)| BlockError::NotInvertible { which: "M1", k, sigma_min: s })?;
            let m2inv = guarded_inverse(&(&eye2 - &k2), 1.0)
                .map_err(|(_, s)| BlockError::NotInvertible { which: "M2", k, sigma_min: s })?;
            (m1inv, m2inv)
        }
        ResolventMethod::Neumann { tol, max_terms } => {
            (neumann_inverse(&k1, tol, max_terms)?, neumann_inverse(&k2, tol, max_terms)?)
        }
        ResolventMethod::Direct => unreachable!("handled above"),
    };

    let r11 = &ra * &m1inv;
    let r12 = &ra * &m1inv * &sym.b * &rd;
    let r21 = &rd * &m2inv * &sym.c * &ra;
    let r22 = &rd * &m2inv;
    let mut full = DMatrix::zeros(n1 + n2, n1 + n2);
    full.view_mut((0, 0), (n1, n1)).copy_from(&r11);
    full.view_mut((0, n1), (n1, n2)).copy_from(&r12);
    full.view_mut((n1, 0), (n2, n1)).copy_from(&r21);
    full.view_mut((n1, n1), (n2, n2)).copy_from(&r22);
    Ok(full)
}

/// (lambda - 𝒜)^{-1} on the stacked space.
///
/// Symbol path: per-mode block inversion, table-backed. Dense path: matrix
/// assembly under the densification cap. The factorized and neumann methods
/// go through M1/M2 per Prop-style representation; direct inverts the full
/// block symbol.
pub fn block_resolvent(
    block: &BlockOperator,
    lambda: Complex64,
    grid: FreqGrid,
    method: ResolventMethod,
) -> Result<OperatorHandle, BlockError> {
    let tag = product_tag(&block.x1_tag, &block.x2_tag)?;
    let nn = block.n1() + block.n2();
    if block.has_symbol() {
        let stride = nn * nn;
        let mut table = vec![Complex64::default(); grid.points() * stride];
        for flat in grid.modes() {
            let xi = grid.xi_at(flat);
            let sym = mode_symbols(block, &xi);
            let inv = resolvent_parts(&sym, lambda, method, Some(grid.k_at(flat)))?;
            for r in 0..nn {
                for c in 0..nn {
                    table[flat * stride + r * nn + c] = inv[(r, c)];
                }
            }
        }
        let base = block.clone();
        let fallback = move |xi: &[f64; 3]| {
            let sym = mode_symbols(&base, xi);
            resolvent_parts(&sym, lambda, method, None)
                .unwrap_or_else(|_| DMatrix::from_element(nn, nn, Complex64::new(f64::NAN, 0.0)))
        };
        let mult = opcore::MultiplierOp::from_table(grid, nn, nn, table, fallback);
        return Ok(OperatorHandle {
            kind: OpKind::Multiplier(mult),
            in_tag: tag.clone(),
            out_tag: tag,
            order: -(block.a.order.max(block.d.order)),
            name: format!("({lambda} - {})^-1", block.name),
        });
    }
    // Dense path on entry matrices.
    let sym = ModeSymbols {
        a: entry_matrix(&block.a, grid)?,
        b: entry_matrix(&block.b, grid)?,
        c: entry_matrix(&block.c, grid)?,
        d: entry_matrix(&block.d, grid)?,
    };
    let inv = resolvent_parts(&sym, lambda, method, None)?;
    Ok(OperatorHandle::dense(
        format!("({lambda} - {})^-1", block.name),
        inv,
        tag.clone(),
        tag,
    ))
}

/// Applies M(lambda) = [[I, -B(l-D)^{-1}], [-C(l-A)^{-1}, I]] to a stacked vector.
pub fn mcal_apply(
    block: &BlockOperator,
    lambda: Complex64,
    grid: FreqGrid,
    v: &GridVector,
) -> Result<GridVector, BlockError> {
    let ra = diag_resolvent(&block.a, "A", lambda, grid)?;
    let rd = diag_resolvent(&block.d, "D", lambda, grid)?;
    let (v1, v2) = split_vector(v, block.n1());
    let top = v1.sub(&apply(&block.b, &apply(&rd, &v2)?)?);
    let bottom = v2.sub(&apply(&block.c, &apply(&ra, &v1)?)?);
    join_vectors(&top, &bottom)
}

/// Applies M(lambda)^{-1} through one of its block representations.
pub fn mcal_inverse_apply(
    block: &BlockOperator,
    lambda: Complex64,
    grid: FreqGrid,
    rep: InverseRep,
    v: &GridVector,
) -> Result<GridVector, BlockError> {
    let bundle = m_factor(block, lambda, grid)?;
    let ra = diag_resolvent(&block.a, "A", lambda, grid)?;
    let rd = diag_resolvent(&block.d, "D", lambda, grid)?;
    let (v1, v2) = split_vector(v, block.n1());
    match rep {
        InverseRep::Direct => {
            let m1inv = invert_on_grid(&bundle.m1, grid, "M1")?;
            let m2inv = invert_on_grid(&bundle.m2, grid, "M2")?;
            let top = apply(&m1inv, &v1)?
                .add(&apply(&m1inv, &apply(&block.b, &apply(&rd, &v2)?)?)?);
            let bottom = apply(&m2inv, &apply(&block.c, &apply(&ra, &v1)?)?)?
                .add(&apply(&m2inv, &v2)?);
            join_vectors(&top, &bottom)
        }
        InverseRep::LowerThenUpper => {
            let m2inv = invert_on_grid(&bundle.m2, grid, "M2")?;
            let w1 = v1.clone();
            let w2 = apply(&block.c, &apply(&ra, &v1)?)?.add(&v2);
            let m2w2 = apply(&m2inv, &w2)?;
            let top = w1.add(&apply(&block.b, &apply(&rd, &m2w2)?)?);
            join_vectors(&top, &m2w2)
        }
        InverseRep::UpperThenLower => {
            let m1inv = invert_on_grid(&bundle.m1, grid, "M1")?;
            let w1 = v1.add(&apply(&block.b, &apply(&rd, &v2)?)?);
            let m1w1 = apply(&m1inv, &w1)?;
            let bottom = apply(&block.c, &apply(&ra, &m1w1)?)?.add(&v2);
            join_vectors(&m1w1, &bottom)
        }
    }
}

/// Relative residual of the identity (lambda - 𝒜)v = M(lambda)(lambda - 𝒟)v.
pub fn factorization_residual(
    block: &BlockOperator,
    lambda: Complex64,
    grid: FreqGrid,
    v: &GridVector,
) -> Result<f64, BlockError> {
    let lhs = v.scale(lambda).sub(&apply_full(block, v)?);
    let diag = diagonal_part(block);
    let dv = v.scale(lambda).sub(&apply_full(&diag, v)?);
    let rhs = mcal_apply(block, lambda, grid, &dv)?;
    let denom = l2(&lhs);
    let diff = l2(&lhs.sub(&rhs));
    if denom > 1e-300 {
        Ok(diff / denom)
    } else {
        Ok(diff)
    }
}

/// Compares M1 of two blocks that should share symbols (differing only in
/// integrability tags), as applied operators on v.
pub fn consistency_check(
    block_p1: &BlockOperator,
    block_p2: &BlockOperator,
    lambda: Complex64,
    grid: FreqGrid,
    v: &GridVector,
) -> Result<f64, BlockError> {
    if !block_p1.has_symbol() || !block_p2.has_symbol() {
        return Err(BlockError::SymbolMismatch(
            "consistency requires symbol-backed blocks on both sides".into(),
        ));
    }
    let stride = (grid.points() / 128).max(1);
    for flat in grid.modes().step_by(stride).chain([grid.zero_mode()]) {
        let xi = grid.xi_at(flat);
        let (s1, s2) = (mode_symbols(block_p1, &xi), mode_symbols(block_p2, &xi));
        for (name, a, b) in
            [("A", &s1.a, &s2.a), ("B", &s1.b, &s2.b), ("C", &s1.c, &s2.c), ("D", &s1.d, &s2.d)]
        {
            if a.shape() != b.shape() {
                return Err(BlockError::SymbolMismatch(format!("entry {name} shape differs")));
            }
            let scale = a.iter().map(|z| z.norm()).fold(1e-300f64, f64::max);
            let diff = (a - b).iter().map(|z| z.norm()).fold(0.0f64, f64::max);
            if diff > 1e-9 * scale.max(1.0) {
                return Err(BlockError::SymbolMismatch(format!(
                    "entry {name} differs by {diff:.3e} at lattice point {:?}",
                    grid.k_at(flat)
                )));
            }
        }
    }
    let b1 = m_factor(block_p1, lambda, grid)?;
    let b2 = m_factor(block_p2, lambda, grid)?;
    let (out1, out2) = (apply(&b1.m1, v)?, apply(&b2.m1, v)?);
    let denom = l2(v);
    Ok(l2(&out1.sub(&out2)) / denom.max(1e-300))
}
