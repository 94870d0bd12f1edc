use crate::{apply, dense_matrix, densify, OpError, OpKind, OperatorHandle};
use gridspace::{norm, FreqGrid, GridVector, SpaceTag, ZeroModePolicy};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormMethod {
    /// Per-mode weighted largest singular value, supremum over the lattice.
    ExactSymbol,
    /// Largest singular value of the (weighted) dense matrix.
    ExactDense,
    /// Certified lower bound from plane-wave and random probes.
    LowerBound { probes: usize },
}

/// Symbol block at a lattice point, going through the per-grid value cache
/// for multiplier leaves so that table-backed handles (resolvents, powers)
/// use their validated entries.
pub(crate) fn block_at(
    op: &OperatorHandle,
    grid: FreqGrid,
    flat: usize,
) -> Option<DMatrix<Complex64>> {
    match &op.kind {
        OpKind::Multiplier(m) => {
            let table = m.values_on(grid);
            let stride = m.rows() * m.cols();
            let mut out = DMatrix::<Complex64>::zeros(m.rows(), m.cols());
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    out[(r, c)] = table[flat * stride + r * m.cols() + c];
                }
            }
            Some(out)
        }
        OpKind::Dense(_) => None,
        OpKind::Sum(a, b) => Some(block_at(a, grid, flat)? + block_at(b, grid, flat)?),
        OpKind::Product(a, b) => Some(block_at(a, grid, flat)? * block_at(b, grid, flat)?),
        OpKind::Scaled(c, a) => Some(block_at(a, grid, flat)?.map(|z| c * z)),
        OpKind::Shifted(c, a) => {
            let m = block_at(a, grid, flat)?;
            let mut out = m.clone();
            for i in 0..m.nrows().min(m.ncols()) {
                out[(i, i)] += c;
            }
            Some(out)
        }
    }
}

pub(crate) fn sigma_max(m: &DMatrix<Complex64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].norm();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |acc, s| acc.max(*s))
}

/// Weighted symbol block W_out m W_in^{-1} at one lattice point. Modes the
/// tag projects out (zero mode of a homogeneous space) get their row or
/// column zeroed: they are absent from the space, so nothing flows through.
pub(crate) fn weighted_block(
    block: &DMatrix<Complex64>,
    grid: FreqGrid,
    flat: usize,
    tag_in: &SpaceTag,
    tag_out: &SpaceTag,
) -> DMatrix<Complex64> {
    let mut out = block.clone();
    for c in 0..out.ncols() {
        match tag_in.weight_at(&grid, flat, c) {
            Some(w) => {
                for r in 0..out.nrows() {
                    out[(r, c)] /= w;
                }
            }
            None => {
                for r in 0..out.nrows() {
                    out[(r, c)] = Complex64::default();
                }
            }
        }
    }
    for r in 0..out.nrows() {
        match tag_out.weight_at(&grid, flat, r) {
            Some(w) => {
                for c in 0..out.ncols() {
                    out[(r, c)] *= w;
                }
            }
            None => {
                for c in 0..out.ncols() {
                    out[(r, c)] = Complex64::default();
                }
            }
        }
    }
    out
}

fn exact_symbol_norm(
    op: &OperatorHandle,
    grid: FreqGrid,
    tag_in: &SpaceTag,
    tag_out: &SpaceTag,
) -> f64 {
    let mut sup = 0.0f64;
    for flat in grid.modes() {
        let block = block_at(op, grid, flat).expect("caller checked has_symbol");
        let weighted = weighted_block(&block, grid, flat, tag_in, tag_out);
        sup = sup.max(sigma_max(&weighted));
    }
    sup
}

fn weighted_dense_sigma(
    mat: &DMatrix<Complex64>,
    grid: FreqGrid,
    tag_in: &SpaceTag,
    tag_out: &SpaceTag,
) -> Option<f64> {
    let points = grid.points();
    if mat.ncols() != tag_in.components() * points || mat.nrows() != tag_out.components() * points
    {
        return None;
    }
    let mut scaled = mat.clone();
    for col in 0..scaled.ncols() {
        let (comp, flat) = (col / points, col % points);
        match tag_in.weight_at(&grid, flat, comp) {
            Some(w) => {
                for r in 0..scaled.nrows() {
                    scaled[(r, col)] /= w;
                }
            }
            None => {
                for r in 0..scaled.nrows() {
                    scaled[(r, col)] = Complex64::default();
                }
            }
        }
    }
    for row in 0..scaled.nrows() {
        let (comp, flat) = (row / points, row % points);
        match tag_out.weight_at(&grid, flat, comp) {
            Some(w) => {
                for c in 0..scaled.ncols() {
                    scaled[(row, c)] *= w;
                }
            }
            None => {
                for c in 0..scaled.ncols() {
                    scaled[(row, c)] = Complex64::default();
                }
            }
        }
    }
    Some(sigma_max(&scaled))
}

/// Operator norm from `tag_in` to `tag_out` over `grid`.
///
/// Exact when p = 2 on both sides: the norm is the supremum over lattice
/// points of the weighted symbol's largest singular value (multiplier path),
/// or the weighted dense singular value. For other exponents the result is a
/// certified lower bound: plane waves have constant modulus, so a
/// single-mode probe realizes its weighted symbol gain in every L^p, and
/// random probes with push-through enrichment are added on top.
pub fn operator_norm(
    op: &OperatorHandle,
    grid: FreqGrid,
    tag_in: &SpaceTag,
    tag_out: &SpaceTag,
) -> Result<(f64, NormMethod), OpError> {
    if tag_in.components() != op.in_components() {
        return Err(OpError::ComponentMismatch {
            expected: op.in_components(),
            found: tag_in.components(),
        });
    }
    if tag_out.components() != op.out_components() {
        return Err(OpError::ComponentMismatch {
            expected: op.out_components(),
            found: tag_out.components(),
        });
    }
    let hilbert = tag_in.p() == 2.0 && tag_out.p() == 2.0;
    if hilbert {
        if op.has_symbol() {
            return Ok((exact_symbol_norm(op, grid, tag_in, tag_out), NormMethod::ExactSymbol));
        }
        // Dense leaves or trees: grid-free evaluation when the tree is all
        // matrices, densification otherwise. Weights apply when the shape
        // matches the grid stack; plain coordinates when it does not.
        let mat = dense_matrix(op).ok().or_else(|| match densify(op, grid) {
            Ok(m) => Some(m),
            Err(_) => None,
        });
        if let Some(mat) = mat {
            let s = weighted_dense_sigma(&mat, grid, tag_in, tag_out)
                .unwrap_or_else(|| sigma_max(&mat));
            return Ok((s, NormMethod::ExactDense));
        }
    }
    lower_bound_norm(op, grid, tag_in, tag_out)
}

fn lower_bound_norm(
    op: &OperatorHandle,
    grid: FreqGrid,
    tag_in: &SpaceTag,
    tag_out: &SpaceTag,
) -> Result<(f64, NormMethod), OpError> {
    let mut best = 0.0f64;
    // Plane waves realize the weighted symbol gain exactly in every L^p.
    if op.has_symbol() {
        best = exact_symbol_norm(op, grid, tag_in, tag_out);
    }
    let probes = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EC7_0A);
    let project_in = tag_in.is_homogeneous() && tag_in.zero_mode_policy() != ZeroModePolicy::Shift;
    let square = op.in_components() == op.out_components();
    for _ in 0..probes {
        let mut v = GridVector::random_freq(grid, op.in_components(), &mut rng);
        if project_in {
            v = v.project_zero_mode();
        }
        for _ in 0..4 {
            let nv = norm(&v, tag_in)?;
            if !(nv > 1e-300) {
                break;
            }
            let w = apply(op, &v)?;
            let nw = norm(&w, tag_out)?;
            best = best.max(nw / nv);
            if !square || !(nw > 1e-300) {
                break;
            }
            v = w.scale(Complex64::new(1.0 / nw, 0.0));
            if project_in {
                v = v.project_zero_mode();
            }
        }
    }
    Ok((best, NormMethod::LowerBound { probes }))
}

/// Like `operator_norm`, but also returns a vector realizing the reported
/// value. For exact paths the witness lives on the argmax lattice mode
/// (plane waves realize the weighted singular gain in every L^p); the
/// sampled path returns its best probe. The value field always matches
/// `operator_norm` so callers can treat the pair as norm + certificate.
pub fn norm_witness(
    op: &OperatorHandle,
    grid: FreqGrid,
    tag_in: &SpaceTag,
    tag_out: &SpaceTag,
) -> Result<(f64, GridVector), OpError> {
    if tag_in.components() != op.in_components() {
        return Err(OpError::ComponentMismatch {
            expected: op.in_components(),
            found: tag_in.components(),
        });
    }
    if tag_out.components() != op.out_components() {
        return Err(OpError::ComponentMismatch {
            expected: op.out_components(),
            found: tag_out.components(),
        });
    }
    let points = grid.points();
    let comps = op.in_components();
    let hilbert = tag_in.p() == 2.0 && tag_out.p() == 2.0;

    let mode_witness = |flat: usize| -> Result<GridVector, OpError> {
        let block = block_at(op, grid, flat).expect("symbol leaf");
        let weighted = weighted_block(&block, grid, flat, tag_in, tag_out);
        let svd = weighted.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let mut top = 0usize;
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s > svd.singular_values[top] {
                top = i;
            }
        }
        let mut coeffs = vec![Complex64::default(); comps * points];
        for j in 0..comps {
            if let Some(w) = tag_in.weight_at(&grid, flat, j) {
                if w > 0.0 && top < vt.nrows() {
                    coeffs[j * points + flat] = vt[(top, j)].conj() / w;
                }
            }
        }
        Ok(GridVector::from_freq(grid, comps, coeffs)?)
    };

    if op.has_symbol() {
        let mut sup = 0.0f64;
        let mut arg = grid.zero_mode();
        for flat in grid.modes() {
            let block = block_at(op, grid, flat).expect("symbol leaf");
            let s = sigma_max(&weighted_block(&block, grid, flat, tag_in, tag_out));
            if s > sup {
                sup = s;
                arg = flat;
            }
        }
        let symbol_best = (sup, mode_witness(arg)?);
        if hilbert {
            return Ok(symbol_best);
        }
        // Lower-bound mode: keep the plane-wave witness, add random probes.
        return probe_improve(op, grid, tag_in, tag_out, symbol_best);
    }

    if hilbert {
        let mat = dense_matrix(op).ok().or_else(|| densify(op, grid).ok());
        if let Some(mat) = mat {
            if mat.ncols() == comps * points && mat.nrows() == op.out_components() * points {
                let mut scaled = mat.clone();
                for col in 0..scaled.ncols() {
                    let (comp, flat) = (col / points, col % points);
                    match tag_in.weight_at(&grid, flat, comp) {
                        Some(w) => {
                            for r in 0..scaled.nrows() {
                                scaled[(r, col)] /= w;
                            }
                        }
                        None => {
                            for r in 0..scaled.nrows() {
                                scaled[(r, col)] = Complex64::default();
                            }
                        }
                    }
                }
                for row in 0..scaled.nrows() {
                    let (comp, flat) = (row / points, row % points);
                    match tag_out.weight_at(&grid, flat, comp) {
                        Some(w) => {
                            for c in 0..scaled.ncols() {
                                scaled[(row, c)] *= w;
                            }
                        }
                        None => {
                            for c in 0..scaled.ncols() {
                                scaled[(row, c)] = Complex64::default();
                            }
                        }
                    }
                }
                let svd = scaled.clone().svd(false, true);
                let value = sigma_max(&scaled);
                let vt = svd.v_t.expect("requested");
                let mut top = 0usize;
                for (i, s) in svd.singular_values.iter().enumerate() {
                    if *s > svd.singular_values[top] {
                        top = i;
                    }
                }
                let mut coeffs = vec![Complex64::default(); comps * points];
                for col in 0..comps * points {
                    let (comp, flat) = (col / points, col % points);
                    let w = tag_in.weight_at(&grid, flat, comp).unwrap_or(0.0);
                    if w > 0.0 {
                        coeffs[col] = vt[(top, col)].conj() / w;
                    }
                }
                return Ok((value, GridVector::from_freq(grid, comps, coeffs)?));
            }
        }
    }

    let start = (0.0, GridVector::zeros(grid, comps));
    probe_improve(op, grid, tag_in, tag_out, start)
}

fn probe_improve(
    op: &OperatorHandle,
    grid: FreqGrid,
    tag_in: &SpaceTag,
    tag_out: &SpaceTag,
    start: (f64, GridVector),
) -> Result<(f64, GridVector), OpError> {
    let (mut best, mut best_vec) = start;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EC7_0A);
    let project_in = tag_in.is_homogeneous() && tag_in.zero_mode_policy() != ZeroModePolicy::Shift;
    let square = op.in_components() == op.out_components();
    for _ in 0..16 {
        let mut v = GridVector::random_freq(grid, op.in_components(), &mut rng);
        if project_in {
            v = v.project_zero_mode();
        }
        for _ in 0..4 {
            let nv = norm(&v, tag_in)?;
            if !(nv > 1e-300) {
                break;
            }
            let w = apply(op, &v)?;
            let nw = norm(&w, tag_out)?;
            if nw / nv > best {
                best = nw / nv;
                best_vec = v.clone();
            }
            if !square || !(nw > 1e-300) {
                break;
            }
            v = w.scale(Complex64::new(1.0 / nw, 0.0));
            if project_in {
                v = v.project_zero_mode();
            }
        }
    }
    Ok((best, best_vec))
}
