use crate::{split_vector, BlockError, BlockOperator};
use gridspace::{FreqGrid, GridVector, SpaceTag, ZeroModePolicy};
use nalgebra::DMatrix;
use num_complex::Complex64;

const KERNEL_TOL: f64 = 1e-10;

/// Splits 𝒜 into its action on mean-free vectors plus a finite coupling
/// matrix on the product of the diagonal kernels (constants in each
/// component direction annihilated by the symbols at xi = 0).
pub struct KernelSplit {
    /// Same blocks, re-tagged so both sides project the zero mode.
    pub a_i: BlockOperator,
    /// [[0, P_ker(A) B|_ker(D)], [P_ker(D) C|_ker(A), 0]] at xi = 0.
    pub a_n: DMatrix<Complex64>,
    pub kernel_dim_top: usize,
    pub kernel_dim_bottom: usize,
    /// Orthonormal kernel basis columns of the top and bottom symbols at 0.
    pub basis_top: DMatrix<Complex64>,
    pub basis_bottom: DMatrix<Complex64>,
}

fn symbol_scale(op: &opcore::OperatorHandle, grid: FreqGrid) -> f64 {
    let mut scale = 0.0f64;
    for flat in grid.modes() {
        let m = op.symbol_at(&grid.xi_at(flat)).expect("symbol leaf");
        scale = scale.max(m.iter().map(|z| z.norm()).fold(0.0f64, f64::max));
    }
    scale.max(1.0)
}

/// Orthonormal basis of the null space (right singular vectors below tol).
fn null_basis(m: &DMatrix<Complex64>, tol: f64) -> DMatrix<Complex64> {
    let dim = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut cols: Vec<usize> = Vec::new();
    for i in 0..dim {
        let s = if i < svd.singular_values.len() { svd.singular_values[i] } else { 0.0 };
        if s <= tol {
            cols.push(i);
        }
    }
    let mut basis = DMatrix::<Complex64>::zeros(dim, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        for r in 0..dim {
            basis[(r, j)] = vt[(i, r)].conj();
        }
    }
    basis
}

fn diagonal_kernel(
    op: &opcore::OperatorHandle,
    entry: &'static str,
    grid: FreqGrid,
) -> Result<DMatrix<Complex64>, BlockError> {
    let scale = symbol_scale(op, grid);
    for flat in grid.modes() {
        if flat == grid.zero_mode() {
            continue;
        }
        let m = op.symbol_at(&grid.xi_at(flat)).expect("symbol leaf");
        let sv = m.clone().svd(false, false).singular_values;
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin <= KERNEL_TOL * scale {
            return Err(BlockError::UnsupportedKernel { entry, k: grid.k_at(flat) });
        }
    }
    let at_zero = op.symbol_at(&grid.xi_at(grid.zero_mode())).expect("symbol leaf");
    Ok(null_basis(&at_zero, KERNEL_TOL * scale))
}

fn projected_tag(tag: &SpaceTag) -> SpaceTag {
    let n = tag.components();
    let s_list: Vec<f64> = (0..n).map(|c| tag.s_of(c)).collect();
    SpaceTag::homogeneous(tag.s(), tag.p(), ZeroModePolicy::Project)
        .with_components(n)
        .with_component_smoothness(s_list)
}

fn retag(op: &opcore::OperatorHandle, in_tag: SpaceTag, out_tag: SpaceTag) -> opcore::OperatorHandle {
    let mut out = op.clone();
    out.in_tag = in_tag;
    out.out_tag = out_tag;
    out
}

pub fn kernel_split(block: &BlockOperator, grid: FreqGrid) -> Result<KernelSplit, BlockError> {
    if !block.has_symbol() {
        return Err(BlockError::SymbolMismatch(
            "kernel splitting requires symbol-backed blocks".into(),
        ));
    }
    let basis_top = diagonal_kernel(&block.a, "A", grid)?;
    let basis_bottom = diagonal_kernel(&block.d, "D", grid)?;
    let (k1, k2) = (basis_top.ncols(), basis_bottom.ncols());
    let zero = [0.0f64; 3];
    let b0 = block.b.symbol_at(&zero).expect("symbol leaf");
    let c0 = block.c.symbol_at(&zero).expect("symbol leaf");
    let coupling_b = basis_top.adjoint() * b0 * &basis_bottom;
    let coupling_c = basis_bottom.adjoint() * c0 * &basis_top;
    let mut a_n = DMatrix::<Complex64>::zeros(k1 + k2, k1 + k2);
    a_n.view_mut((0, k1), (k1, k2)).copy_from(&coupling_b);
    a_n.view_mut((k1, 0), (k2, k1)).copy_from(&coupling_c);

    let a_i = if k1 == 0 && k2 == 0 {
        block.clone()
    } else {
        let x1 = projected_tag(&block.x1_tag);
        let x2 = projected_tag(&block.x2_tag);
        BlockOperator {
            a: retag(&block.a, x1.clone(), x1.clone()),
            b: retag(&block.b, x2.clone(), x1.clone()),
            c: retag(&block.c, x1.clone(), x2.clone()),
            d: retag(&block.d, x2.clone(), x2.clone()),
            x1_tag: x1,
            x2_tag: x2,
            dominance: None,
            name: format!("{}|mean-free", block.name),
        }
    };
    Ok(KernelSplit {
        a_i,
        a_n,
        kernel_dim_top: k1,
        kernel_dim_bottom: k2,
        basis_top,
        basis_bottom,
    })
}

/// Residual of reassembling 𝒜 v from the split action: the kernel part of v
/// flows through the finite matrix, the rest through the blocks.
pub fn kernel_reassembly_residual(
    block: &BlockOperator,
    split: &KernelSplit,
    v: &GridVector,
) -> Result<f64, BlockError> {
    let grid = v.grid();
    let zero_flat = grid.zero_mode();
    let (v1, v2) = split_vector(v, block.n1());
    let (k1, k2) = (split.kernel_dim_top, split.kernel_dim_bottom);

    // Kernel coordinates of the zero-mode coefficients.
    let mut eta = nalgebra::DVector::<Complex64>::zeros(k1 + k2);
    let zero_top: Vec<Complex64> = (0..block.n1()).map(|c| v1.freq_at(c, zero_flat)).collect();
    let zero_bottom: Vec<Complex64> = (0..block.n2()).map(|c| v2.freq_at(c, zero_flat)).collect();
    for j in 0..k1 {
        let mut acc = Complex64::default();
        for (r, z) in zero_top.iter().enumerate() {
            acc += split.basis_top[(r, j)].conj() * z;
        }
        eta[j] = acc;
    }
    for j in 0..k2 {
        let mut acc = Complex64::default();
        for (r, z) in zero_bottom.iter().enumerate() {
            acc += split.basis_bottom[(r, j)].conj() * z;
        }
        eta[k1 + j] = acc;
    }

    // v = v_kernel + v_rest; the finite matrix acts on kernel coordinates.
    let kernel_part = |comp: usize, flat: usize| -> Complex64 {
        if flat != zero_flat {
            return Complex64::default();
        }
        let mut acc = Complex64::default();
        if comp < block.n1() {
            for j in 0..k1 {
                acc += split.basis_top[(comp, j)] * eta[j];
            }
        } else {
            for j in 0..k2 {
                acc += split.basis_bottom[(comp - block.n1(), j)] * eta[k1 + j];
            }
        }
        acc
    };
    let v_rest = v.map_freq(|flat, comp, z| z - kernel_part(comp, flat));
    let out_n = &split.a_n * &eta;
    let direct = crate::apply_full(block, v)?;
    let through_split = crate::apply_full(&split.a_i, &v_rest)?.map_freq(|flat, comp, z| {
        if flat != zero_flat {
            return z;
        }
        let mut acc = Complex64::default();
        if comp < block.n1() {
            for j in 0..k1 {
                acc += split.basis_top[(comp, j)] * out_n[j];
            }
        } else {
            for j in 0..k2 {
                acc += split.basis_bottom[(comp - block.n1(), j)] * out_n[k1 + j];
            }
        }
        z + acc
    });
    let denom = crate::l2(&direct).max(1e-300);
    Ok(crate::l2(&direct.sub(&through_split)) / denom)
}
