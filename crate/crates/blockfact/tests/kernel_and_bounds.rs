use blockfact::{
    assemble_block, kernel_reassembly_residual, kernel_split, relative_bounds, BlockError,
    BlockOperator, BoundMethod,
};
use gridspace::{make_grid, GridVector, SpaceTag, ZeroModePolicy};
use num_complex::Complex64;
use opcore::OperatorHandle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn abs2(xi: &[f64; 3]) -> f64 {
    xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]
}

fn tag() -> SpaceTag {
    SpaceTag::new(0.0, 2.0)
}

fn scalar(name: &str, order: f64, f: impl Fn(&[f64; 3]) -> Complex64 + Send + Sync + 'static) -> OperatorHandle {
    OperatorHandle::scalar_multiplier(name, tag(), tag(), order, f)
}

fn laplacian_pair(coupling_b: f64, coupling_c: f64) -> BlockOperator {
    let a = scalar("A", 2.0, |xi| c(abs2(xi), 0.0));
    let b = scalar("B", 2.0, move |xi| c(coupling_b * abs2(xi), 0.0));
    let cc = scalar("C", 0.0, move |_| c(coupling_c, 0.0));
    let d = scalar("D", 2.0, |xi| c(abs2(xi), 0.0));
    assemble_block("laplacian-pair", a, b, cc, d, tag(), tag()).unwrap()
}

#[test]
fn decoupled_laplacians_split_with_zero_interaction() {
    let grid = make_grid(1, 8).unwrap();
    let block = laplacian_pair(0.0, 0.0);
    let split = kernel_split(&block, grid).unwrap();
    assert_eq!(split.kernel_dim_top, 1);
    assert_eq!(split.kernel_dim_bottom, 1);
    assert_eq!(split.a_n.shape(), (2, 2));
    assert!(split.a_n.iter().all(|z| z.norm() == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let v = GridVector::random_freq(grid, 2, &mut rng);
    let r = kernel_reassembly_residual(&block, &split, &v).unwrap();
    assert!(r <= 1e-12, "reassembly residual {r}");
}

#[test]
fn one_sided_zero_order_coupling_gives_lower_triangular_interaction() {
    // B vanishes at xi = 0 (it carries a Laplacian), C is a constant: the
    // kernel-to-kernel matrix is strictly lower triangular.
    let grid = make_grid(1, 8).unwrap();
    let block = laplacian_pair(0.5, -1.0);
    let split = kernel_split(&block, grid).unwrap();
    assert_eq!((split.kernel_dim_top, split.kernel_dim_bottom), (1, 1));
    assert_eq!(split.a_n[(0, 0)].norm(), 0.0);
    assert_eq!(split.a_n[(0, 1)].norm(), 0.0);
    assert_eq!(split.a_n[(1, 1)].norm(), 0.0);
    assert!((split.a_n[(1, 0)].norm() - 1.0).abs() < 1e-13);

    let mut rng = ChaCha8Rng::seed_from_u64(59);
    let v = GridVector::random_freq(grid, 2, &mut rng);
    let r = kernel_reassembly_residual(&block, &split, &v).unwrap();
    assert!(r <= 1e-12, "reassembly residual {r}");

    // The mean-free part carries projected tags.
    assert!(split.a_i.x1_tag.is_homogeneous());
    assert_eq!(split.a_i.x1_tag.zero_mode_policy(), ZeroModePolicy::Project);
}

#[test]
fn injective_symbols_report_empty_kernels() {
    let grid = make_grid(1, 8).unwrap();
    let a = scalar("A", 2.0, |xi| c(1.0 + abs2(xi), 0.0));
    let b = scalar("B", 0.0, |_| c(0.1, 0.0));
    let cc = scalar("C", 0.0, |_| c(0.2, 0.0));
    let d = scalar("D", 2.0, |xi| c(1.0 + abs2(xi), 0.0));
    let block = assemble_block("bessel-pair", a, b, cc, d, tag(), tag()).unwrap();
    let split = kernel_split(&block, grid).unwrap();
    assert_eq!((split.kernel_dim_top, split.kernel_dim_bottom), (0, 0));
    assert_eq!(split.a_n.shape(), (0, 0));
    // Nothing to project: the mean-free part is the block itself.
    assert_eq!(split.a_i.name, block.name);
    assert!(!split.a_i.x1_tag.is_homogeneous());

    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let v = GridVector::random_freq(grid, 2, &mut rng);
    let r = kernel_reassembly_residual(&block, &split, &v).unwrap();
    assert!(r <= 1e-12, "reassembly residual {r}");
}

#[test]
fn kernel_away_from_zero_is_rejected() {
    let grid = make_grid(1, 8).unwrap();
    let a = scalar("A", 2.0, |xi| c(abs2(xi) - 1.0, 0.0));
    let b = scalar("B", 0.0, |_| c(0.0, 0.0));
    let cc = scalar("C", 0.0, |_| c(0.0, 0.0));
    let d = scalar("D", 2.0, |xi| c(1.0 + abs2(xi), 0.0));
    let block = assemble_block("shifted", a, b, cc, d, tag(), tag()).unwrap();
    match kernel_split(&block, grid) {
        Err(BlockError::UnsupportedKernel { entry, k }) => {
            assert_eq!(entry, "A");
            assert_eq!(k[0].abs(), 1);
        }
        other => panic!("expected unsupported kernel, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn decoupled_block_has_zero_dominance_constants() {
    let grid = make_grid(1, 8).unwrap();
    let block = laplacian_pair(0.0, 0.0);
    let report = relative_bounds(&block, grid, 16, 0).unwrap();
    assert_eq!(report.method, BoundMethod::ExactSymbol);
    assert_eq!((report.c_a, report.c_d, report.l), (0.0, 0.0, 0.0));
}

#[test]
fn convective_scaling_saturates_the_dominance_constants() {
    // A = |xi|^2 on the -1 scale, D = |xi|^2 on the 0 scale, C of order 1,
    // B of order 3: in weighted coordinates both coupling/diagonal ratios
    // are exactly 1 at every mode, with no additive slack.
    let x1 = SpaceTag::homogeneous(-1.0, 2.0, ZeroModePolicy::Project);
    let x2 = SpaceTag::homogeneous(0.0, 2.0, ZeroModePolicy::Project);
    let a = OperatorHandle::scalar_multiplier("A", x1.clone(), x1.clone(), 2.0, |xi| {
        c(abs2(xi), 0.0)
    });
    let b = OperatorHandle::scalar_multiplier("B", x2.clone(), x1.clone(), 3.0, |xi| {
        c(0.0, -abs2(xi) * xi[0])
    });
    let cc = OperatorHandle::scalar_multiplier("C", x1.clone(), x2.clone(), 1.0, |xi| {
        c(0.0, -xi[0])
    });
    let d = OperatorHandle::scalar_multiplier("D", x2.clone(), x2.clone(), 2.0, |xi| {
        c(abs2(xi), 0.0)
    });
    let block = assemble_block("convective", a, b, cc, d, x1, x2).unwrap();
    let grid = make_grid(1, 16).unwrap();
    let report = relative_bounds(&block, grid, 16, 0).unwrap();
    assert_eq!(report.method, BoundMethod::ExactSymbol);
    assert!((report.c_a - 1.0).abs() < 1e-12, "c_a = {}", report.c_a);
    assert!((report.c_d - 1.0).abs() < 1e-12, "c_d = {}", report.c_d);
    assert!(report.l < 1e-10, "l = {}", report.l);
}

#[test]
fn sampled_bounds_are_deterministic_and_finite() {
    let grid = make_grid(1, 8).unwrap();
    let t = SpaceTag::new(0.0, 4.0);
    let a = OperatorHandle::scalar_multiplier("A", t.clone(), t.clone(), 2.0, |xi| {
        c(1.0 + abs2(xi), 0.0)
    });
    let b = OperatorHandle::scalar_multiplier("B", t.clone(), t.clone(), 0.0, |_| c(0.25, 0.0));
    let cc = OperatorHandle::scalar_multiplier("C", t.clone(), t.clone(), 0.0, |_| c(0.5, 0.0));
    let d = OperatorHandle::scalar_multiplier("D", t.clone(), t.clone(), 2.0, |xi| {
        c(1.0 + abs2(xi), 0.0)
    });
    let block = assemble_block("quartic", a, b, cc, d, t.clone(), t).unwrap();
    let first = relative_bounds(&block, grid, 24, 7).unwrap();
    let second = relative_bounds(&block, grid, 24, 7).unwrap();
    assert_eq!(first, second, "same seed must reproduce the report");
    assert_eq!(first.method, BoundMethod::Sampled);
    assert_eq!(first.sample_count, 24);
    assert!(first.c_a.is_finite() && first.c_d.is_finite() && first.l.is_finite());
    assert!(first.c_a >= 0.0 && first.c_d >= 0.0 && first.l >= 0.0);

    // C halves every vector, and Young's inequality caps the gain of A on
    // any L^4 vector by the mean absolute convolution kernel, so the fitted
    // envelope cannot be trivial: cap * c_a + l >= 1/2.
    let n = 8usize;
    let mut cap = 0.0;
    for j in 0..n {
        let mut kj = Complex64::default();
        for k in 0..n {
            let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
            let m = 1.0 + signed * signed;
            let phase = 2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
            kj += c(m * phase.cos(), m * phase.sin());
        }
        cap += kj.norm() / n as f64;
    }
    assert!(cap >= 1.0);
    assert!(cap * first.c_a + first.l >= 0.5 - 1e-9, "cap {cap}, report {first:?}");
}
