use gridspace::{make_grid, SpaceTag};
use num_complex::Complex64;
use opcore::{lizorkin_certificate, OperatorHandle};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn tag() -> SpaceTag {
    SpaceTag::new(0.0, 2.0)
}

#[test]
fn constant_symbol_certificate() {
    let one = OperatorHandle::scalar_multiplier("one", tag(), tag(), 0.0, |_| c(1.0));
    let cert = lizorkin_certificate(&one, 1, &[8, 16]).unwrap();
    assert!((cert.sup_bound - 1.0).abs() < 1e-14);
    assert!((cert.lizorkin_bound - 1.0).abs() < 1e-14);
    assert!(cert.stable);
    for (alpha, value) in &cert.per_alpha {
        if alpha.iter().any(|a| *a == 1) {
            assert!(*value < 1e-12, "derivative term should vanish, got {value}");
        }
    }
}

#[test]
fn resolvent_quotient_symbol_is_stable() {
    // 1 + |xi|^4 / (lambda - |xi|^2)^2 at lambda = -1: bounded with bounded
    // xi-derivative weight, so refinements settle down.
    let m = OperatorHandle::scalar_multiplier("quotient", tag(), tag(), 0.0, |xi| {
        let a = xi[0] * xi[0];
        c(1.0 + a * a / ((1.0 + a) * (1.0 + a)))
    });
    let cert = lizorkin_certificate(&m, 1, &[32, 64, 128]).unwrap();
    assert!(cert.stable, "refinement table {:?}", cert.refinements);

    // Independent check of the alpha = 0 term: lattice max of the symbol.
    let grid = make_grid(1, 128).unwrap();
    let mut lattice_max = 0.0f64;
    for flat in grid.modes() {
        let a = grid.abs2(flat);
        lattice_max = lattice_max.max(1.0 + a * a / ((1.0 + a) * (1.0 + a)));
    }
    assert!((cert.sup_bound - lattice_max).abs() < 1e-12);
    assert!(cert.lizorkin_bound < 2.5);

    // Nested lattices make each refinement bound nondecreasing.
    for pair in cert.refinements.windows(2) {
        assert!(pair[1].1 >= pair[0].1 - 1e-12);
    }
}

#[test]
fn absolute_value_symbol_is_flagged_unstable() {
    let m = OperatorHandle::scalar_multiplier("abs", tag(), tag(), 1.0, |xi| {
        c((xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt())
    });
    let cert = lizorkin_certificate(&m, 1, &[16, 32, 64]).unwrap();
    assert!(!cert.stable, "xi * d|xi| grows linearly, table {:?}", cert.refinements);
    let last = cert.refinements.last().unwrap().1;
    let prev = cert.refinements[cert.refinements.len() - 2].1;
    assert!(last > 1.5 * prev, "expected roughly doubling growth: {prev} -> {last}");
}
