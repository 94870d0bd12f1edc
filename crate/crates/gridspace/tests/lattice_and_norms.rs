use gridspace::{make_grid, GridError, GridVector, SpaceTag, ZeroModePolicy, MAX_TOTAL_POINTS};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::time::Instant;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn one_dimensional_grid_has_centered_frequencies() {
    let grid = make_grid(1, 8).unwrap();
    let freqs: HashSet<i64> = grid.modes().map(|flat| grid.k_at(flat)[0]).collect();
    let expected: HashSet<i64> = (-4..4).collect();
    assert_eq!(freqs, expected);
    assert_eq!(grid.zero_mode(), grid.flat_of([0, 0, 0]).unwrap());
}

#[test]
fn two_dimensional_grid_point_count_and_zero_mode() {
    let grid = make_grid(2, 4).unwrap();
    assert_eq!(grid.points(), 16);
    let zero = grid.zero_mode();
    assert_eq!(grid.k_at(zero), [0, 0, 0]);
}

#[test]
fn large_grid_constructs_quickly() {
    let start = Instant::now();
    let grid = make_grid(3, 64).unwrap();
    assert_eq!(grid.points(), 262144);
    let count = grid.modes().count();
    assert_eq!(count, 262144);
    assert!(start.elapsed().as_millis() < 50, "took {:?}", start.elapsed());
}

#[test]
fn bad_grid_parameters_are_rejected() {
    assert_eq!(make_grid(1, 6).unwrap_err(), GridError::NotPowerOfTwo(6));
    assert_eq!(make_grid(1, 2).unwrap_err(), GridError::NotPowerOfTwo(2));
    assert_eq!(make_grid(0, 8).unwrap_err(), GridError::DimensionOutOfRange(0));
    assert_eq!(make_grid(4, 8).unwrap_err(), GridError::DimensionOutOfRange(4));
    assert_eq!(
        make_grid(2, 2048).unwrap_err(),
        GridError::TooManyPoints { points: 2048 * 2048, cap: MAX_TOTAL_POINTS }
    );
}

#[test]
fn frequency_set_negation_symmetric_except_nyquist() {
    for (d, n) in [(1usize, 8usize), (2, 8), (3, 4)] {
        let grid = make_grid(d, n).unwrap();
        let half = (n / 2) as i64;
        for flat in grid.modes() {
            let k = grid.k_at(flat);
            let neg = [-k[0], -k[1], -k[2]];
            let on_nyquist = (0..d).any(|a| k[a] == -half);
            assert_eq!(grid.contains(neg), !on_nyquist, "k = {k:?}");
        }
    }
}

#[test]
fn constant_vector_has_unit_mass_norm() {
    let grid = make_grid(2, 16).unwrap();
    let v = GridVector::constant(grid, &[c(1.0, 0.0)]);
    let tag = SpaceTag::new(0.0, 2.0);
    assert!((v.norm(&tag).unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn single_mode_homogeneous_norm_is_frequency_magnitude() {
    let grid = make_grid(1, 16).unwrap();
    let v = GridVector::delta_mode(grid, [2, 0, 0], 0, 1, c(1.0, 0.0)).unwrap();
    let tag = SpaceTag::homogeneous(1.0, 2.0, ZeroModePolicy::Project);
    assert!((v.norm(&tag).unwrap() - 2.0).abs() < 1e-14);
}

#[test]
fn parseval_matches_physical_euclidean_norm() {
    let grid = make_grid(2, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v = GridVector::random_freq(grid, 2, &mut rng);
    let tag = SpaceTag::new(0.0, 2.0).with_components(2);
    let by_tag = v.norm(&tag).unwrap();
    let phys = v.phys();
    let direct: f64 = (phys.iter().map(|z| z.norm_sqr()).sum::<f64>() / grid.points() as f64).sqrt();
    assert!((by_tag - direct).abs() <= 1e-12 * direct.max(1.0));
}

#[test]
fn transforms_round_trip() {
    let grid = make_grid(3, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = GridVector::random_freq(grid, 1, &mut rng);
    let phys = v.phys().as_ref().clone();
    let w = GridVector::from_phys(grid, 1, phys).unwrap();
    let scale = v.max_abs_freq();
    for flat in grid.modes() {
        assert!((v.freq_at(0, flat) - w.freq_at(0, flat)).norm() <= 1e-12 * scale);
    }
}

#[test]
fn plane_wave_sampling_hits_a_single_coefficient() {
    let grid = make_grid(1, 16).unwrap();
    let v = GridVector::from_phys_fn(grid, 1, |x, _| (c(0.0, 1.0) * 3.0 * x[0]).exp());
    for flat in grid.modes() {
        let expected = if grid.k_at(flat)[0] == 3 { 1.0 } else { 0.0 };
        assert!((v.freq_at(0, flat).norm() - expected).abs() < 1e-12);
    }
}

#[test]
fn zero_mode_projection_examples() {
    let grid = make_grid(1, 8).unwrap();

    let constant = GridVector::constant(grid, &[c(3.0, -1.0)]);
    let projected = constant.project_zero_mode();
    assert!(projected.max_abs_freq() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mean_free = GridVector::random_mean_free(grid, 1, &mut rng);
    let again = mean_free.project_zero_mode();
    for flat in grid.modes() {
        assert_eq!(mean_free.freq_at(0, flat), again.freq_at(0, flat));
    }

    // 1 + e^{ix} keeps only the oscillating part.
    let v = GridVector::from_phys_fn(grid, 1, |x, _| c(1.0, 0.0) + (c(0.0, 1.0) * x[0]).exp());
    let w = v.project_zero_mode();
    for flat in grid.modes() {
        let expected = if grid.k_at(flat)[0] == 1 { 1.0 } else { 0.0 };
        assert!((w.freq_at(0, flat) - c(expected, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn homogeneous_norm_monotone_in_smoothness() {
    let grid = make_grid(2, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Every nonzero integer mode has |xi| >= 1, so mean-free content qualifies.
    let v = GridVector::random_mean_free(grid, 1, &mut rng);
    let mut last = 0.0f64;
    for s in [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        let tag = SpaceTag::homogeneous(s, 2.0, ZeroModePolicy::Project);
        let value = v.norm(&tag).unwrap();
        assert!(value >= last - 1e-12 * value.max(1.0), "s = {s}");
        last = value;
    }
}

#[test]
fn reject_policy_flags_zero_mode_content() {
    let grid = make_grid(1, 8).unwrap();
    let v = GridVector::constant(grid, &[c(1.0, 0.0)]);
    let tag = SpaceTag::homogeneous(-1.0, 2.0, ZeroModePolicy::Reject);
    match v.norm(&tag) {
        Err(GridError::ZeroModeRejected { component: 0, .. }) => {}
        other => panic!("expected zero-mode rejection, got {other:?}"),
    }
    let w = v.project_zero_mode();
    assert_eq!(w.norm(&tag).unwrap(), 0.0);
}

#[test]
fn shift_policy_gives_the_zero_mode_unit_weight() {
    let grid = make_grid(1, 8).unwrap();
    let v = GridVector::constant(grid, &[c(2.0, 0.0)]);
    for s in [-1.0, 0.0, 1.5] {
        let tag = SpaceTag::homogeneous(s, 2.0, ZeroModePolicy::Shift);
        assert!((v.norm(&tag).unwrap() - 2.0).abs() < 1e-14, "s = {s}");
    }
}

#[test]
fn mixed_component_smoothness_weights_each_component() {
    let grid = make_grid(1, 8).unwrap();
    // Component 0 tagged H^2, component 1 tagged L^2, both holding e^{i2x}.
    let mut data = vec![c(0.0, 0.0); 2 * grid.points()];
    let flat = grid.flat_of([2, 0, 0]).unwrap();
    data[flat] = c(1.0, 0.0);
    data[grid.points() + flat] = c(1.0, 0.0);
    let v = GridVector::from_freq(grid, 2, data).unwrap();
    let tag = SpaceTag::new(0.0, 2.0)
        .with_components(2)
        .with_component_smoothness(vec![2.0, 0.0]);
    let expected = ((5.0f64 * 5.0) + 1.0).sqrt(); // (1+4)^(2/2) = 5 on comp 0
    assert!((v.norm(&tag).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn lp_norm_of_constant_is_its_magnitude() {
    let grid = make_grid(2, 8).unwrap();
    let v = GridVector::constant(grid, &[c(0.0, 2.0)]);
    for p in [1.5, 3.0, 4.0] {
        let tag = SpaceTag::new(0.0, p);
        assert!((v.norm(&tag).unwrap() - 2.0).abs() < 1e-12, "p = {p}");
    }
}

#[test]
fn component_count_mismatch_is_reported() {
    let grid = make_grid(1, 8).unwrap();
    let v = GridVector::constant(grid, &[c(1.0, 0.0)]);
    let tag = SpaceTag::new(0.0, 2.0).with_components(2);
    assert_eq!(
        v.norm(&tag).unwrap_err(),
        GridError::ComponentMismatch { expected: 2, found: 1 }
    );
}
