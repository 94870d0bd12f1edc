use gridspace::{make_grid, GridVector, SpaceTag};
use num_complex::Complex64;
use proptest::prelude::*;

fn arb_vector(d: usize, n: usize, seed: u64) -> GridVector {
    use rand::SeedableRng;
    let grid = make_grid(d, n).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    GridVector::random_freq(grid, 1, &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_is_identity(d in 1usize..=3, log_n in 2u32..=4, seed in 0u64..1000) {
        let n = 1usize << log_n;
        let v = arb_vector(d, n, seed);
        let grid = v.grid();
        let phys = v.phys().as_ref().clone();
        let back = GridVector::from_phys(grid, 1, phys).unwrap();
        let scale = v.max_abs_freq().max(1e-3);
        for flat in grid.modes() {
            prop_assert!((v.freq_at(0, flat) - back.freq_at(0, flat)).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn norm_is_representation_independent(seed in 0u64..1000, p in prop::sample::select(vec![1.5f64, 2.0, 3.0])) {
        let v = arb_vector(2, 8, seed);
        let grid = v.grid();
        // Same data entering on the physical side must give the same norm.
        let w = GridVector::from_phys(grid, 1, v.phys().as_ref().clone()).unwrap();
        let tag = SpaceTag::new(0.7, p);
        let a = v.norm(&tag).unwrap();
        let b = w.norm(&tag).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn projection_is_idempotent_and_mass_removing(seed in 0u64..1000) {
        let v = arb_vector(1, 16, seed);
        let p1 = v.project_zero_mode();
        let p2 = p1.project_zero_mode();
        let grid = v.grid();
        prop_assert!(p1.freq_at(0, grid.zero_mode()).norm() == 0.0);
        for flat in grid.modes() {
            prop_assert_eq!(p1.freq_at(0, flat), p2.freq_at(0, flat));
        }
    }

    #[test]
    fn parseval_holds_for_random_vectors(seed in 0u64..1000) {
        let v = arb_vector(2, 8, seed);
        let tag = SpaceTag::new(0.0, 2.0);
        let by_tag = v.norm(&tag).unwrap();
        let grid = v.grid();
        let phys = v.phys();
        let direct = (phys.iter().map(|z| z.norm_sqr()).sum::<f64>() / grid.points() as f64).sqrt();
        prop_assert!((by_tag - direct).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn plane_waves_are_eigenvectors_of_the_lattice(k in -4i64..4, seed in 0u64..100) {
        let _ = seed;
        let grid = make_grid(1, 8).unwrap();
        let v = GridVector::from_phys_fn(grid, 1, |x, _| (Complex64::new(0.0, 1.0) * k as f64 * x[0]).exp());
        let flat = grid.flat_of([k, 0, 0]).unwrap();
        prop_assert!((v.freq_at(0, flat) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }
}
