mod common;

use common::{low_rank_tensor, random_rotation, random_tensor, rel_err};
use proptest::prelude::*;
use tlvar::tensor::{hosvd, sin_theta_distance};
use tlvar::var::{gaussian_matrix, random_orthonormal, rng_from};
use tlvar::{Mode, Tensor3};

fn dims() -> impl Strategy<Value = [usize; 3]> {
    (1usize..6, 1usize..6, 1usize..5).prop_map(|(a, b, c)| [a, b, c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_matricize(d in dims(), seed in any::<u64>()) {
        let t = random_tensor(&mut rng_from(seed), d);
        for mode in Mode::ALL {
            let back = Tensor3::fold(&t.matricize(mode), mode, d).unwrap();
            prop_assert_eq!(&back, &t);
        }
    }

    #[test]
    fn mode_product_commutes_with_matricization(d in dims(), rows in 1usize..5, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let t = random_tensor(&mut rng, d);
        for mode in Mode::ALL {
            let m = gaussian_matrix(&mut rng, rows, d[mode.index()]);
            let lhs = t.mode_product(&m, mode).unwrap().matricize(mode);
            let rhs = &m * t.matricize(mode);
            prop_assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn frobenius_norm_agrees_across_matricizations(d in dims(), seed in any::<u64>()) {
        let t = random_tensor(&mut rng_from(seed), d);
        let norm = t.frobenius_norm();
        for mode in Mode::ALL {
            prop_assert!((t.matricize(mode).norm() - norm).abs() <= 1e-12 * norm.max(1.0));
        }
    }

    #[test]
    fn hosvd_is_exact_at_the_true_ranks(
        d in (2usize..7, 2usize..7, 2usize..5),
        seed in any::<u64>(),
    ) {
        let dims = [d.0, d.1, d.2];
        let mut rng = rng_from(seed);
        // Feasible ranks: each is at most the product of the other two.
        let r1 = 1 + (seed as usize) % dims[0].min(2);
        let r2 = 1 + (seed as usize / 7) % dims[1].min(2);
        let r3 = 1 + (seed as usize / 49) % dims[2].min(r1 * r2).min(2);
        let ranks = [r1.min(r2 * r3), r2.min(r1 * r3), r3];
        let t = low_rank_tensor(&mut rng, dims, ranks);
        let fit = hosvd(&t, ranks).unwrap();
        prop_assert!(rel_err(&fit.reconstruct().unwrap(), &t) <= 1e-8);
    }

    #[test]
    fn sin_theta_is_symmetric_and_rotation_invariant(n in 2usize..8, seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let r = 1 + (seed as usize) % (n - 1);
        let a = random_orthonormal(&mut rng, n, r);
        let b = random_orthonormal(&mut rng, n, r);
        let d = sin_theta_distance(&a, &b).unwrap();
        prop_assert!((d - sin_theta_distance(&b, &a).unwrap()).abs() < 1e-12);
        let o = random_rotation(&mut rng, r);
        prop_assert!((d - sin_theta_distance(&(&a * &o), &b).unwrap()).abs() < 1e-12);
        prop_assert!((d - sin_theta_distance(&a, &(&b * &o)).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
