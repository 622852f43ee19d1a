mod common;

use common::{random_rotation, random_task, random_tensor};
use proptest::prelude::*;
use tlvar::baselines::pool_var;
use tlvar::estimator::{
    prox_frobenius, stage1_fit, stage2_fit, PenaltyConfig, StageOneState, StageTwoConfig,
};
use tlvar::tensor::tucker_reconstruct;
use tlvar::var::{random_orthonormal, rng_from};
use tlvar::Tensor3;

fn prox_objective(b: &Tensor3, a: &Tensor3, c: f64) -> f64 {
    0.5 * (b - a).norm_squared() + c * b.frobenius_norm()
}

fn non_increasing(trace: &[f64]) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prox_beats_the_radial_grid_and_random_points(seed in any::<u64>(), c in 0.0f64..3.0) {
        let mut rng = rng_from(seed);
        let a = random_tensor(&mut rng, [3, 2, 2]);
        let out = prox_frobenius(&a, c).unwrap();
        let best = prox_objective(&out, &a, c);
        let norm = a.frobenius_norm();
        for i in 0..=400 {
            let s = 1.5 * norm * i as f64 / 400.0;
            let b = a.scale(s / norm);
            prop_assert!(best <= prox_objective(&b, &a, c) + 1e-12);
        }
        for _ in 0..20 {
            let b = random_tensor(&mut rng, [3, 2, 2]);
            prop_assert!(best <= prox_objective(&b, &a, c) + 1e-12);
        }
    }

    #[test]
    fn stage_two_objective_never_increases(seed in any::<u64>(), lambda0 in 0.0f64..1.0) {
        let mut rng = rng_from(seed);
        let (n, p) = (4, 2);
        let a = random_tensor(&mut rng, [n, n, p]).scale(0.2);
        let task = random_task(&mut rng, &a, 60, 0.5);
        let u = random_orthonormal(&mut rng, n, 2);
        let v = random_orthonormal(&mut rng, n, 3);
        let l = random_orthonormal(&mut rng, p, 1);
        let fit = stage2_fit(&task, &u, &v, &l, lambda0, &StageTwoConfig::default()).unwrap();
        prop_assert!(non_increasing(&fit.trace));
    }

    #[test]
    fn transfer_output_is_an_assembly_identity(seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let (n, p) = (5, 2);
        let a = random_tensor(&mut rng, [n, n, p]).scale(0.2);
        let task = random_task(&mut rng, &a, 80, 0.3);
        let u = random_orthonormal(&mut rng, n, 2);
        let v = random_orthonormal(&mut rng, n, 2);
        let l = random_orthonormal(&mut rng, p, 2);
        let fit = stage2_fit(&task, &u, &v, &l, 0.3, &StageTwoConfig::default()).unwrap();
        let o = [random_rotation(&mut rng, 2), random_rotation(&mut rng, 2), random_rotation(&mut rng, 2)];
        let d = fit.d0.multilinear(&o[0].transpose(), &o[1].transpose(), &o[2].transpose()).unwrap();
        let rotated = &tucker_reconstruct(&d, &(&u * &o[0]), &(&v * &o[1]), &(&l * &o[2])).unwrap() + &fit.r0;
        prop_assert!((&rotated - &fit.a0).frobenius_norm() <= 1e-10 * fit.a0.frobenius_norm().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stage_one_objective_never_increases(seed in any::<u64>(), c in 0.0f64..0.5) {
        let mut rng = rng_from(seed);
        let (n, p, k) = (4, 2, 3);
        let tasks: Vec<_> = (0..k)
            .map(|_| {
                let a = random_tensor(&mut rng, [n, n, p]).scale(0.2);
                random_task(&mut rng, &a, 50, 0.5)
            })
            .collect();
        let ranks = [2, 2, 1];
        let cores = (0..k).map(|_| random_tensor(&mut rng, ranks).scale(0.1)).collect();
        let init = StageOneState::new(
            random_orthonormal(&mut rng, n, 2),
            random_orthonormal(&mut rng, n, 2),
            random_orthonormal(&mut rng, p, 1),
            cores,
        )
        .unwrap();
        let mut cfg = PenaltyConfig::new(vec![c; k], vec![1.0 / k as f64; k]);
        cfg.max_outer = 30;
        let fit = stage1_fit(&tasks, &cfg, init).unwrap();
        prop_assert!(non_increasing(&fit.trace));
    }

    #[test]
    fn pool_output_is_an_assembly_identity(seed in any::<u64>()) {
        let mut rng = rng_from(seed);
        let (n, p, k) = (4, 1, 2);
        let tasks: Vec<_> = (0..k)
            .map(|_| {
                let a = random_tensor(&mut rng, [n, n, p]).scale(0.2);
                random_task(&mut rng, &a, 60, 0.5)
            })
            .collect();
        let a0 = random_tensor(&mut rng, [n, n, p]).scale(0.2);
        let target = random_task(&mut rng, &a0, 40, 0.5);
        let ranks = [2, 2, 1];
        let cores = (0..k).map(|_| random_tensor(&mut rng, ranks).scale(0.1)).collect();
        let init = StageOneState::new(
            random_orthonormal(&mut rng, n, 2),
            random_orthonormal(&mut rng, n, 2),
            random_orthonormal(&mut rng, p, 1),
            cores,
        )
        .unwrap();
        let mut cfg = PenaltyConfig::new(vec![0.0; k], vec![0.5; k]);
        cfg.max_outer = 20;
        let fit = pool_var(&tasks, &target, init, &cfg, &StageTwoConfig::default()).unwrap();
        prop_assert_eq!(fit.r0.frobenius_norm(), 0.0);
        let o1 = random_rotation(&mut rng, 2);
        let o2 = random_rotation(&mut rng, 2);
        let o3 = random_rotation(&mut rng, 1);
        let d = fit.d0.multilinear(&o1.transpose(), &o2.transpose(), &o3.transpose()).unwrap();
        let rotated = tucker_reconstruct(&d, &(&fit.u * &o1), &(&fit.v * &o2), &(&fit.l * &o3)).unwrap();
        prop_assert!((&rotated - &fit.a0).frobenius_norm() <= 1e-10 * fit.a0.frobenius_norm().max(1.0));
    }
}
