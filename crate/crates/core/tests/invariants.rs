//! Property tests over random instances.

use dides_core::corr_core::{cnces_f, ln_cnces_f};
use dides_core::hat_algebra::{counterfactual_shares, invert_shares};
use dides_core::incidence::passthrough_matrix;
use dides_core::labor_supply::elasticity_from_ln_x;
use dides_core::spectral::eigendecompose;
use dides_core::synthetic::{rng, Instance};
use nalgebra::DVector;
use proptest::prelude::*;

fn instance(seed: u64, n: usize) -> Instance {
    Instance::random(&mut rng(seed), n, 3, 0.95, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn elasticity_structure(seed in any::<u64>(), n in 2usize..=50) {
        let inst = instance(seed, n);
        let m = elasticity_from_ln_x(&inst.ln_x, &inst.skills, inst.theta).unwrap();
        prop_assert!(m.max_row_sum() < 1e-10);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    prop_assert!(m.theta_matrix[(i, j)] <= 0.0);
                }
            }
        }
        let spectrum = eigendecompose(&m).unwrap();
        let zeros = spectrum.eigenvalues.iter().filter(|l| l.abs() < 1e-8).count();
        prop_assert_eq!(zeros, 1);
        prop_assert!(spectrum.eigenvalues.iter().skip(1).all(|l| *l > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weighted_elasticity_is_symmetric(seed in any::<u64>(), n in 2usize..=30) {
        let inst = instance(seed, n);
        let m = elasticity_from_ln_x(&inst.ln_x, &inst.skills, inst.theta).unwrap();
        let weighted = nalgebra::DMatrix::from_diagonal(&m.shares) * &m.theta_matrix;
        let scale = weighted.amax().max(1e-300);
        prop_assert!((&weighted - weighted.transpose()).amax() <= 1e-12 * scale);
    }

    #[test]
    fn passthrough_eigenvalues(seed in any::<u64>(), n in 2usize..=20, sigma in 0.2f64..5.0) {
        let inst = instance(seed, n);
        let m = elasticity_from_ln_x(&inst.ln_x, &inst.skills, inst.theta).unwrap();
        let spectrum = eigendecompose(&m).unwrap();
        let delta = passthrough_matrix(&m, sigma).unwrap();
        for k in 0..n {
            let u = spectrum.vector(k);
            let expected = &u * (sigma / (sigma + spectrum.eigenvalues[k]));
            prop_assert!((&delta * &u - expected).amax() < 1e-9);
        }
    }

    #[test]
    fn correlation_function_is_homogeneous(seed in any::<u64>(), n in 1usize..=20, c in -3.0f64..3.0) {
        let inst = instance(seed, n);
        let shifted = inst.ln_x.add_scalar(c);
        let lhs = ln_cnces_f(&shifted, &inst.skills);
        let rhs = c + ln_cnces_f(&inst.ln_x, &inst.skills);
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        let direct = cnces_f(&inst.ln_x.map(f64::exp), &inst.skills).unwrap();
        prop_assert!((direct.ln() - rhs + c).abs() < 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn shares_on_simplex_and_scale_free(seed in any::<u64>(), n in 2usize..=30, scale in 0.1f64..10.0) {
        let inst = instance(seed, n);
        let pi = inst.shares();
        prop_assert!(pi.iter().all(|p| *p > 0.0));
        prop_assert!((pi.sum() - 1.0).abs() < 1e-12);
        let mut r = rng(seed ^ 0x5eed);
        let w_hat = DVector::from_fn(n, |_, _| 0.7 + 0.6 * rand::Rng::random::<f64>(&mut r));
        let (a, _) = counterfactual_shares(&pi, &w_hat, &inst.skills, inst.theta).unwrap();
        let (b, _) = counterfactual_shares(&pi, &(&w_hat * scale), &inst.skills, inst.theta).unwrap();
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
        prop_assert!((&a - &b).amax() < 1e-12);
    }

    #[test]
    fn inversion_round_trip(seed in any::<u64>(), n in 2usize..=40) {
        let inst = instance(seed, n);
        let pi = inst.shares();
        let adj = invert_shares(&pi, &inst.skills).unwrap();
        let back = dides_core::hat_algebra::forward_ln_shares(&adj.pi_tilde.map(f64::ln), &inst.skills).map(f64::exp);
        prop_assert!((&back - &pi).amax() < 1e-11);
        // Adjusted shares are normalized so that F(π̃) = 1.
        prop_assert!(ln_cnces_f(&adj.pi_tilde.map(f64::ln), &inst.skills).abs() < 1e-10);
    }
}
