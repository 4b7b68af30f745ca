//! Static model against independent numerical oracles.

use dides_core::corr_core::{evaluate_nests, sample_conditional_means, sample_choice_frequencies, FrechetParams, SkillSpace};
use dides_core::hat_algebra::{counterfactual_shares, invert_shares, wage_index_change};
use dides_core::incidence::{
    first_order_incidence, first_order_output_change, passthrough_matrix, solve_counterfactual_equilibrium,
    solve_counterfactual_equilibrium_from, Shock,
};
use dides_core::labor_supply::{
    conditional_mean_productivity, effective_elasticity_matrix, effective_labor_supply, elasticity_from_ln_x,
    elasticity_matrix, employment_shares, shares_from_ln_x, Economy,
};
use dides_core::numeric::SolverOptions;
use dides_core::spectral::{eigendecompose, project_shock, spectral_incidence};
use dides_core::synthetic::{rng, two_by_two, Instance};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn normal_vec<R: Rng>(r: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

#[test]
fn elasticity_matches_finite_differences() {
    let mut r = rng(101);
    for k in 0..20 {
        let inst = Instance::random(&mut r, 3 + k % 10, 3, 0.95, 1.0);
        let n = inst.skills.n_occupations();
        let analytic = elasticity_from_ln_x(&inst.ln_x, &inst.skills, inst.theta).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let mut up = inst.ln_x.clone();
            let mut dn = inst.ln_x.clone();
            up[j] += inst.theta * h;
            dn[j] -= inst.theta * h;
            let pu = shares_from_ln_x(&up, &inst.skills).unwrap().pi.map(f64::ln);
            let pd = shares_from_ln_x(&dn, &inst.skills).unwrap().pi.map(f64::ln);
            let col = (pu - pd) / (2.0 * h);
            worst = worst.max((col - analytic.theta_matrix.column(j)).amax());
        }
        assert!(worst < 1e-5, "instance {k}: {worst:e}");
    }
}

#[test]
fn sampler_frequencies_match_shares() {
    let fixtures: Vec<(SkillSpace, Vec<f64>, Vec<f64>, f64)> = vec![
        (
            SkillSpace::from_rows(&[&[0.7, 0.3], &[0.5, 0.5], &[0.2, 0.8], &[0.9, 0.1], &[0.4, 0.6]], &[0.6, 0.3])
                .unwrap(),
            vec![1.0, 0.8, 1.3, 0.6, 1.1],
            vec![1.0, 1.1, 0.9, 1.2, 1.0],
            2.0,
        ),
        (SkillSpace::independent(4), vec![1.0, 2.0, 0.5, 1.5], vec![1.0; 4], 1.5),
        (two_by_two(0.8).unwrap(), vec![1.0, 1.2, 0.7, 0.9], vec![1.0, 0.9, 1.1, 1.0], 3.0),
        (
            SkillSpace::from_rows(&[&[0.6, 0.2, 0.2], &[0.1, 0.8, 0.1], &[0.3, 0.3, 0.4]], &[0.9, 0.5, 0.2]).unwrap(),
            vec![0.5, 1.5, 1.0],
            vec![1.2, 0.9, 1.0],
            1.1,
        ),
        (
            SkillSpace::from_rows(&[&[1.0, 0.0], &[0.5, 0.5], &[0.0, 1.0]], &[0.95, 0.95]).unwrap(),
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.05, 0.95],
            4.0,
        ),
    ];
    for (k, (skills, a, w, theta)) in fixtures.into_iter().enumerate() {
        let n = skills.n_occupations();
        let frechet = FrechetParams::new(theta, DVector::from_vec(a)).unwrap();
        let w = DVector::from_vec(w);
        let econ = Economy::new(skills.clone(), frechet.clone(), w.clone(), 1.5).unwrap();
        let pi = employment_shares(&econ).unwrap().pi;
        let freq = sample_choice_frequencies(&frechet, &skills, &w, 1_000_000, 40 + k as u64).unwrap();
        let worst = (&freq - &pi).amax();
        assert!(worst < 0.003, "fixture {k}: {worst}");
        assert!((freq.sum() - 1.0).abs() < 1e-12 && n == freq.len());
    }
}

#[test]
fn selected_productivity_matches_simulation() {
    let skills = SkillSpace::from_rows(&[&[0.7, 0.3], &[0.2, 0.8], &[0.5, 0.5]], &[0.5, 0.3]).unwrap();
    let frechet = FrechetParams::new(3.0, DVector::from_vec(vec![1.0, 0.8, 1.2])).unwrap();
    let w = DVector::from_vec(vec![1.0, 1.2, 0.9]);
    let econ = Economy::new(skills.clone(), frechet.clone(), w.clone(), 1.5).unwrap();
    let analytic = conditional_mean_productivity(&econ).unwrap();
    let sim = sample_conditional_means(&frechet, &skills, &w, 1_000_000, 5).unwrap();
    let rel = (sim.conditional_means - &analytic).component_div(&analytic).amax();
    assert!(rel < 0.01, "relative error {rel}");
}

#[test]
fn effective_elasticity_matches_finite_differences() {
    let skills = SkillSpace::from_rows(&[&[0.7, 0.3], &[0.2, 0.8], &[0.5, 0.5], &[0.1, 0.9]], &[0.6, 0.4]).unwrap();
    let frechet = FrechetParams::new(2.5, DVector::from_vec(vec![1.0, 0.8, 1.2, 0.9])).unwrap();
    let w = DVector::from_vec(vec![1.0, 1.2, 0.9, 1.1]);
    let econ = Economy::new(skills, frechet, w.clone(), 1.5).unwrap();
    for delta in [0.0, 0.3, 1.0] {
        let analytic = effective_elasticity_matrix(&econ, delta).unwrap();
        let h: f64 = 1e-6;
        for j in 0..4 {
            let mut up = w.clone();
            let mut dn = w.clone();
            up[j] *= h.exp();
            dn[j] *= (-h).exp();
            let lu = effective_labor_supply(&econ.with_wages(up).unwrap(), delta).unwrap().map(f64::ln);
            let ld = effective_labor_supply(&econ.with_wages(dn).unwrap(), delta).unwrap().map(f64::ln);
            let col = (lu - ld) / (2.0 * h);
            let err = (col - analytic.theta_matrix.column(j)).amax();
            assert!(err < 1e-6, "delta {delta}, column {j}: {err:e}");
        }
    }
}

#[test]
fn hat_algebra_matches_levels() {
    let mut r = rng(202);
    for k in 0..100 {
        let inst = Instance::random(&mut r, 2 + k % 25, 3, 0.95, 1.0);
        let n = inst.skills.n_occupations();
        let w_hat = normal_vec(&mut r, n, 0.2).map(f64::exp);
        let pi = inst.shares();
        let (pp, _) = counterfactual_shares(&pi, &w_hat, &inst.skills, inst.theta).unwrap();
        let shifted = &inst.ln_x + w_hat.map(|v| inst.theta * v.ln());
        let direct = shares_from_ln_x(&shifted, &inst.skills).unwrap().pi;
        assert!((&pp - &direct).amax() < 1e-10, "instance {k}");
        let adj = invert_shares(&pi, &inst.skills).unwrap();
        let w_index = wage_index_change(&adj.pi_tilde, &w_hat, &inst.skills, inst.theta).unwrap();
        let direct_index = ((evaluate_nests(&shifted, &inst.skills).ln_f
            - evaluate_nests(&inst.ln_x, &inst.skills).ln_f)
            / inst.theta)
            .exp();
        assert!((w_index - direct_index).abs() < 1e-10 * direct_index, "instance {k}");
        let ones = DVector::from_element(n, 1.0);
        let (same, _) = counterfactual_shares(&pi, &ones, &inst.skills, inst.theta).unwrap();
        assert_eq!(same, pi, "instance {k}");
        assert_eq!(wage_index_change(&adj.pi_tilde, &ones, &inst.skills, inst.theta).unwrap(), 1.0);
    }
}

#[test]
fn spectral_incidence_equals_matrix_incidence() {
    let mut r = rng(303);
    for k in 0..50 {
        let inst = Instance::random(&mut r, 2 + k % 30, 3, 0.9, 1.0);
        let n = inst.skills.n_occupations();
        let theta_m = elasticity_from_ln_x(&inst.ln_x, &inst.skills, inst.theta).unwrap();
        let sigma = 0.5 + 2.0 * r.random::<f64>();
        let d_ln_alpha = normal_vec(&mut r, n, 0.05);
        let d_ln_y = 0.01 * r.random::<f64>();
        let matrix = first_order_incidence(&theta_m, sigma, &Shock::task_shares(d_ln_alpha.clone()).with_d_ln_y(d_ln_y))
            .unwrap();
        let spectrum = eigendecompose(&theta_m).unwrap();
        let proj = project_shock(&spectrum, &(&d_ln_alpha / sigma)).unwrap();
        let spectral = spectral_incidence(&spectrum, &proj, sigma, d_ln_y).unwrap();
        let err = (&spectral - &matrix.d_ln_w).amax();
        assert!(err < 1e-8, "instance {k}: {err:e}");
    }
}

#[test]
fn two_nest_illustration() {
    let theta = 1.1;
    let sigma = 1.34;
    for rho in [0.3, 0.77] {
        let skills = two_by_two(rho).unwrap();
        let theta_m = elasticity_from_ln_x(&DVector::zeros(4), &skills, theta).unwrap();
        let spectrum = eigendecompose(&theta_m).unwrap();
        let expected = [0.0, theta, theta / (1.0 - rho), theta / (1.0 - rho)];
        for (l, e) in spectrum.eigenvalues.iter().zip(expected) {
            assert!((l - e).abs() < 1e-10, "λ = {l}, expected {e}");
        }
        let pattern = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 1.0, -1.0, 0.0, -1.0],
        );
        // Non-degenerate modes match up to scale; the repeated pair spans the same plane.
        for n in 0..2 {
            let p = pattern.column(n).normalize();
            let u = spectrum.vector(n);
            assert!((u.dot(&p).abs() - 1.0).abs() < 1e-10);
        }
        let plane = pattern.columns(2, 2).into_owned();
        let proj = &plane * plane.clone().pseudo_inverse(1e-12).unwrap();
        for n in 2..4 {
            let u = spectrum.vector(n);
            assert!((&proj * &u - &u).amax() < 1e-10);
        }
        let delta = passthrough_matrix(&theta_m, sigma).unwrap();
        let within = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0]);
        let response = &delta * &within;
        let factor = sigma * (1.0 - rho) / (sigma * (1.0 - rho) + theta);
        assert!((&response - &within * factor).amax() < 1e-10);
    }
}

struct Setup {
    skills: SkillSpace,
    pi: DVector<f64>,
    wagebill: DVector<f64>,
    theta: f64,
    sigma: f64,
    shock: DVector<f64>,
}

fn equilibrium_setup(seed: u64) -> Setup {
    let mut r = rng(seed);
    let inst = Instance::random(&mut r, 8, 3, 0.8, 0.7);
    let n = 8;
    let wagebill = {
        let v = DVector::from_fn(n, |_, _| 0.5 + r.random::<f64>());
        let s = v.sum();
        v / s
    };
    let shock = normal_vec(&mut r, n, 1.0);
    Setup { pi: inst.shares(), skills: inst.skills, wagebill, theta: inst.theta, sigma: 1.34, shock }
}

fn opts() -> SolverOptions {
    SolverOptions { tol: 1e-13, max_iter: 10_000, damping: 0.5 }
}

#[test]
fn nonlinear_equilibrium_converges_to_first_order() {
    for seed in [1u64, 2, 3] {
        let s = equilibrium_setup(seed);
        let ln_pi_tilde = invert_shares(&s.pi, &s.skills).unwrap().pi_tilde.map(f64::ln);
        let theta_m = elasticity_from_ln_x(&ln_pi_tilde, &s.skills, s.theta).unwrap();
        let mut errors = Vec::new();
        for k in 0..4 {
            let eps = 0.05 / 2f64.powi(k);
            let d_ln_alpha = &s.shock * eps;
            let eq = solve_counterfactual_equilibrium(
                &s.pi,
                &s.wagebill,
                &d_ln_alpha.map(f64::exp),
                s.sigma,
                &s.skills,
                s.theta,
                &opts(),
            )
            .unwrap();
            assert!(eq.residual < 1e-10, "residual {}", eq.residual);
            let d_ln_y = first_order_output_change(&theta_m, s.sigma, &s.wagebill, &d_ln_alpha).unwrap();
            let lin = first_order_incidence(&theta_m, s.sigma, &Shock::task_shares(d_ln_alpha).with_d_ln_y(d_ln_y))
                .unwrap();
            errors.push((eq.w_hat.map(f64::ln) - lin.d_ln_w).amax());
        }
        for pair in errors.windows(2) {
            let order = (pair[0] / pair[1]).log2();
            assert!(order >= 1.9, "seed {seed}: order {order:.3} from {errors:?}");
        }
    }
}

#[test]
fn nonlinear_equilibrium_unique_across_starts() {
    let s = equilibrium_setup(9);
    let alpha_hat = (&s.shock * 0.3).map(f64::exp);
    let reference =
        solve_counterfactual_equilibrium(&s.pi, &s.wagebill, &alpha_hat, s.sigma, &s.skills, s.theta, &opts()).unwrap();
    let mut r = rng(99);
    for _ in 0..5 {
        let start = normal_vec(&mut r, 8, 0.5);
        let eq = solve_counterfactual_equilibrium_from(
            &s.pi, &s.wagebill, &alpha_hat, s.sigma, &s.skills, s.theta, &start, &opts(),
        )
        .unwrap();
        assert!((&eq.w_hat - &reference.w_hat).amax() < 1e-10);
    }
}

#[test]
fn bisection_oracle_two_occupations() {
    // With two occupations the equilibrium reduces to one equation in the
    // relative wage, solved here by bisection.
    let skills = SkillSpace::independent(2);
    let pi = DVector::from_vec(vec![0.4, 0.6]);
    let wagebill = DVector::from_vec(vec![0.5, 0.5]);
    let (theta, sigma) = (2.0, 1.5);
    let alpha_hat = DVector::from_vec(vec![1.2, 0.9]);
    let eq = solve_counterfactual_equilibrium(&pi, &wagebill, &alpha_hat, sigma, &skills, theta, &opts()).unwrap();
    // Labor supply: L̂_o = ŵ_o^θ / Σ π ŵ^θ. Demand: L̂_o ∝ α̂_o ŵ_o^{-σ}.
    // Relative condition: (ŵ_0/ŵ_1)^{θ+σ} = α̂_0/α̂_1.
    let f = |x: f64| (theta + sigma) * x - (alpha_hat[0] / alpha_hat[1]).ln();
    let (mut lo, mut hi) = (-5.0, 5.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let rel = (eq.w_hat[0] / eq.w_hat[1]).ln();
    assert!((rel - 0.5 * (lo + hi)).abs() < 1e-10);
}

#[test]
fn elasticity_from_economy_matches_ln_x_form() {
    let inst = Instance::random(&mut rng(7), 6, 3, 0.9, 1.0);
    let w = DVector::from_element(6, 1.0);
    let a = inst.ln_x.map(f64::exp);
    let econ = Economy::new(inst.skills.clone(), FrechetParams::new(inst.theta, a).unwrap(), w, 1.3).unwrap();
    let m = elasticity_matrix(&econ).unwrap();
    let n = elasticity_from_ln_x(&inst.ln_x, &inst.skills, inst.theta).unwrap();
    assert!((m.theta_matrix - n.theta_matrix).amax() < 1e-13);
}
