//! Dynamic hat algebra against two independently solved levels paths.

use dides_core::corr_core::SkillSpace;
use dides_core::corr_core::FrechetParams;
use dides_core::dynamics::{
    calibrate_demand_from_wage_path, dynamic_hat_counterfactual, rescale_shock_by_exposure, solve_levels_path,
    welfare_ev, DynamicParams, FundamentalHats, Fundamentals,
};
use dides_core::labor_supply::{employment_shares, Economy};
use dides_core::numeric::SolverOptions;
use nalgebra::{DMatrix, DVector};

fn opts() -> SolverOptions {
    SolverOptions { tol: 1e-13, max_iter: 5000, damping: 0.5 }
}

fn check(params: &DynamicParams, base: &Fundamentals, ratios: &[DVector<f64>], l_init: &DVector<f64>, sigma: f64) {
    let horizon = base.horizon();
    let n = params.n_occupations();
    let ones = vec![DVector::from_element(n, 1.0); horizon + 1];
    let hats = FundamentalHats::from_level_ratios(ratios.to_vec(), ones, vec![1.0; horizon + 1]).unwrap();
    check_hats(params, base, &hats, l_init, sigma);
}

fn check_hats(params: &DynamicParams, base: &Fundamentals, hats: &FundamentalHats, l_init: &DVector<f64>, sigma: f64) {
    let horizon = base.horizon();
    let hats = hats.clone();
    let cf_fund = base.apply(&hats).unwrap().tail(1).unwrap();
    let b = solve_levels_path(base, params, l_init, sigma, None, &opts()).unwrap();
    let c = solve_levels_path(&cf_fund, params, &b.panel.l[0], sigma, None, &opts()).unwrap();
    let h = dynamic_hat_counterfactual(&b.panel, &hats, params, sigma, &opts()).unwrap();
    let mut worst_l: f64 = 0.0;
    let mut worst_w: f64 = 0.0;
    for t in 1..=horizon {
        worst_l = worst_l.max((&h.l_prime[t] - &c.panel.l[t - 1]).amax());
        let ratio = c.panel.w[t - 1].component_div(&b.panel.w[t]);
        worst_w = worst_w.max((&h.w_ratio[t] - ratio).amax());
    }
    let ev = welfare_ev(&h);
    let mut worst_ev: f64 = 0.0;
    for t in 1..=horizon {
        let dv = (&c.values[t - 1] - &b.values[t]) * (1.0 - params.beta());
        worst_ev = worst_ev.max((&ev[t - 1] - dv).amax());
    }
    println!("L {worst_l:.3e} w {worst_w:.3e} ev {worst_ev:.3e} iters {}", h.iterations);
    assert!(worst_l < 1e-8, "allocations differ by {worst_l:e}");
    assert!(worst_w < 1e-8, "wages differ by {worst_w:e}");
    assert!(worst_ev < 1e-8, "EV differs by {worst_ev:e}");
}

#[test]
fn permanent_shock() {
    let skills = SkillSpace::from_rows(&[&[0.8, 0.2], &[0.6, 0.4], &[0.1, 0.9], &[0.3, 0.7]], &[0.6, 0.4]).unwrap();
    let tau = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 + 0.2 * (i as f64 - j as f64).abs() });
    let params = DynamicParams::new(0.9, 0.7, tau, skills).unwrap();
    let horizon = 12;
    let base = Fundamentals::constant(
        DVector::from_vec(vec![1.0, 0.8, 1.2, 0.9]),
        DVector::from_vec(vec![0.3, 0.3, 0.2, 0.2]),
        1.0,
        horizon,
    )
    .unwrap();
    let ratios: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| if t == 0 { DVector::from_element(4, 1.0) } else { DVector::from_vec(vec![1.2, 0.9, 1.0, 1.05]) })
        .collect();
    check(&params, &base, &ratios, &DVector::from_vec(vec![0.4, 0.3, 0.2, 0.1]), 1.5);
}

fn four_skill_params(n: usize, nu: f64, beta: f64) -> DynamicParams {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|o| {
            let a = 0.1 + 0.8 * (o as f64) / (n as f64 - 1.0);
            vec![a, 1.0 - a]
        })
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let skills = SkillSpace::from_rows(&refs, &[0.7, 0.5]).unwrap();
    let tau = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 0.8 + 0.25 * (i as f64 - j as f64).abs() });
    DynamicParams::new(beta, nu, tau, skills).unwrap()
}

#[test]
fn clustered_gradual_shock() {
    // Occupations 0-2 form an exposed cluster with a common task-share gain
    // phased in over five periods; the rest share a common loss.
    let n = 6;
    let params = four_skill_params(n, 0.5, 0.92);
    let horizon = 15;
    let base = Fundamentals::constant(
        DVector::from_vec(vec![1.0, 0.9, 1.1, 1.2, 0.8, 1.0]),
        DVector::from_vec(vec![0.2, 0.15, 0.15, 0.2, 0.1, 0.2]),
        1.0,
        horizon,
    )
    .unwrap();
    let ratios: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| {
            let phase = (t as f64 / 5.0).min(1.0);
            DVector::from_fn(n, |o, _| if o < 3 { 1.25f64.powf(phase) } else { 0.85f64.powf(phase) })
        })
        .collect();
    check(&params, &base, &ratios, &DVector::from_element(n, 1.0 / n as f64), 1.34);
}

#[test]
fn time_varying_baseline_with_amenity_shock() {
    let n = 4;
    let params = four_skill_params(n, 0.9, 0.85);
    let horizon = 10;
    let a: Vec<DVector<f64>> =
        (0..=horizon).map(|t| DVector::from_fn(n, |o, _| 1.0 + 0.05 * ((t + o) as f64).sin())).collect();
    let alpha: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| {
            let v = DVector::from_fn(n, |o, _| 0.25 * (0.1 * (t as f64) * (o as f64 - 1.5)).exp());
            let s = v.sum();
            v / s
        })
        .collect();
    let agg: Vec<f64> = (0..=horizon).map(|t| 1.0 + 0.02 * t as f64).collect();
    let base = Fundamentals::new(a, alpha, agg).unwrap();
    let alpha_r: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| if t == 0 { DVector::from_element(n, 1.0) } else { DVector::from_vec(vec![0.9, 1.1, 1.0, 1.05]) })
        .collect();
    let a_r: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| if t < 2 { DVector::from_element(n, 1.0) } else { DVector::from_vec(vec![1.0, 1.0, 1.1, 0.95]) })
        .collect();
    let agg_r: Vec<f64> = (0..=horizon).map(|t| if t == 0 { 1.0 } else { 1.03 }).collect();
    let hats = FundamentalHats::from_level_ratios(alpha_r, a_r, agg_r).unwrap();
    check_hats(&params, &base, &hats, &DVector::from_vec(vec![0.3, 0.3, 0.2, 0.2]), 0.8);
}

#[test]
fn no_shock_is_exact_and_welfare_neutral() {
    let n = 5;
    let params = four_skill_params(n, 0.6, 0.9);
    let horizon = 8;
    let base = Fundamentals::constant(DVector::from_element(n, 1.0), DVector::from_element(n, 0.2), 1.0, horizon).unwrap();
    let b = solve_levels_path(&base, &params, &DVector::from_vec(vec![0.4, 0.1, 0.2, 0.2, 0.1]), 1.5, None, &opts())
        .unwrap();
    let h = dynamic_hat_counterfactual(&b.panel, &FundamentalHats::ones(n, horizon), &params, 1.5, &opts()).unwrap();
    for t in 0..=horizon {
        assert_eq!(h.l_prime[t], b.panel.l[t]);
        assert!(h.w_ratio[t].iter().all(|&v| v == 1.0));
    }
    assert!(welfare_ev(&h).iter().all(|e| e.iter().all(|&v| v == 0.0)));
}

#[test]
fn frictionless_stationary_allocation_is_static() {
    // No switching costs and κ = θ: every origin faces the same choice
    // problem, so employment equals static shares at the same wages.
    let n = 5;
    for nu in [1.0, 0.6] {
        let params = {
            let p = four_skill_params(n, nu, 0.9);
            DynamicParams::new(0.9, nu, DMatrix::zeros(n, n), p.skills().clone()).unwrap()
        };
        let a = DVector::from_vec(vec![1.0, 0.7, 1.3, 0.9, 1.1]);
        let base = Fundamentals::constant(a.clone(), DVector::from_vec(vec![0.3, 0.1, 0.2, 0.25, 0.15]), 1.0, 20)
            .unwrap();
        let path =
            solve_levels_path(&base, &params, &DVector::from_element(n, 0.2), 1.5, None, &opts()).unwrap();
        let last = path.panel.horizon();
        let w = path.panel.w[last].clone();
        let econ = Economy::new(params.skills().clone(), FrechetParams::new(nu, a).unwrap(), w, 1.5).unwrap();
        let pi = employment_shares(&econ).unwrap().pi;
        let gap = (&path.panel.l[last] - pi).amax();
        assert!(gap < 1e-8, "nu {nu}: {gap:e}");
    }
}

#[test]
fn demand_calibration_round_trip() {
    let n = 4;
    let params = four_skill_params(n, 0.7, 0.9);
    let horizon = 8;
    let base =
        Fundamentals::constant(DVector::from_element(n, 1.0), DVector::from_vec(vec![0.3, 0.3, 0.2, 0.2]), 1.0, horizon)
            .unwrap();
    let b = solve_levels_path(&base, &params, &DVector::from_element(n, 0.25), 1.34, None, &opts()).unwrap();
    let truth: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| if t == 0 { DVector::from_element(n, 1.0) } else { DVector::from_vec(vec![1.3, 0.9, 1.0, 0.8]) })
        .collect();
    let ones = vec![DVector::from_element(n, 1.0); horizon + 1];
    let hats = FundamentalHats::from_level_ratios(truth.clone(), ones, vec![1.0; horizon + 1]).unwrap();
    let path = dynamic_hat_counterfactual(&b.panel, &hats, &params, 1.34, &opts()).unwrap();
    let target: Vec<DVector<f64>> = (1..=horizon).map(|t| path.w_ratio[t].map(f64::ln)).collect();
    let cal = calibrate_demand_from_wage_path(&target, &b.panel, &params, 1.34, None, &opts()).unwrap();
    let (_, alpha_r, _) = cal.hats.level_ratios();
    for t in 1..=horizon {
        let err = (&alpha_r[t] - &truth[t]).amax();
        assert!(err < 1e-8, "t={t}: {err:e}");
    }
}

#[test]
fn exposure_rescaling_round_trip() {
    let n = 3;
    let horizon = 4;
    let ratios: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| if t == 0 { DVector::from_element(n, 1.0) } else { DVector::from_vec(vec![1.2, 0.9, 1.0]) })
        .collect();
    let ones = vec![DVector::from_element(n, 1.0); horizon + 1];
    let hats = FundamentalHats::from_level_ratios(ratios, ones, vec![1.0; horizon + 1]).unwrap();
    let z_old = DVector::from_vec(vec![0.5, 0.25, 0.0]);
    let z_new = DVector::from_vec(vec![0.25, 0.5, 0.3]);
    let there = rescale_shock_by_exposure(&hats, &z_old, &z_new).unwrap();
    let (_, r, _) = there.level_ratios();
    assert!((r[2][0].ln() - 0.5 * 1.2f64.ln()).abs() < 1e-14);
    assert!((r[2][1].ln() - 2.0 * 0.9f64.ln()).abs() < 1e-14);
    let back = rescale_shock_by_exposure(&there, &z_new, &z_old).unwrap();
    let (_, rb, _) = back.level_ratios();
    assert!((rb[3][0] - 1.2).abs() < 1e-14 && (rb[3][1] - 0.9).abs() < 1e-14);
}
