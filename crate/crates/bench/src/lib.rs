//! Fixture builders shared by the benchmarks.

use dides_core::dynamics::{solve_levels_path, DynamicParams, Fundamentals, LevelsPath};
use dides_core::estimation::PpmlProblem;
use dides_core::synthetic::{self, ppml_data, Instance, PpmlDesign};
use dides_core::{SkillSpace, SolverOptions};
use nalgebra::{DMatrix, DVector};

/// A random static instance with `n` occupations and three skills.
pub fn instance(n: usize, seed: u64) -> Instance {
    Instance::random(&mut synthetic::rng(seed), n, 3, 0.9, 0.8)
}

/// A noiseless PPML problem with `n` occupations and `groups` groups.
pub fn ppml_problem(n: usize, groups: usize, seed: u64) -> PpmlProblem {
    let design = PpmlDesign {
        n_occupations: n,
        n_groups: groups,
        theta: 1.2,
        rho: DVector::from_vec(vec![0.6, 0.3, 0.5]),
        wage_spread: 0.15,
        noise: 0.0,
    };
    let data = ppml_data(&mut synthetic::rng(seed), &design).expect("valid design");
    PpmlProblem::new(data.panel, data.w_hat, data.omega).expect("valid problem")
}

/// Dynamic parameters with L1 switching costs, and a baseline path of
/// `horizon` periods.
pub fn dynamic_baseline(skills: &SkillSpace, horizon: usize) -> (DynamicParams, LevelsPath) {
    let n = skills.n_occupations();
    let omega = skills.omega();
    let tau = DMatrix::from_fn(n, n, |i, j| (omega.row(i) - omega.row(j)).abs().sum());
    let params = DynamicParams::new(0.9, 0.5, tau, skills.clone()).expect("valid parameters");
    let alpha = DVector::from_element(n, 1.0 / n as f64);
    let base = Fundamentals::constant(DVector::from_element(n, 1.0), alpha.clone(), 1.0, horizon).expect("valid");
    let path = solve_levels_path(&base, &params, &alpha, 1.34, None, &SolverOptions::default()).expect("converges");
    (params, path)
}
