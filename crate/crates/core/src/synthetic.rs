//! Seeded synthetic economies and panels for testing, benchmarking and the
//! `sample` command.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::corr_core::SkillSpace;
use crate::dynamics::{solve_levels_path, DynamicParams, Fundamentals, LevelsPath};
use crate::error::{DidesError, Result};
use crate::hat_algebra::{counterfactual_shares, GroupPanel};
use crate::labor_supply::shares_from_ln_x;
use crate::numeric::SolverOptions;

/// The deterministic generator used throughout.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Skill intensities drawn from a symmetric Dirichlet(`concentration`).
pub fn random_omega<R: Rng>(rng: &mut R, n_occupations: usize, n_skills: usize, concentration: f64) -> DMatrix<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut omega = DMatrix::zeros(n_occupations, n_skills);
    for o in 0..n_occupations {
        let draws: Vec<f64> = (0..n_skills).map(|_| gamma.sample(rng).max(1e-12)).collect();
        let sum: f64 = draws.iter().sum();
        for s in 0..n_skills {
            omega[(o, s)] = draws[s] / sum;
        }
    }
    // Exact row sums after rounding.
    for o in 0..n_occupations {
        let sum: f64 = omega.row(o).sum();
        omega[(o, n_skills - 1)] += 1.0 - sum;
    }
    omega
}

/// A random instance: skill space with `ρ_s ~ U(0, rho_max)` and `ln x ~ N(0, spread²)`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub skills: SkillSpace,
    pub ln_x: DVector<f64>,
    pub theta: f64,
}

impl Instance {
    pub fn random<R: Rng>(rng: &mut R, n_occupations: usize, n_skills: usize, rho_max: f64, spread: f64) -> Self {
        let omega = random_omega(rng, n_occupations, n_skills, 0.7);
        let rho = DVector::from_fn(n_skills, |_, _| rng.random::<f64>() * rho_max);
        let skills = SkillSpace::new(omega, rho).expect("valid random skill space");
        let ln_x = DVector::from_fn(n_occupations, |_, _| spread * rng.sample::<f64, _>(StandardNormal));
        let theta = 0.5 + 3.0 * rng.random::<f64>();
        Instance { skills, ln_x, theta }
    }

    pub fn shares(&self) -> DVector<f64> {
        shares_from_ln_x(&self.ln_x, &self.skills).expect("finite inputs").pi
    }
}

/// Two nests of two occupations each, equal sizes: occupations 0-1 use skill
/// 0 only and 2-3 use skill 1 only, both with correlation `rho`.
pub fn two_by_two(rho: f64) -> Result<SkillSpace> {
    SkillSpace::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]], &[rho, rho])
}

/// A four-occupation, three-skill economy with overlapping loadings.
pub fn four_occupation_fixture() -> (SkillSpace, DVector<f64>, f64) {
    let skills = SkillSpace::from_rows(
        &[&[0.79, 0.07, 0.14], &[0.55, 0.15, 0.30], &[0.10, 0.75, 0.15], &[0.20, 0.45, 0.35]],
        &[0.77, 0.48, 0.75],
    )
    .expect("fixture is valid");
    let pi = DVector::from_vec(vec![0.30, 0.25, 0.25, 0.20]);
    (skills, pi, 1.10)
}

/// Specification of a model-generated PPML panel.
#[derive(Debug, Clone)]
pub struct PpmlDesign {
    pub n_occupations: usize,
    pub n_groups: usize,
    pub theta: f64,
    pub rho: DVector<f64>,
    /// Standard deviation of `ln ŵ`.
    pub wage_spread: f64,
    /// Standard deviation of multiplicative log-normal noise on end shares.
    pub noise: f64,
}

/// Model-generated data: the skill space, the wage changes and the panel.
#[derive(Debug, Clone)]
pub struct PpmlData {
    pub omega: DMatrix<f64>,
    pub w_hat: DVector<f64>,
    pub panel: GroupPanel,
}

/// Draws a skill space and common wage changes, then for each group draws
/// base shares and computes end shares from the model at `(θ, ρ)`.
pub fn ppml_data<R: Rng>(rng: &mut R, design: &PpmlDesign) -> Result<PpmlData> {
    let o_n = design.n_occupations;
    let omega = random_omega(rng, o_n, design.rho.len(), 0.7);
    let w_hat = DVector::from_fn(o_n, |_, _| (design.wage_spread * rng.sample::<f64, _>(StandardNormal)).exp());
    ppml_data_with(rng, design, omega, w_hat)
}

/// As [`ppml_data`] with given intensities and wage changes.
pub fn ppml_data_with<R: Rng>(
    rng: &mut R,
    design: &PpmlDesign,
    omega: DMatrix<f64>,
    w_hat: DVector<f64>,
) -> Result<PpmlData> {
    let skills = SkillSpace::new(omega.clone(), design.rho.clone())?;
    let o_n = design.n_occupations;
    let g_n = design.n_groups;
    let mut base = DMatrix::zeros(g_n, o_n);
    let mut end = DMatrix::zeros(g_n, o_n);
    for g in 0..g_n {
        let ln_x = DVector::from_fn(o_n, |_, _| 0.8 * rng.sample::<f64, _>(StandardNormal));
        let pi = shares_from_ln_x(&ln_x, &skills)?.pi;
        let (mut pp, _) = counterfactual_shares(&pi, &w_hat, &skills, design.theta)?;
        if design.noise > 0.0 {
            for v in pp.iter_mut() {
                *v *= (design.noise * rng.sample::<f64, _>(StandardNormal)).exp();
            }
            let s = pp.sum();
            pp /= s;
        }
        base.set_row(g, &pi.transpose());
        end.set_row(g, &pp.transpose());
    }
    let groups = (0..g_n).map(|g| format!("g{g}")).collect();
    let panel = GroupPanel::new(groups, vec!["0".into(), "1".into()], vec![base, end])?;
    Ok(PpmlData { omega, w_hat, panel })
}

/// Specification of a simulated dynamic path for the Euler regression.
#[derive(Debug, Clone)]
pub struct EulerDesign {
    pub n_occupations: usize,
    pub horizon: usize,
    pub beta: f64,
    pub kappa_ratio: f64,
    pub sigma: f64,
    /// Amplitude of the log task-share cycles that move relative wages.
    pub alpha_amplitude: f64,
}

/// A levels path with constant `A`, switching costs and cycling task shares.
pub fn euler_path<R: Rng>(rng: &mut R, design: &EulerDesign) -> Result<(DynamicParams, LevelsPath)> {
    let n = design.n_occupations;
    if n < 2 {
        return Err(DidesError::Dimension("need at least two occupations".into()));
    }
    let omega = random_omega(rng, n, 2, 1.0);
    let rho = DVector::from_vec(vec![0.2 + 0.5 * rng.random::<f64>(), 0.2 + 0.5 * rng.random::<f64>()]);
    let skills = SkillSpace::new(omega, rho)?;
    let tau = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 + 0.3 * (i as f64 - j as f64).abs() });
    let params = DynamicParams::new(design.beta, design.kappa_ratio, tau, skills)?;
    let a = DVector::from_fn(n, |_, _| 0.8 + 0.4 * rng.random::<f64>());
    let base_alpha = DVector::from_fn(n, |_, _| 0.5 + rng.random::<f64>());
    let freq: Vec<f64> = (0..n).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect();
    let phase: Vec<f64> = (0..n).map(|_| std::f64::consts::TAU * rng.random::<f64>()).collect();
    let horizon = design.horizon;
    let alpha: Vec<DVector<f64>> = (0..=horizon)
        .map(|t| {
            let raw = DVector::from_fn(n, |o, _| {
                base_alpha[o] * (design.alpha_amplitude * (freq[o] * t as f64 + phase[o]).sin()).exp()
            });
            let s = raw.sum();
            raw / s
        })
        .collect();
    let fundamentals = Fundamentals::new(vec![a; horizon + 1], alpha, vec![1.0; horizon + 1])?;
    let l_init = DVector::from_element(n, 1.0 / n as f64);
    let opts = SolverOptions { tol: 1e-12, max_iter: 20_000, damping: 0.5 };
    let path = solve_levels_path(&fundamentals, &params, &l_init, design.sigma, None, &opts)?;
    Ok((params, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_rows_sum_to_one() {
        let mut r = rng(3);
        let m = random_omega(&mut r, 40, 3, 0.7);
        for o in 0..40 {
            assert!((m.row(o).sum() - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let a = Instance::random(&mut rng(9), 10, 3, 0.9, 1.0);
        let b = Instance::random(&mut rng(9), 10, 3, 0.9, 1.0);
        assert_eq!(a.ln_x, b.ln_x);
        assert_eq!(a.skills, b.skills);
    }
}
