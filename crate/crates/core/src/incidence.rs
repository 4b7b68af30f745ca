//! Wage and employment incidence of occupational demand shocks: the
//! first-order pass-through map, welfare from mobility, and the exact
//! nonlinear equilibrium in changes.

use nalgebra::{DMatrix, DVector};

use crate::corr_core::SkillSpace;
use crate::error::{DidesError, Result};
use crate::hat_algebra::{check_simplex, counterfactual_from_adjusted, invert_shares, AdjustedShares};
use crate::labor_supply::{elasticity_from_ln_x, ElasticityMatrix};
use crate::numeric::{ensure_finite, ensure_len, ensure_positive, newton_solve, sup_norm, thin_trace, SolverOptions};

/// Demand shock, either as log task-share changes or as an exposure vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Shock {
    TaskShares { d_ln_alpha: DVector<f64>, d_ln_y: Option<f64> },
    /// Exposure `z ∈ [0,1]^O` scaled by `beta`: the targeted wage change is `β z`.
    Exposure { z: DVector<f64>, beta: f64, d_ln_y: Option<f64> },
}

impl Shock {
    pub fn task_shares(d_ln_alpha: DVector<f64>) -> Self {
        Shock::TaskShares { d_ln_alpha, d_ln_y: None }
    }

    pub fn exposure(z: DVector<f64>, beta: f64) -> Self {
        Shock::Exposure { z, beta, d_ln_y: None }
    }

    pub fn with_d_ln_y(self, value: f64) -> Self {
        match self {
            Shock::TaskShares { d_ln_alpha, .. } => Shock::TaskShares { d_ln_alpha, d_ln_y: Some(value) },
            Shock::Exposure { z, beta, .. } => Shock::Exposure { z, beta, d_ln_y: Some(value) },
        }
    }

    pub fn d_ln_y(&self) -> Option<f64> {
        match self {
            Shock::TaskShares { d_ln_y, .. } | Shock::Exposure { d_ln_y, .. } => *d_ln_y,
        }
    }

    /// The shock as `d ln α`, converting exposure vectors with
    /// [`exposure_to_task_shock`].
    pub fn to_task_shares(&self, theta_m: &ElasticityMatrix, sigma: f64) -> Result<DVector<f64>> {
        match self {
            Shock::TaskShares { d_ln_alpha, .. } => Ok(d_ln_alpha.clone()),
            Shock::Exposure { z, beta, .. } => exposure_to_task_shock(theta_m, sigma, z, *beta),
        }
    }
}

/// First-order responses to a demand shock.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceResult {
    pub d_ln_w: DVector<f64>,
    pub d_ln_l: DVector<f64>,
    pub passthrough_matrix: DMatrix<f64>,
    /// Share of the relative-wage-plus-employment response that shows up in
    /// relative wages; `NaN` where it is undefined.
    pub passthrough_share: DVector<f64>,
    pub mobility_gain: DVector<f64>,
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DidesError::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

fn shifted_system(theta_m: &ElasticityMatrix, sigma: f64) -> DMatrix<f64> {
    let n = theta_m.dim();
    DMatrix::identity(n, n) + &theta_m.theta_matrix / sigma
}

/// Pass-through matrix `Δ = (I + Θ/σ)^{-1}`.
pub fn passthrough_matrix(theta_m: &ElasticityMatrix, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    let m = shifted_system(theta_m, sigma);
    let n = m.nrows();
    m.lu().solve(&DMatrix::identity(n, n)).ok_or_else(|| {
        DidesError::Conditioning(format!("I + Θ/σ is singular (condition number {:.3e})", condition_number(&shifted_system(theta_m, sigma))))
    })
}

/// 2-norm condition number via singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Converts an exposure vector into the demand shock that would move wages
/// by `β z` absent general-equilibrium feedback: `d ln α = σ(I + Θ/σ) β z`.
pub fn exposure_to_task_shock(theta_m: &ElasticityMatrix, sigma: f64, z: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
    check_sigma(sigma)?;
    ensure_len("z", z, theta_m.dim())?;
    ensure_finite("z", z)?;
    Ok(shifted_system(theta_m, sigma) * z * (sigma * beta))
}

/// First-order change in output given baseline wage-bill shares `s`:
/// `d ln y = Σ s_o d ln α_o/(σ-1) + s'ΘΔ d ln α/σ`.
pub fn first_order_output_change(
    theta_m: &ElasticityMatrix,
    sigma: f64,
    wagebill: &DVector<f64>,
    d_ln_alpha: &DVector<f64>,
) -> Result<f64> {
    check_sigma(sigma)?;
    ensure_len("wagebill", wagebill, theta_m.dim())?;
    ensure_len("d_ln_alpha", d_ln_alpha, theta_m.dim())?;
    let level = wagebill.dot(d_ln_alpha);
    let direct = if (sigma - 1.0).abs() < 1e-12 {
        if level.abs() > 1e-12 {
            return Err(DidesError::Parameter(
                "with sigma = 1 the task-share shock must leave Σ s_o d ln α_o at zero".into(),
            ));
        }
        0.0
    } else {
        level / (sigma - 1.0)
    };
    let delta = passthrough_matrix(theta_m, sigma)?;
    let d_ln_l = &theta_m.theta_matrix * (delta * d_ln_alpha / sigma);
    Ok(direct + wagebill.dot(&d_ln_l))
}

/// Wage and employment incidence:
/// `d ln w = (d ln y/σ)·1 + Δ d ln α/σ`, `d ln L = Θ d ln w`.
/// A missing `d ln y` is treated as zero (relative analysis).
pub fn first_order_incidence(theta_m: &ElasticityMatrix, sigma: f64, shock: &Shock) -> Result<IncidenceResult> {
    check_sigma(sigma)?;
    let d_ln_alpha = shock.to_task_shares(theta_m, sigma)?;
    ensure_len("d_ln_alpha", &d_ln_alpha, theta_m.dim())?;
    ensure_finite("d_ln_alpha", &d_ln_alpha)?;
    let d_ln_y = shock.d_ln_y().unwrap_or(0.0);
    let delta = passthrough_matrix(theta_m, sigma)?;
    let d_ln_w = DVector::from_element(theta_m.dim(), d_ln_y / sigma) + &delta * &d_ln_alpha / sigma;
    let d_ln_l = &theta_m.theta_matrix * &d_ln_w;
    let d_ln_index = theta_m.shares.dot(&d_ln_w);
    let relative = d_ln_w.map(|v| v - d_ln_index);
    let passthrough_share = share_from_logs(&relative, &d_ln_l, sigma);
    let mobility_gain = mobility_gains(theta_m, &d_ln_w)?;
    Ok(IncidenceResult { d_ln_w, d_ln_l, passthrough_matrix: delta, passthrough_share, mobility_gain })
}

fn share_from_logs(rel_w: &DVector<f64>, d_ln_l: &DVector<f64>, sigma: f64) -> DVector<f64> {
    rel_w.zip_map(d_ln_l, |w, l| {
        let den = w + l / sigma;
        if den.abs() < 1e-12 {
            f64::NAN
        } else {
            w / den
        }
    })
}

/// `ln(ŵ_o/Ŵ) / [ln(ŵ_o/Ŵ) + ln L̂_o/σ]`; entries whose denominator is below
/// `1e-12` in magnitude are returned as `NaN`.
pub fn passthrough_share(w_hat: &DVector<f64>, w_index_hat: f64, l_hat: &DVector<f64>, sigma: f64) -> Result<DVector<f64>> {
    check_sigma(sigma)?;
    ensure_positive("w_hat", w_hat)?;
    ensure_len("L_hat", l_hat, w_hat.len())?;
    ensure_positive("L_hat", l_hat)?;
    if !(w_index_hat > 0.0) || !w_index_hat.is_finite() {
        return Err(DidesError::Domain(format!("wage index change must be positive, got {w_index_hat}")));
    }
    let rel = w_hat.map(|w| (w / w_index_hat).ln());
    Ok(share_from_logs(&rel, &l_hat.map(f64::ln), sigma))
}

fn check_wage_change(theta_m: &ElasticityMatrix, d_ln_w: &DVector<f64>) -> Result<()> {
    ensure_len("d_ln_w", d_ln_w, theta_m.dim())?;
    ensure_finite("d_ln_w", d_ln_w)
}

/// Second-order welfare gain from switching into better-paying occupations:
/// `Σ_{o': Δ_{oo'} > 0} |Θ_{oo'}| Δ_{oo'}²` with `Δ_{oo'} = d ln w_{o'} - d ln w_o`.
pub fn mobility_gains(theta_m: &ElasticityMatrix, d_ln_w: &DVector<f64>) -> Result<DVector<f64>> {
    check_wage_change(theta_m, d_ln_w)?;
    let n = theta_m.dim();
    Ok(DVector::from_fn(n, |o, _| {
        (0..n)
            .filter(|&j| j != o && d_ln_w[j] > d_ln_w[o])
            .map(|j| theta_m.theta_matrix[(o, j)].abs() * (d_ln_w[j] - d_ln_w[o]).powi(2))
            .sum()
    }))
}

/// Mobility gain of one occupation written as
/// `n_o [mean|Θ| · mean(Δ²) + Cov(|Θ|, Δ²)]` over its `n_o` gaining destinations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityGainTerms {
    pub n_destinations: usize,
    pub mean_abs_elasticity: f64,
    pub mean_squared_gap: f64,
    pub covariance: f64,
}

impl MobilityGainTerms {
    pub fn total(&self) -> f64 {
        self.n_destinations as f64 * (self.mean_abs_elasticity * self.mean_squared_gap + self.covariance)
    }
}

pub fn mobility_gain_decomposition(theta_m: &ElasticityMatrix, d_ln_w: &DVector<f64>) -> Result<Vec<MobilityGainTerms>> {
    check_wage_change(theta_m, d_ln_w)?;
    let n = theta_m.dim();
    Ok((0..n)
        .map(|o| {
            let pairs: Vec<(f64, f64)> = (0..n)
                .filter(|&j| j != o && d_ln_w[j] > d_ln_w[o])
                .map(|j| (theta_m.theta_matrix[(o, j)].abs(), (d_ln_w[j] - d_ln_w[o]).powi(2)))
                .collect();
            let k = pairs.len();
            if k == 0 {
                return MobilityGainTerms { n_destinations: 0, mean_abs_elasticity: 0.0, mean_squared_gap: 0.0, covariance: 0.0 };
            }
            let kf = k as f64;
            let ma = pairs.iter().map(|p| p.0).sum::<f64>() / kf;
            let mg = pairs.iter().map(|p| p.1).sum::<f64>() / kf;
            let cov = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mg)).sum::<f64>() / kf;
            MobilityGainTerms { n_destinations: k, mean_abs_elasticity: ma, mean_squared_gap: mg, covariance: cov }
        })
        .collect())
}

/// Equivalent-variation ratio of mobility, `Σ_{o'} μ_{oo'} ŵ_{o'}/ŵ_o`, where
/// the linearized switching rate into each better-paying `o'` is
/// `μ_{oo'} = -Θ_{oo'} Δ_{oo'}` and the remainder stays.
pub fn mobility_ev_ratio(theta_m: &ElasticityMatrix, d_ln_w: &DVector<f64>) -> Result<DVector<f64>> {
    check_wage_change(theta_m, d_ln_w)?;
    let n = theta_m.dim();
    let mut out = DVector::zeros(n);
    for o in 0..n {
        let mut stay = 1.0;
        let mut ev = 0.0;
        for j in 0..n {
            let gap = d_ln_w[j] - d_ln_w[o];
            if j == o || gap <= 0.0 {
                continue;
            }
            let mu = -theta_m.theta_matrix[(o, j)] * gap;
            stay -= mu;
            ev += mu * gap.exp();
        }
        if stay < 0.0 {
            return Err(DidesError::Domain(format!(
                "linearized switching out of occupation {o} exceeds one; the shock is too large for first-order accounting, use the nonlinear solver"
            )));
        }
        out[o] = stay + ev;
    }
    Ok(out)
}

/// Solution of the static equilibrium in changes.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEquilibrium {
    pub w_hat: DVector<f64>,
    pub l_hat: DVector<f64>,
    pub y_hat: f64,
    pub pi_prime: DVector<f64>,
    /// Wage index change `Ŵ` of the workforce.
    pub w_index_hat: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// `ln Ŷ` and post-shock wage-bill shares from baseline wage-bill shares,
/// `Ŷ = [Σ s_o α̂_o^{1/σ} L̂_o^{(σ-1)/σ}]^{σ/(σ-1)}`. Written as
/// `Σ s_o α̂_o exp(r(ln L̂_o - ln α̂_o))` with `r = (σ-1)/σ` so that `σ → 1`
/// has a finite Cobb-Douglas limit when `Σ s α̂ = 1`.
pub(crate) fn output_change(
    wagebill: &DVector<f64>,
    ln_alpha_hat: &DVector<f64>,
    ln_l_hat: &DVector<f64>,
    sigma: f64,
) -> Result<(f64, DVector<f64>)> {
    let r = (sigma - 1.0) / sigma;
    let weights = DVector::from_fn(wagebill.len(), |o, _| wagebill[o] * ln_alpha_hat[o].exp());
    let base = weights.sum();
    let terms = DVector::from_fn(wagebill.len(), |o, _| weights[o] * (r * (ln_l_hat[o] - ln_alpha_hat[o])).exp());
    let total = terms.sum();
    let new_shares = &terms / total;
    if r.abs() < 1e-10 {
        if base.ln().abs() > 1e-10 {
            return Err(DidesError::Parameter(
                "with sigma = 1 the task-share changes must satisfy Σ s_o α̂_o = 1".into(),
            ));
        }
        let ln_y = (0..wagebill.len()).map(|o| weights[o] / base * (ln_l_hat[o] - ln_alpha_hat[o])).sum();
        return Ok((ln_y, new_shares));
    }
    Ok((total.ln() / r, new_shares))
}

/// Exact equilibrium in changes after task shares move by `α̂`.
///
/// Supply comes from the hat-algebra share update (total labor fixed) and
/// demand from `ŵ_o = (Ŷ α̂_o / L̂_o)^{1/σ}`. Solved on `ln ŵ` with Newton's
/// method using the analytic Jacobian `(I - 1 s'ᵀ)Θ' + σI`, with a damped
/// fixed point as fallback.
pub fn solve_counterfactual_equilibrium(
    pi: &DVector<f64>,
    wagebill: &DVector<f64>,
    alpha_hat: &DVector<f64>,
    sigma: f64,
    skills: &SkillSpace,
    theta: f64,
    opts: &SolverOptions,
) -> Result<StaticEquilibrium> {
    ensure_len("alpha_hat", alpha_hat, skills.n_occupations())?;
    ensure_positive("alpha_hat", alpha_hat)?;
    check_sigma(sigma)?;
    let start = alpha_hat.map(|a| a.ln() / sigma);
    solve_counterfactual_equilibrium_from(pi, wagebill, alpha_hat, sigma, skills, theta, &start, opts)
}

/// As [`solve_counterfactual_equilibrium`], starting from a given `ln ŵ`.
#[allow(clippy::too_many_arguments)]
pub fn solve_counterfactual_equilibrium_from(
    pi: &DVector<f64>,
    wagebill: &DVector<f64>,
    alpha_hat: &DVector<f64>,
    sigma: f64,
    skills: &SkillSpace,
    theta: f64,
    start_ln_w_hat: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<StaticEquilibrium> {
    opts.validate()?;
    check_sigma(sigma)?;
    let n = skills.n_occupations();
    check_simplex("pi", pi, n)?;
    check_simplex("wagebill", wagebill, n)?;
    ensure_len("alpha_hat", alpha_hat, n)?;
    ensure_positive("alpha_hat", alpha_hat)?;
    ensure_len("start", start_ln_w_hat, n)?;
    ensure_finite("start", start_ln_w_hat)?;
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(DidesError::Parameter(format!("theta must be positive, got {theta}")));
    }
    let adjusted = invert_shares(pi, skills)?;
    let ln_alpha_hat = alpha_hat.map(f64::ln);
    let ln_pi = pi.map(f64::ln);
    let system = EquilibriumSystem { adjusted: &adjusted, ln_pi: &ln_pi, wagebill, ln_alpha_hat: &ln_alpha_hat, sigma, skills, theta };

    let residual = |x: &DVector<f64>| system.residual(x);
    let jacobian = |x: &DVector<f64>| system.jacobian(x);
    let (x, iterations) = match newton_solve("static equilibrium", residual, Some(jacobian), start_ln_w_hat.clone(), opts) {
        Ok(rep) => (rep.x, rep.iterations),
        Err(DidesError::NoConvergence { .. }) | Err(DidesError::Conditioning(_)) => {
            system.damped(start_ln_w_hat.clone(), opts)?
        }
        Err(e) => return Err(e),
    };
    let state = system.state(&x)?;
    let w_hat = x.map(f64::exp);
    let w_index_hat =
        crate::hat_algebra::wage_index_change(&adjusted.pi_tilde, &w_hat, skills, theta)?;
    Ok(StaticEquilibrium {
        l_hat: state.ln_l_hat.map(f64::exp),
        y_hat: state.ln_y_hat.exp(),
        pi_prime: state.pi_prime,
        w_hat,
        w_index_hat,
        residual: sup_norm(&state.residual),
        iterations,
    })
}

struct EquilibriumSystem<'a> {
    adjusted: &'a AdjustedShares,
    ln_pi: &'a DVector<f64>,
    wagebill: &'a DVector<f64>,
    ln_alpha_hat: &'a DVector<f64>,
    sigma: f64,
    skills: &'a SkillSpace,
    theta: f64,
}

struct EquilibriumState {
    pi_prime: DVector<f64>,
    pi_tilde_prime: DVector<f64>,
    ln_l_hat: DVector<f64>,
    ln_y_hat: f64,
    new_wagebill: DVector<f64>,
    residual: DVector<f64>,
}

impl EquilibriumSystem<'_> {
    fn state(&self, ln_w_hat: &DVector<f64>) -> Result<EquilibriumState> {
        ensure_finite("ln w_hat", ln_w_hat)?;
        let w_hat = ln_w_hat.map(f64::exp);
        let (pi_prime, pi_tilde_prime) = counterfactual_from_adjusted(self.adjusted, &w_hat, self.skills, self.theta)?;
        let ln_l_hat = pi_prime.map(f64::ln) - self.ln_pi;
        let (ln_y_hat, new_wagebill) = output_change(self.wagebill, self.ln_alpha_hat, &ln_l_hat, self.sigma)?;
        let residual = DVector::from_fn(ln_w_hat.len(), |o, _| {
            ln_l_hat[o] - ln_y_hat - self.ln_alpha_hat[o] + self.sigma * ln_w_hat[o]
        });
        Ok(EquilibriumState { pi_prime, pi_tilde_prime, ln_l_hat, ln_y_hat, new_wagebill, residual })
    }

    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.state(x)?.residual)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let st = self.state(x)?;
        let theta_m = elasticity_from_ln_x(&st.pi_tilde_prime.map(f64::ln), self.skills, self.theta)?;
        let n = x.len();
        let sharet_theta = st.new_wagebill.transpose() * &theta_m.theta_matrix;
        let mut jac = theta_m.theta_matrix;
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] -= sharet_theta[j];
            }
            jac[(i, i)] += self.sigma;
        }
        Ok(jac)
    }

    fn damped(&self, mut x: DVector<f64>, opts: &SolverOptions) -> Result<(DVector<f64>, usize)> {
        let mut trace = Vec::new();
        for it in 0..opts.max_iter {
            let st = self.state(&x)?;
            let res = sup_norm(&st.residual);
            trace.push(res);
            if res < opts.tol {
                return Ok((x, it));
            }
            let target = DVector::from_fn(x.len(), |o, _| (st.ln_y_hat + self.ln_alpha_hat[o] - st.ln_l_hat[o]) / self.sigma);
            x = &x * (1.0 - opts.damping) + target * opts.damping;
        }
        Err(DidesError::NoConvergence {
            solver: "static equilibrium",
            iterations: opts.max_iter,
            residual: *trace.last().unwrap_or(&f64::NAN),
            trace: thin_trace(&trace),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ces(theta: f64, pi: &[f64]) -> ElasticityMatrix {
        let n = pi.len();
        let p = DVector::from_column_slice(pi);
        let m = DMatrix::from_fn(n, n, |i, j| theta * ((i == j) as u8 as f64 - p[j]));
        ElasticityMatrix::new(m, p).unwrap()
    }

    #[test]
    fn passthrough_properties() {
        let th = ces(3.12, &[0.2, 0.3, 0.5]);
        let d = passthrough_matrix(&th, 1.34).unwrap();
        assert!((&d * DVector::from_element(3, 1.0)).map(|v| v - 1.0).amax() < 1e-12);
        let v = DVector::from_vec(vec![1.0, 1.0, -1.0]);
        let v = &v - DVector::from_element(3, th.shares.dot(&v));
        let dv = &d * &v;
        let factor = 1.34 / (1.34 + 3.12);
        assert!((dv - &v * factor).amax() < 1e-12);
        assert!((factor - 0.3004).abs() < 5e-5);
    }

    #[test]
    fn uniform_shock() {
        let th = ces(2.0, &[0.25; 4]);
        let r = first_order_incidence(&th, 1.5, &Shock::task_shares(DVector::from_element(4, 0.3)).with_d_ln_y(0.1)).unwrap();
        assert!(r.d_ln_l.amax() < 1e-12);
        assert!(r.d_ln_w.iter().all(|v| (v - 0.4 / 1.5).abs() < 1e-12));
        assert!(r.mobility_gain.amax() < 1e-24);
    }

    #[test]
    fn ces_passthrough_share_constant() {
        let th = ces(3.12, &[0.2, 0.3, 0.5]);
        let r = first_order_incidence(&th, 1.34, &Shock::task_shares(DVector::from_vec(vec![0.1, -0.05, 0.02]))).unwrap();
        for s in r.passthrough_share.iter() {
            assert!((s - 1.34 / (1.34 + 3.12)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_occupation_gains_and_ev() {
        let th = ElasticityMatrix::new(
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        let dw = DVector::from_vec(vec![0.0, 0.1]);
        let g = mobility_gains(&th, &dw).unwrap();
        assert!((g[0] - 0.01).abs() < 1e-15 && g[1] == 0.0);
        let ev = mobility_ev_ratio(&th, &dw).unwrap();
        assert!((ev[0] - (0.9 + 0.1 * 0.1f64.exp())).abs() < 1e-14);
        assert!((ev[0] - 1.01052).abs() < 1e-5);
        assert_eq!(ev[1], 1.0);
        let big = DVector::from_vec(vec![0.0, 2.0]);
        assert!(mobility_ev_ratio(&th, &big).is_err());
    }

    #[test]
    fn passthrough_share_edges() {
        let one = DVector::from_element(2, 1.0);
        let w = DVector::from_vec(vec![1.1, 0.9]);
        let s = passthrough_share(&w, 1.0, &one, 1.3).unwrap();
        assert_eq!(s, one);
        let l = DVector::from_vec(vec![1.2, 0.9]);
        let s = passthrough_share(&one, 1.0, &l, 1.3).unwrap();
        assert_eq!(s, DVector::zeros(2));
        let s = passthrough_share(&one, 1.0, &one, 1.3).unwrap();
        assert!(s.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn no_shock_equilibrium() {
        let sk = SkillSpace::from_rows(&[&[1.0, 0.0], &[0.5, 0.5], &[0.0, 1.0]], &[0.6, 0.3]).unwrap();
        let pi = DVector::from_vec(vec![0.3, 0.3, 0.4]);
        let wb = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let eq = solve_counterfactual_equilibrium(&pi, &wb, &DVector::from_element(3, 1.0), 1.34, &sk, 2.0, &SolverOptions::default())
            .unwrap();
        assert!(eq.w_hat.map(|v| v - 1.0).amax() < 1e-12);
        assert!(eq.l_hat.map(|v| v - 1.0).amax() < 1e-12);
        assert!((eq.y_hat - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cobb_douglas_limit_is_finite() {
        let wb = DVector::from_vec(vec![0.4f64, 0.6]);
        let ln_a = DVector::from_vec(vec![0.05f64, 0.0]);
        let ln_a = &ln_a - DVector::from_element(2, (wb[0] * ln_a[0].exp() + wb[1] as f64).ln());
        let ln_l = DVector::from_vec(vec![0.02, -0.01]);
        let (y1, _) = output_change(&wb, &ln_a, &ln_l, 1.0).unwrap();
        let (y2, _) = output_change(&wb, &ln_a, &ln_l, 1.0 + 1e-7).unwrap();
        assert!((y1 - y2).abs() < 1e-6);
    }
}
