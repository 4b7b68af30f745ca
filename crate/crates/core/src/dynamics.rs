//! Dynamic occupational choice with switching costs.
//!
//! Timing: a worker who starts period `t` in occupation `o` picks `o'`, earns
//! `w_{o',t}` and starts `t+1` in `o'`. With `ν = θ/κ` the short-run
//! elasticity,
//!
//! ```text
//! x_{oo',t} = A_{o',t} exp(ν(β V_{o',t+1} + ln w_{o',t} - τ_{oo'}))
//! V_{o,t}   = (1/ν) ln F(x_{o·,t}) + γ̄/ν
//! μ_{oo',t} = x_{oo',t} F_{o'}(x_{o·,t}) / F(x_{o·,t})
//! L_t       = μ_t' L_{t-1} + ΔL_t,       w_t = MPL_t(L_t)
//! ```
//!
//! The adjusted transitions `μ̃_{oo',t} = x_{oo',t}/F(x_{o·,t})` are the
//! sufficient statistic for counterfactuals: [`dynamic_hat_counterfactual`]
//! needs only an observed panel `(μ_t, L_t, w_t)` and fundamental changes.

use nalgebra::{DMatrix, DVector};

use crate::corr_core::{evaluate_nests, SkillSpace};
use crate::error::{DidesError, Result};
use crate::hat_algebra::{forward_ln_shares, invert_shares_with};
use crate::labor_supply::shares_from_ln_x;
use crate::numeric::{
    ensure_finite, ensure_len, ensure_positive, log_sum_exp, newton_solve, sup_norm, thin_trace, NoJacobian,
    SolverOptions,
};

/// Euler–Mascheroni constant, the mean of a standard Gumbel variate.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Preferences and frictions of the dynamic model.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicParams {
    beta: f64,
    kappa_ratio: f64,
    tau: DMatrix<f64>,
    skills: SkillSpace,
}

impl DynamicParams {
    /// `kappa_ratio` is the short-run elasticity `θ/κ`; `θ` and `κ` are never
    /// needed separately.
    pub fn new(beta: f64, kappa_ratio: f64, tau: DMatrix<f64>, skills: SkillSpace) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(DidesError::Parameter(format!("beta must lie in (0, 1), got {beta}")));
        }
        if !(kappa_ratio > 0.0) || !kappa_ratio.is_finite() {
            return Err(DidesError::Parameter(format!("theta/kappa must be positive, got {kappa_ratio}")));
        }
        let n = skills.n_occupations();
        if tau.shape() != (n, n) {
            return Err(DidesError::Dimension(format!("tau is {:?}, expected ({n}, {n})", tau.shape())));
        }
        for i in 0..n {
            if tau[(i, i)] != 0.0 {
                return Err(DidesError::Parameter(format!("tau[{i},{i}] must be zero")));
            }
            for j in 0..n {
                if !(tau[(i, j)] >= 0.0) || !tau[(i, j)].is_finite() {
                    return Err(DidesError::Parameter(format!("tau[{i},{j}] must be finite and nonnegative")));
                }
            }
        }
        Ok(DynamicParams { beta, kappa_ratio, tau, skills })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kappa_ratio(&self) -> f64 {
        self.kappa_ratio
    }

    pub fn tau(&self) -> &DMatrix<f64> {
        &self.tau
    }

    pub fn skills(&self) -> &SkillSpace {
        &self.skills
    }

    pub fn n_occupations(&self) -> usize {
        self.skills.n_occupations()
    }
}

/// Paths of fundamentals for periods `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fundamentals {
    /// Occupation amenities/productivities `A_{o,t}`.
    pub a: Vec<DVector<f64>>,
    /// Task shares `α_{o,t}`.
    pub alpha: Vec<DVector<f64>>,
    /// Aggregate productivity `𝒜_t`.
    pub agg: Vec<f64>,
}

impl Fundamentals {
    pub fn new(a: Vec<DVector<f64>>, alpha: Vec<DVector<f64>>, agg: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != alpha.len() || a.len() != agg.len() {
            return Err(DidesError::Dimension(format!(
                "fundamental paths have lengths {}, {}, {}",
                a.len(),
                alpha.len(),
                agg.len()
            )));
        }
        let n = a[0].len();
        for t in 0..a.len() {
            ensure_len("A", &a[t], n)?;
            ensure_len("alpha", &alpha[t], n)?;
            ensure_positive("A", &a[t])?;
            ensure_positive("alpha", &alpha[t])?;
            if !(agg[t] > 0.0) || !agg[t].is_finite() {
                return Err(DidesError::Domain(format!("aggregate productivity at t={t} must be positive")));
            }
        }
        Ok(Fundamentals { a, alpha, agg })
    }

    /// Fundamentals held fixed for periods `0..=horizon`.
    pub fn constant(a: DVector<f64>, alpha: DVector<f64>, agg: f64, horizon: usize) -> Result<Self> {
        Fundamentals::new(vec![a; horizon + 1], vec![alpha; horizon + 1], vec![agg; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.a.len() - 1
    }

    pub fn n_occupations(&self) -> usize {
        self.a[0].len()
    }

    /// Periods `start..=T`, re-indexed from zero.
    pub fn tail(&self, start: usize) -> Result<Self> {
        if start > self.horizon() {
            return Err(DidesError::Dimension(format!("start {start} beyond horizon {}", self.horizon())));
        }
        Ok(Fundamentals { a: self.a[start..].to_vec(), alpha: self.alpha[start..].to_vec(), agg: self.agg[start..].to_vec() })
    }

    /// Fundamentals multiplied period by period by the level ratios of `hats`.
    pub fn apply(&self, hats: &FundamentalHats) -> Result<Self> {
        if hats.horizon() != self.horizon() || hats.n_occupations() != self.n_occupations() {
            return Err(DidesError::Dimension("hat path does not match the fundamentals".into()));
        }
        let (ra, ralpha, ragg) = hats.level_ratios();
        Fundamentals::new(
            (0..=self.horizon()).map(|t| self.a[t].component_mul(&ra[t])).collect(),
            (0..=self.horizon()).map(|t| self.alpha[t].component_mul(&ralpha[t])).collect(),
            (0..=self.horizon()).map(|t| self.agg[t] * ragg[t]).collect(),
        )
    }
}

/// An observed (or simulated) path of transitions, employment and wages for
/// periods `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPanel {
    /// `μ_t`, the transitions taking `L_{t-1}` to `L_t`.
    pub mu: Vec<DMatrix<f64>>,
    pub mu_tilde: Vec<DMatrix<f64>>,
    pub l: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub residual_flows: Vec<DVector<f64>>,
    /// Employment before period 0.
    pub l_init: DVector<f64>,
}

impl TransitionPanel {
    /// Validates an observed panel and computes adjusted transitions row by row.
    pub fn new(
        mu: Vec<DMatrix<f64>>,
        l: Vec<DVector<f64>>,
        w: Vec<DVector<f64>>,
        residual_flows: Option<Vec<DVector<f64>>>,
        l_init: DVector<f64>,
        skills: &SkillSpace,
    ) -> Result<Self> {
        let n = skills.n_occupations();
        let periods = mu.len();
        if periods == 0 || l.len() != periods || w.len() != periods {
            return Err(DidesError::Dimension(format!(
                "panel has {} transition, {} employment and {} wage periods",
                mu.len(),
                l.len(),
                w.len()
            )));
        }
        let residual_flows = residual_flows.unwrap_or_else(|| vec![DVector::zeros(n); periods]);
        if residual_flows.len() != periods {
            return Err(DidesError::Dimension("residual flows do not cover every period".into()));
        }
        ensure_len("L_init", &l_init, n)?;
        ensure_positive("L_init", &l_init)?;
        let opts = SolverOptions::default();
        let mut mu_tilde = Vec::with_capacity(periods);
        let mut prev = l_init.clone();
        for t in 0..periods {
            if mu[t].shape() != (n, n) {
                return Err(DidesError::Dimension(format!("mu at t={t} is {:?}", mu[t].shape())));
            }
            ensure_len("L", &l[t], n)?;
            ensure_positive("L", &l[t])?;
            ensure_len("w", &w[t], n)?;
            ensure_positive("w", &w[t])?;
            ensure_len("residual flows", &residual_flows[t], n)?;
            ensure_finite("residual flows", &residual_flows[t])?;
            let flow_sum = residual_flows[t].sum();
            if flow_sum.abs() > 1e-10 * l[t].sum() {
                return Err(DidesError::Domain(format!("residual flows at t={t} sum to {flow_sum:.3e}, not 0")));
            }
            let mut tilde = DMatrix::zeros(n, n);
            for o in 0..n {
                let row = mu[t].row(o).transpose();
                if (row.sum() - 1.0).abs() > 1e-10 {
                    return Err(DidesError::Domain(format!("row {o} of mu at t={t} sums to {}", row.sum())));
                }
                let inv = invert_shares_with(&row, skills, &opts).map_err(|e| match e {
                    DidesError::DegenerateShare { occupation } => DidesError::Domain(format!(
                        "transition {o} -> {occupation} at t={t} is zero; smooth the panel first"
                    )),
                    other => other,
                })?;
                tilde.set_row(o, &inv.pi_tilde.transpose());
            }
            mu_tilde.push(tilde);
            let implied = mu[t].transpose() * &prev + &residual_flows[t];
            let gap = sup_norm(&(&implied - &l[t]));
            if gap > 1e-8 * l[t].sum() {
                return Err(DidesError::Domain(format!(
                    "employment at t={t} is inconsistent with transitions (gap {gap:.3e})"
                )));
            }
            prev = l[t].clone();
        }
        Ok(TransitionPanel { mu, mu_tilde, l, w, residual_flows, l_init })
    }

    pub fn horizon(&self) -> usize {
        self.mu.len() - 1
    }

    pub fn n_occupations(&self) -> usize {
        self.l_init.len()
    }

    /// Wage-bill shares `w_{o,t} L_{o,t} / Σ w L`.
    pub fn wagebill_shares(&self, t: usize) -> DVector<f64> {
        let bill = self.w[t].component_mul(&self.l[t]);
        let total = bill.sum();
        bill / total
    }
}

/// Adjusted transitions `μ̃` for one origin: the unique solution of
/// `μ_{o'} = μ̃_{o'} F_{o'}(μ̃)`.
pub fn invert_transitions(mu_row: &DVector<f64>, skills: &SkillSpace) -> Result<DVector<f64>> {
    Ok(invert_shares_with(mu_row, skills, &SolverOptions::default())?.pi_tilde)
}

/// Forward map `μ̃ ↦ μ̃ ⊙ ∇F(μ̃)`.
pub fn forward_transitions(mu_tilde_row: &DVector<f64>, skills: &SkillSpace) -> Result<DVector<f64>> {
    ensure_positive("mu_tilde", mu_tilde_row)?;
    Ok(forward_ln_shares(&mu_tilde_row.map(f64::ln), skills).map(f64::exp))
}

/// Output of [`solve_levels_path`]: the panel plus the (unobservable) values.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelsPath {
    pub panel: TransitionPanel,
    /// `V_t` for `t = 0..=T+1`; `V_{T+1}` is the stationary value at period-`T` conditions.
    pub values: Vec<DVector<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

fn check_sigma_levels(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DidesError::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    if (sigma - 1.0).abs() < 1e-12 {
        return Err(DidesError::Parameter("the levels model needs sigma != 1".into()));
    }
    Ok(())
}

/// Marginal products `ln w_o = r ln 𝒜 + (ln y + ln α_o - ln L_o)/σ` with
/// `y = 𝒜 (Σ α^{1/σ} L^r)^{1/r}`, `r = (σ-1)/σ`.
fn ln_wages_from_labor(l: &DVector<f64>, alpha: &DVector<f64>, agg: f64, sigma: f64) -> Result<DVector<f64>> {
    ensure_positive("L", l)?;
    let r = (sigma - 1.0) / sigma;
    let ln_y = agg.ln() + log_sum_exp((0..l.len()).map(|o| alpha[o].ln() / sigma + r * l[o].ln())) / r;
    Ok(DVector::from_fn(l.len(), |o, _| r * agg.ln() + (ln_y + alpha[o].ln() - l[o].ln()) / sigma))
}

struct Choice<'a> {
    params: &'a DynamicParams,
}

impl Choice<'_> {
    /// `ln x_{o·}` given destination utility `ln A + ν(βV' + ln w)`.
    fn ln_x_row(&self, o: usize, base: &DVector<f64>) -> DVector<f64> {
        let nu = self.params.kappa_ratio;
        DVector::from_fn(base.len(), |j, _| base[j] - nu * self.params.tau[(o, j)])
    }

    fn base(&self, ln_a: &DVector<f64>, ln_w: &DVector<f64>, v_next: &DVector<f64>) -> DVector<f64> {
        let nu = self.params.kappa_ratio;
        let beta = self.params.beta;
        DVector::from_fn(ln_a.len(), |j, _| ln_a[j] + nu * (beta * v_next[j] + ln_w[j]))
    }

    fn values(&self, ln_a: &DVector<f64>, ln_w: &DVector<f64>, v_next: &DVector<f64>) -> DVector<f64> {
        let nu = self.params.kappa_ratio;
        let base = self.base(ln_a, ln_w, v_next);
        DVector::from_fn(ln_a.len(), |o, _| {
            (evaluate_nests(&self.ln_x_row(o, &base), self.params.skills()).ln_f + EULER_GAMMA) / nu
        })
    }

    fn transitions(&self, ln_a: &DVector<f64>, ln_w: &DVector<f64>, v_next: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = ln_a.len();
        let base = self.base(ln_a, ln_w, v_next);
        let mut mu = DMatrix::zeros(n, n);
        let mut tilde = DMatrix::zeros(n, n);
        for o in 0..n {
            let ln_x = self.ln_x_row(o, &base);
            let dec = shares_from_ln_x(&ln_x, self.params.skills())?;
            let ln_f = evaluate_nests(&ln_x, self.params.skills()).ln_f;
            mu.set_row(o, &dec.pi.transpose());
            tilde.set_row(o, &ln_x.map(|v| (v - ln_f).exp()).transpose());
        }
        Ok((mu, tilde))
    }

    /// Stationary values at fixed `(A, w)`: the fixed point of the Bellman
    /// operator, a `β`-contraction.
    fn stationary_values(&self, ln_a: &DVector<f64>, ln_w: &DVector<f64>, start: &DVector<f64>) -> Result<DVector<f64>> {
        let mut v = start.clone();
        let tol = 1e-13 * (1.0 + sup_norm(&v));
        let cap = 200_000;
        for _ in 0..cap {
            let next = self.values(ln_a, ln_w, &v);
            let diff = sup_norm(&(&next - &v));
            v = next;
            if diff < tol.max(1e-13 * sup_norm(&v)) {
                return Ok(v);
            }
        }
        Err(DidesError::NoConvergence { solver: "stationary Bellman", iterations: cap, residual: f64::NAN, trace: vec![] })
    }
}

/// Rational-expectations path of the levels model for periods `0..=T`.
///
/// `l_init` is employment before period 0. Beyond `T` the economy is held
/// at period-`T` conditions, so `V_{T+1}` is the stationary value there.
/// The wage path is found by an outer damped fixed point; within each period
/// wages clear the market given next-period values (Newton).
pub fn solve_levels_path(
    fundamentals: &Fundamentals,
    params: &DynamicParams,
    l_init: &DVector<f64>,
    sigma: f64,
    residual_flows: Option<&[DVector<f64>]>,
    opts: &SolverOptions,
) -> Result<LevelsPath> {
    opts.validate()?;
    check_sigma_levels(sigma)?;
    let n = params.n_occupations();
    if fundamentals.n_occupations() != n {
        return Err(DidesError::Dimension("fundamentals and skills disagree on the occupation count".into()));
    }
    ensure_len("L_init", l_init, n)?;
    ensure_positive("L_init", l_init)?;
    let horizon = fundamentals.horizon();
    let flows: Vec<DVector<f64>> = match residual_flows {
        Some(f) if f.len() == horizon + 1 => f.to_vec(),
        Some(_) => return Err(DidesError::Dimension("residual flows must cover periods 0..=T".into())),
        None => vec![DVector::zeros(n); horizon + 1],
    };
    let ln_a: Vec<DVector<f64>> = fundamentals.a.iter().map(|a| a.map(f64::ln)).collect();
    let choice = Choice { params };

    let start = ln_wages_from_labor(l_init, &fundamentals.alpha[0], fundamentals.agg[0], sigma)?;
    let mut ln_w: Vec<DVector<f64>> = vec![start; horizon + 1];
    let mut values = vec![DVector::zeros(n); horizon + 2];
    let mut trace = Vec::new();
    for iter in 0..opts.max_iter {
        // Backward: values given the wage path.
        let guess = values[horizon + 1].clone();
        values[horizon + 1] = choice.stationary_values(&ln_a[horizon], &ln_w[horizon], &guess)?;
        for t in (0..=horizon).rev() {
            values[t] = choice.values(&ln_a[t], &ln_w[t], &values[t + 1]);
        }
        // Forward: allocations and market-clearing wages given values.
        let mut prev = l_init.clone();
        let mut new_w = Vec::with_capacity(horizon + 1);
        let mut mus = Vec::with_capacity(horizon + 1);
        let mut tildes = Vec::with_capacity(horizon + 1);
        let mut ls = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let alloc = |x: &DVector<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
                let (mu, tilde) = choice.transitions(&ln_a[t], x, &values[t + 1])?;
                let l = mu.transpose() * &prev + &flows[t];
                Ok((mu, tilde, l))
            };
            let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
                let (_, _, l) = alloc(x)?;
                Ok(x - ln_wages_from_labor(&l, &fundamentals.alpha[t], fundamentals.agg[t], sigma)?)
            };
            let inner = SolverOptions { tol: (opts.tol * 1e-2).max(1e-14), max_iter: 200, damping: 1.0 };
            let rep = newton_solve("period wage clearing", residual, None::<NoJacobian>, ln_w[t].clone(), &inner)?;
            let (mu, tilde, l) = alloc(&rep.x)?;
            new_w.push(rep.x);
            mus.push(mu);
            tildes.push(tilde);
            prev = l.clone();
            ls.push(l);
        }
        let diff = (0..=horizon).map(|t| sup_norm(&(&new_w[t] - &ln_w[t]))).fold(0.0, f64::max);
        trace.push(diff);
        if diff < opts.tol {
            let panel = TransitionPanel {
                mu: mus,
                mu_tilde: tildes,
                l: ls,
                w: new_w.iter().map(|x| x.map(f64::exp)).collect(),
                residual_flows: flows,
                l_init: l_init.clone(),
            };
            return Ok(LevelsPath { panel, values, iterations: iter + 1, residual: diff });
        }
        for t in 0..=horizon {
            ln_w[t] = &ln_w[t] * (1.0 - opts.damping) + &new_w[t] * opts.damping;
        }
    }
    Err(DidesError::NoConvergence {
        solver: "levels path",
        iterations: opts.max_iter,
        residual: *trace.last().unwrap_or(&f64::NAN),
        trace: thin_trace(&trace),
    })
}

/// Changes in fundamentals between a counterfactual and the baseline, stored
/// as period-on-period growth hats `x̂_t = (x'_t/x_t)/(x'_{t-1}/x_{t-1})` for
/// `t = 0..=T`. Period 0 is already realized, so its entries are one.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalHats {
    pub alpha: Vec<DVector<f64>>,
    pub a: Vec<DVector<f64>>,
    pub agg: Vec<f64>,
}

impl FundamentalHats {
    pub fn ones(n_occupations: usize, horizon: usize) -> Self {
        FundamentalHats {
            alpha: vec![DVector::from_element(n_occupations, 1.0); horizon + 1],
            a: vec![DVector::from_element(n_occupations, 1.0); horizon + 1],
            agg: vec![1.0; horizon + 1],
        }
    }

    /// Builds growth hats from level ratios `x'_t/x_t`; the period-0 ratios
    /// must be one.
    pub fn from_level_ratios(alpha: Vec<DVector<f64>>, a: Vec<DVector<f64>>, agg: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.len() != a.len() || alpha.len() != agg.len() {
            return Err(DidesError::Dimension("level-ratio paths must share one length".into()));
        }
        let n = alpha[0].len();
        for t in 0..alpha.len() {
            ensure_len("alpha ratio", &alpha[t], n)?;
            ensure_len("A ratio", &a[t], n)?;
            ensure_positive("alpha ratio", &alpha[t])?;
            ensure_positive("A ratio", &a[t])?;
            if !(agg[t] > 0.0) || !agg[t].is_finite() {
                return Err(DidesError::Domain(format!("aggregate ratio at t={t} must be positive")));
            }
        }
        let growth = |v: &[DVector<f64>]| -> Vec<DVector<f64>> {
            (0..v.len()).map(|t| if t == 0 { v[0].clone() } else { v[t].component_div(&v[t - 1]) }).collect()
        };
        let out = FundamentalHats {
            alpha: growth(&alpha),
            a: growth(&a),
            agg: (0..agg.len()).map(|t| if t == 0 { agg[0] } else { agg[t] / agg[t - 1] }).collect(),
        };
        out.check()?;
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        let one = |v: &DVector<f64>| v.iter().all(|x| (x - 1.0).abs() < 1e-14);
        if !one(&self.alpha[0]) || !one(&self.a[0]) || (self.agg[0] - 1.0).abs() > 1e-14 {
            return Err(DidesError::Domain("period-0 fundamentals cannot change (the shock arrives at t = 1)".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn n_occupations(&self) -> usize {
        self.alpha[0].len()
    }

    /// Cumulated level ratios `(A'/A, α'/α, 𝒜'/𝒜)` per period.
    pub fn level_ratios(&self) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<f64>) {
        let cum = |v: &[DVector<f64>]| -> Vec<DVector<f64>> {
            let mut acc = DVector::from_element(v[0].len(), 1.0);
            v.iter()
                .map(|x| {
                    acc.component_mul_assign(x);
                    acc.clone()
                })
                .collect()
        };
        let mut g = 1.0;
        let agg = self.agg.iter().map(|x| {
            g *= x;
            g
        });
        (cum(&self.a), cum(&self.alpha), agg.collect())
    }
}

/// Solution of a dynamic counterfactual in changes.
#[derive(Debug, Clone, PartialEq)]
pub struct HatPath {
    pub fundamentals: FundamentalHats,
    /// Growth hats `ŵ_t`, `t = 0..=T` (`ŵ_0 = 1`).
    pub w_hat: Vec<DVector<f64>>,
    /// `û_t` for `t = 0..=T+1`: entry 1 is the level ratio `u'_1/u_1`,
    /// entries `t ≥ 2` are growth hats, `û_{T+1} = 1` and entry 0 is unused (one).
    pub u_hat: Vec<DVector<f64>>,
    /// Counterfactual adjusted transitions `μ̃'_t` (baseline at `t = 0`).
    pub mu_tilde_prime: Vec<DMatrix<f64>>,
    pub mu_prime: Vec<DMatrix<f64>>,
    pub l_prime: Vec<DVector<f64>>,
    /// Level ratios `w'_t/w_t`.
    pub w_ratio: Vec<DVector<f64>>,
    /// Staying-probability ratios `μ̃'_{oo,t}/μ̃_{oo,t}`.
    pub stay_ratio: Vec<DVector<f64>>,
    pub beta: f64,
    pub kappa_ratio: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl HatPath {
    pub fn horizon(&self) -> usize {
        self.w_hat.len() - 1
    }
}

struct HatProduction<'a> {
    baseline: &'a TransitionPanel,
    alpha_ratio: Vec<DVector<f64>>,
    agg_ratio: Vec<f64>,
    sigma: f64,
}

impl HatProduction<'_> {
    /// Level wage ratios `w̌_t = 𝒜̌ (Ǧ α̌ / Ľ)^{1/σ}` with
    /// `Ǧ = [Σ s_{o,t} α̌^{1/σ} Ľ^r]^{1/r}`.
    fn ln_w_ratio(&self, t: usize, ln_l_ratio: &DVector<f64>) -> DVector<f64> {
        let s = self.baseline.wagebill_shares(t);
        let sigma = self.sigma;
        let r = (sigma - 1.0) / sigma;
        let ln_alpha = self.alpha_ratio[t].map(f64::ln);
        let ln_g = log_sum_exp((0..s.len()).map(|o| s[o].ln() + ln_alpha[o] / sigma + r * ln_l_ratio[o])) / r;
        DVector::from_fn(s.len(), |o, _| self.agg_ratio[t].ln() + (ln_g + ln_alpha[o] - ln_l_ratio[o]) / sigma)
    }
}

fn nu_power(v: &DVector<f64>, p: f64) -> DVector<f64> {
    v.map(|x| x.powf(p))
}

/// Dynamic hat algebra: counterfactual paths from the observed baseline panel
/// and fundamental changes that are unexpected at `t = 1`.
///
/// For `t ≥ 2`, with `b = βθ/κ`,
/// `μ̃'_t ∝ μ̃'_{t-1} ⊙ μ̃̇_t ⊙ Â_t ŵ_t^{θ/κ} û_{t+1}^b` (rows normalized by `F`) and
/// `û_t = F(μ̃'_{t-1} ⊙ μ̃̇_t ⊙ Â_t ŵ_t^{θ/κ} û_{t+1}^b)^{κ/θ}`. At `t = 1` the
/// baseline transitions were chosen without knowledge of the shock, so
/// `μ̃_{·,1} ⊙ û_1^b` takes the place of `μ̃'_0 ⊙ μ̃̇_1`, which makes `û_1`
/// implicit. `û_{T+1} = 1`. Wages clear the market in changes each period
/// given baseline wage-bill shares, and `L'_t = μ'_t' L'_{t-1} + ΔL_t`.
///
/// Solved by backward sweeps on `û` (damped geometrically) alternating with
/// forward sweeps that clear each period's market by Newton's method.
pub fn dynamic_hat_counterfactual(
    baseline: &TransitionPanel,
    hats: &FundamentalHats,
    params: &DynamicParams,
    sigma: f64,
    opts: &SolverOptions,
) -> Result<HatPath> {
    opts.validate()?;
    check_sigma_levels(sigma)?;
    let n = params.n_occupations();
    let horizon = baseline.horizon();
    if baseline.n_occupations() != n || hats.n_occupations() != n {
        return Err(DidesError::Dimension("baseline, hats and parameters disagree on the occupation count".into()));
    }
    if hats.horizon() != horizon {
        return Err(DidesError::Dimension(format!(
            "hat path covers {} periods, baseline covers {}",
            hats.horizon() + 1,
            horizon + 1
        )));
    }
    hats.check()?;
    let nu = params.kappa_ratio;
    let b = params.beta * nu;
    let skills = params.skills();
    let (_, alpha_ratio, agg_ratio) = hats.level_ratios();
    let prod = HatProduction { baseline, alpha_ratio, agg_ratio, sigma };
    let ones = DVector::from_element(n, 1.0);

    let unchanged = |v: &[DVector<f64>]| v.iter().all(|x| x.iter().all(|&e| e == 1.0));
    if horizon == 0 || (unchanged(&hats.alpha) && unchanged(&hats.a) && hats.agg.iter().all(|&g| g == 1.0)) {
        return Ok(trivial_path(baseline, hats, params));
    }

    // Baseline adjusted-transition growth μ̃̇_t for t ≥ 2.
    let mu_dot: Vec<DMatrix<f64>> = (0..=horizon)
        .map(|t| if t >= 2 { baseline.mu_tilde[t].component_div(&baseline.mu_tilde[t - 1]) } else { DMatrix::from_element(n, n, 1.0) })
        .collect();

    let mut w_hat = vec![ones.clone(); horizon + 1];
    let mut u_hat = vec![ones.clone(); horizon + 2];
    let mut mu_tilde_prime: Vec<DMatrix<f64>> = baseline.mu_tilde.clone();
    let mut mu_prime: Vec<DMatrix<f64>> = baseline.mu.clone();
    let mut l_prime: Vec<DVector<f64>> = baseline.l.clone();
    let mut w_ratio = vec![ones.clone(); horizon + 1];

    // Row kernel `prev_o ⊙ dot_o ⊙ dest` in logs.
    let kernel = |prev: &DMatrix<f64>, dot: &DMatrix<f64>, dest: &DVector<f64>, o: usize| -> DVector<f64> {
        DVector::from_fn(n, |j, _| prev[(o, j)].ln() + dot[(o, j)].ln() + dest[j].ln())
    };
    let ln_f_row = |ln_y: &DVector<f64>| evaluate_nests(ln_y, skills).ln_f;

    let mut trace = Vec::new();
    for iter in 0..opts.max_iter {
        let old_u = u_hat.clone();
        let old_w = w_hat.clone();

        // Backward sweep over t = T..2.
        for t in (2..=horizon).rev() {
            let dest = hats.a[t].component_mul(&nu_power(&w_hat[t], nu)).component_mul(&nu_power(&u_hat[t + 1], b));
            let target = DVector::from_fn(n, |o, _| (ln_f_row(&kernel(&mu_tilde_prime[t - 1], &mu_dot[t], &dest, o)) / nu).exp());
            u_hat[t] = damp_geometric(&u_hat[t], &target, opts.damping);
        }
        // Period 1: û_1 solves û_1^ν = F(μ̃_1 ⊙ û_1^b ⊙ Â_1 ŵ_1^ν û_2^b), a β-contraction.
        let dest1 = hats.a[1].component_mul(&nu_power(&w_hat[1], nu)).component_mul(&nu_power(&u_hat[2], b));
        u_hat[1] = solve_first_period_u(&baseline.mu_tilde[1], &dest1, &u_hat[1], nu, b, skills)?;

        // Forward sweep: clear each period's market.
        for t in 1..=horizon {
            let prev_l = l_prime[t - 1].clone();
            let base_l = &baseline.l[t];
            let (prev_rows, dot) = if t == 1 {
                (baseline.mu_tilde[1].clone(), DMatrix::from_fn(n, n, |_, j| u_hat[1][j].powf(b)))
            } else {
                (mu_tilde_prime[t - 1].clone(), mu_dot[t].clone())
            };
            let w_ratio_prev = w_ratio[t - 1].clone();
            let u_next = u_hat[t + 1].clone();
            let alloc = |ln_w_hat: &DVector<f64>| -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
                let dest = hats.a[t].component_mul(&ln_w_hat.map(|x| (nu * x).exp())).component_mul(&nu_power(&u_next, b));
                let mut mt = DMatrix::zeros(n, n);
                let mut m = DMatrix::zeros(n, n);
                for o in 0..n {
                    let ln_y = kernel(&prev_rows, &dot, &dest, o);
                    let dec = shares_from_ln_x(&ln_y, skills)?;
                    let lf = ln_f_row(&ln_y);
                    mt.set_row(o, &ln_y.map(|v| (v - lf).exp()).transpose());
                    m.set_row(o, &dec.pi.transpose());
                }
                let l = m.transpose() * &prev_l + &baseline.residual_flows[t];
                Ok((mt, m, l))
            };
            let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
                let (_, _, l) = alloc(x)?;
                ensure_positive("L'", &l)?;
                let ln_l_ratio = DVector::from_fn(n, |o, _| (l[o] / base_l[o]).ln());
                let ln_ratio = prod.ln_w_ratio(t, &ln_l_ratio);
                Ok(DVector::from_fn(n, |o, _| x[o] - (ln_ratio[o] - w_ratio_prev[o].ln())))
            };
            let inner = SolverOptions { tol: (opts.tol * 1e-2).max(1e-14), max_iter: 200, damping: 1.0 };
            let rep = newton_solve("period wage clearing (hats)", residual, None::<NoJacobian>, w_hat[t].map(f64::ln), &inner)?;
            let (mt, m, l) = alloc(&rep.x)?;
            w_hat[t] = rep.x.map(f64::exp);
            w_ratio[t] = w_ratio_prev.component_mul(&w_hat[t]);
            mu_tilde_prime[t] = mt;
            mu_prime[t] = m;
            l_prime[t] = l;
        }

        let du = (1..=horizon).map(|t| sup_norm(&(u_hat[t].map(f64::ln) - old_u[t].map(f64::ln)))).fold(0.0, f64::max);
        let dw = (1..=horizon).map(|t| sup_norm(&(w_hat[t].map(f64::ln) - old_w[t].map(f64::ln)))).fold(0.0, f64::max);
        // Consistency of the backward equations with the final forward sweep.
        let mut eq = 0.0_f64;
        for t in 2..=horizon {
            let dest = hats.a[t].component_mul(&nu_power(&w_hat[t], nu)).component_mul(&nu_power(&u_hat[t + 1], b));
            for o in 0..n {
                let target = ln_f_row(&kernel(&mu_tilde_prime[t - 1], &mu_dot[t], &dest, o)) / nu;
                eq = eq.max((target - u_hat[t][o].ln()).abs());
            }
        }
        let res = du.max(dw).max(eq);
        trace.push(res);
        if res < opts.tol {
            let stay_ratio = (0..=horizon)
                .map(|t| DVector::from_fn(n, |o, _| mu_tilde_prime[t][(o, o)] / baseline.mu_tilde[t][(o, o)]))
                .collect();
            return Ok(HatPath {
                fundamentals: hats.clone(),
                w_hat,
                u_hat,
                mu_tilde_prime,
                mu_prime,
                l_prime,
                w_ratio,
                stay_ratio,
                beta: params.beta,
                kappa_ratio: nu,
                iterations: iter + 1,
                residual: res,
            });
        }
    }
    Err(DidesError::NoConvergence {
        solver: "dynamic hat algebra",
        iterations: opts.max_iter,
        residual: *trace.last().unwrap_or(&f64::NAN),
        trace: thin_trace(&trace),
    })
}

fn trivial_path(baseline: &TransitionPanel, hats: &FundamentalHats, params: &DynamicParams) -> HatPath {
    let n = baseline.n_occupations();
    let periods = baseline.horizon() + 1;
    let ones = DVector::from_element(n, 1.0);
    HatPath {
        fundamentals: hats.clone(),
        w_hat: vec![ones.clone(); periods],
        u_hat: vec![ones.clone(); periods + 1],
        mu_tilde_prime: baseline.mu_tilde.clone(),
        mu_prime: baseline.mu.clone(),
        l_prime: baseline.l.clone(),
        w_ratio: vec![ones.clone(); periods],
        stay_ratio: vec![ones; periods],
        beta: params.beta,
        kappa_ratio: params.kappa_ratio,
        iterations: 0,
        residual: 0.0,
    }
}

fn damp_geometric(old: &DVector<f64>, target: &DVector<f64>, damping: f64) -> DVector<f64> {
    old.zip_map(target, |a, b| (a.ln() * (1.0 - damping) + b.ln() * damping).exp())
}

fn solve_first_period_u(
    mu_tilde_1: &DMatrix<f64>,
    dest: &DVector<f64>,
    start: &DVector<f64>,
    nu: f64,
    b: f64,
    skills: &SkillSpace,
) -> Result<DVector<f64>> {
    let n = dest.len();
    let mut u = start.clone();
    let cap = 100_000;
    for _ in 0..cap {
        let next = DVector::from_fn(n, |o, _| {
            let ln_y = DVector::from_fn(n, |j, _| mu_tilde_1[(o, j)].ln() + dest[j].ln() + b * u[j].ln());
            (evaluate_nests(&ln_y, skills).ln_f / nu).exp()
        });
        let diff = sup_norm(&(next.map(f64::ln) - u.map(f64::ln)));
        u = next;
        if diff < 1e-15 {
            return Ok(u);
        }
    }
    Err(DidesError::NoConvergence { solver: "first-period values", iterations: cap, residual: f64::NAN, trace: vec![] })
}

/// Consumption-equivalent welfare change of workers starting period `t` in
/// each occupation, for `t = 1..=T` (entry `t-1`):
///
/// `EV_{o,t} = (1-β) Σ_{s≥t} β^{s-t} [ln w̌_{o,s} - (κ/θ) ln(μ̃'_{oo,s}/μ̃_{oo,s}) + (κ/θ) ln Ǎ_{o,s}]`
///
/// with terms beyond `T` held at their period-`T` values.
pub fn welfare_ev(path: &HatPath) -> Vec<DVector<f64>> {
    let horizon = path.horizon();
    let beta = path.beta;
    let nu = path.kappa_ratio;
    let n = path.w_ratio[0].len();
    if horizon == 0 {
        return vec![];
    }
    if beta.powi(horizon as i32 - 1) > 1e-6 {
        log::warn!(
            "horizon {horizon} is short for beta = {beta}: the tail carries weight {:.2e}",
            beta.powi(horizon as i32 - 1)
        );
    }
    let (a_ratio, _, _) = path.fundamentals.level_ratios();
    let term = |t: usize| -> DVector<f64> {
        DVector::from_fn(n, |o, _| path.w_ratio[t][o].ln() + (a_ratio[t][o].ln() - path.stay_ratio[t][o].ln()) / nu)
    };
    let mut dv = vec![DVector::zeros(n); horizon + 1];
    dv[horizon] = term(horizon) / (1.0 - beta);
    for t in (1..horizon).rev() {
        dv[t] = term(t) + &dv[t + 1] * beta;
    }
    (1..=horizon).map(|t| &dv[t] * (1.0 - beta)).collect()
}

/// Demand shocks that reproduce a target wage path.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandCalibration {
    pub hats: FundamentalHats,
    pub path: HatPath,
    /// Sup-norm gap between solved and target `ln w'/w`.
    pub residual: f64,
    pub iterations: usize,
}

/// Targets `ln(w'_{o,t}/w_{o,t}) = effect_t · z_o` for `t = 1..=T`.
pub fn exposure_wage_targets(effect_per_unit: &[f64], z: &DVector<f64>) -> Vec<DVector<f64>> {
    effect_per_unit.iter().map(|e| z * *e).collect()
}

/// Finds task-share changes `α'/α` (periods `1..=T`) such that the dynamic
/// counterfactual delivers the target log wage ratios `target[t-1]`.
///
/// Given counterfactual employment, the task shares that deliver a wage
/// vector in closed form are `α̌_o ∝ (w̌_o/𝒜̌)^σ Ľ_o`, scaled so that the
/// output index is consistent. Employment is then updated by re-solving the
/// dynamic model until the wage targets are met.
pub fn calibrate_demand_from_wage_path(
    target: &[DVector<f64>],
    baseline: &TransitionPanel,
    params: &DynamicParams,
    sigma: f64,
    other: Option<&FundamentalHats>,
    opts: &SolverOptions,
) -> Result<DemandCalibration> {
    opts.validate()?;
    check_sigma_levels(sigma)?;
    let horizon = baseline.horizon();
    let n = baseline.n_occupations();
    if target.len() != horizon {
        return Err(DidesError::Dimension(format!("target covers {} periods, expected {horizon}", target.len())));
    }
    for t in target {
        ensure_len("target", t, n)?;
        ensure_finite("target", t)?;
    }
    let base_hats = match other {
        Some(h) => h.clone(),
        None => FundamentalHats::ones(n, horizon),
    };
    let (a_ratio, _, agg_ratio) = base_hats.level_ratios();
    let r = (sigma - 1.0) / sigma;
    let mut l_ratio: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0); horizon + 1];
    let mut trace = Vec::new();
    for iter in 0..opts.max_iter {
        // Closed-form task shares given the current employment ratios.
        let mut alpha_ratio = vec![DVector::from_element(n, 1.0); horizon + 1];
        for t in 1..=horizon {
            let s = baseline.wagebill_shares(t);
            let ln_q = DVector::from_fn(n, |o, _| sigma * (target[t - 1][o] - agg_ratio[t].ln()) + l_ratio[t][o].ln());
            let ln_g = log_sum_exp((0..n).map(|o| s[o].ln() + ln_q[o] / sigma + r * l_ratio[t][o].ln())) / r;
            let ln_k = -r * ln_g;
            alpha_ratio[t] = ln_q.map(|v| (v + ln_k).exp());
        }
        let hats = FundamentalHats::from_level_ratios(alpha_ratio, a_ratio.clone(), agg_ratio.clone())?;
        let path = dynamic_hat_counterfactual(baseline, &hats, params, sigma, opts)?;
        let gap = (1..=horizon)
            .map(|t| sup_norm(&(path.w_ratio[t].map(f64::ln) - &target[t - 1])))
            .fold(0.0, f64::max);
        trace.push(gap);
        if gap < opts.tol.max(1e-12) * 10.0 {
            return Ok(DemandCalibration { hats, path, residual: gap, iterations: iter + 1 });
        }
        for t in 1..=horizon {
            l_ratio[t] = path.l_prime[t].component_div(&baseline.l[t]);
        }
    }
    Err(DidesError::NoConvergence {
        solver: "demand calibration",
        iterations: opts.max_iter,
        residual: *trace.last().unwrap_or(&f64::NAN),
        trace: thin_trace(&trace),
    })
}

/// Rescales a calibrated task-share path to another exposure measure,
/// `ln(α'/α)^{new}_o = ln(α'/α)^{old}_o · z^{new}_o / z^{old}_o`.
pub fn rescale_shock_by_exposure(
    hats: &FundamentalHats,
    z_old: &DVector<f64>,
    z_new: &DVector<f64>,
) -> Result<FundamentalHats> {
    let n = hats.n_occupations();
    ensure_len("z_old", z_old, n)?;
    ensure_len("z_new", z_new, n)?;
    let (a_ratio, alpha_ratio, agg_ratio) = hats.level_ratios();
    let mut scaled = Vec::with_capacity(alpha_ratio.len());
    for (t, ratio) in alpha_ratio.iter().enumerate() {
        let mut out = DVector::from_element(n, 1.0);
        for o in 0..n {
            let ln_r = ratio[o].ln();
            if z_old[o] == 0.0 {
                if ln_r.abs() > 1e-14 {
                    return Err(DidesError::Domain(format!(
                        "occupation {o} has zero exposure but a nonzero shock at t={t}"
                    )));
                }
                continue;
            }
            out[o] = (ln_r * z_new[o] / z_old[o]).exp();
        }
        scaled.push(out);
    }
    FundamentalHats::from_level_ratios(scaled, a_ratio, agg_ratio)
}

/// Euler-equation residual on a levels path:
/// `ln(μ̃_{oo',t}/μ̃_{oo,t}) - (θ/κ) ln(w_{o',t}/w_{o,t}) - β ln(μ̃_{oo',t+1}/μ̃_{o'o',t+1})`.
/// On model paths it equals `(β-1)(θ/κ)τ_{oo'} + ln(A_{o',t}/A_{o,t})` exactly.
pub fn euler_lhs(panel: &TransitionPanel, params: &DynamicParams, t: usize, o: usize, d: usize) -> f64 {
    let mt = &panel.mu_tilde;
    (mt[t][(o, d)] / mt[t][(o, o)]).ln()
        - params.kappa_ratio * (panel.w[t][d] / panel.w[t][o]).ln()
        - params.beta * (mt[t + 1][(o, d)] / mt[t + 1][(d, d)]).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: f64, nu: f64, tau: f64) -> DynamicParams {
        let skills = SkillSpace::from_rows(&[&[0.8, 0.2], &[0.6, 0.4], &[0.1, 0.9]], &[0.5, 0.3]).unwrap();
        let tau = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { tau * (1.0 + 0.3 * (i + j) as f64) });
        DynamicParams::new(beta, nu, tau, skills).unwrap()
    }

    fn fundamentals(horizon: usize) -> Fundamentals {
        Fundamentals::constant(
            DVector::from_vec(vec![1.0, 0.8, 1.2]),
            DVector::from_vec(vec![0.3, 0.5, 0.2]),
            1.0,
            horizon,
        )
        .unwrap()
    }

    fn tight() -> SolverOptions {
        SolverOptions { tol: 1e-12, max_iter: 2000, damping: 0.5 }
    }

    #[test]
    fn rows_stochastic_and_conservation() {
        let p = params(0.9, 0.8, 0.5);
        let lp = solve_levels_path(&fundamentals(8), &p, &DVector::from_vec(vec![0.5, 0.3, 0.2]), 1.5, None, &tight()).unwrap();
        for t in 0..=8 {
            for o in 0..3 {
                assert!((lp.panel.mu[t].row(o).sum() - 1.0).abs() < 1e-12);
            }
            assert!((lp.panel.l[t].sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_inversion_round_trip() {
        let p = params(0.9, 0.8, 0.5);
        let row = DVector::from_vec(vec![0.7, 0.2, 0.1]);
        let tilde = invert_transitions(&row, p.skills()).unwrap();
        let back = forward_transitions(&tilde, p.skills()).unwrap();
        assert!((back - row).amax() < 1e-12);
    }

    #[test]
    fn no_shock_reproduces_baseline() {
        let p = params(0.9, 0.8, 0.5);
        let lp = solve_levels_path(&fundamentals(6), &p, &DVector::from_vec(vec![0.5, 0.3, 0.2]), 1.5, None, &tight()).unwrap();
        let hp = dynamic_hat_counterfactual(&lp.panel, &FundamentalHats::ones(3, 6), &p, 1.5, &tight()).unwrap();
        for t in 0..=6 {
            assert!(hp.w_hat[t].map(|v| v - 1.0).amax() < 1e-12);
            assert!((&hp.l_prime[t] - &lp.panel.l[t]).amax() < 1e-12);
        }
        for ev in welfare_ev(&hp) {
            assert!(ev.amax() < 1e-12);
        }
    }

    #[test]
    fn euler_identity_holds_on_model_paths() {
        let p = params(0.9, 0.8, 0.5);
        let f = fundamentals(6);
        let lp = solve_levels_path(&f, &p, &DVector::from_vec(vec![0.5, 0.3, 0.2]), 1.5, None, &tight()).unwrap();
        for t in 0..6 {
            for o in 0..3 {
                for d in 0..3 {
                    let expect = (p.beta() - 1.0) * p.kappa_ratio() * p.tau()[(o, d)] + (f.a[t][d] / f.a[t][o]).ln();
                    assert!((euler_lhs(&lp.panel, &p, t, o, d) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn hat_validation() {
        let bad = FundamentalHats::from_level_ratios(
            vec![DVector::from_element(2, 1.1); 3],
            vec![DVector::from_element(2, 1.0); 3],
            vec![1.0; 3],
        );
        assert!(bad.is_err());
        assert!(DynamicParams::new(1.0, 1.0, DMatrix::zeros(1, 1), SkillSpace::independent(1)).is_err());
    }
}
