//! Estimators: PPML for the structural supply parameters `(θ, ρ)` from group
//! share changes, its CES restriction, and the Euler-equation regression for
//! the short-run elasticity `θ/κ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corr_core::SkillSpace;
use crate::dynamics::TransitionPanel;
use crate::error::{DidesError, Result};
use crate::hat_algebra::{counterfactual_shares, GroupPanel};
use crate::numeric::{bfgs_minimize, ensure_len, ensure_positive, BfgsOptions};

/// PPML loss `2[x ln(x/x̂) - (x - x̂)]` summed over all cells.
pub fn ppml_deviance(observed: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    if observed.shape() != predicted.shape() {
        return Err(DidesError::Dimension(format!(
            "observed {:?} vs predicted {:?}",
            observed.shape(),
            predicted.shape()
        )));
    }
    let mut total = 0.0;
    for (x, m) in observed.iter().zip(predicted.iter()) {
        if !(*m > 0.0) || !m.is_finite() {
            return Err(DidesError::Domain(format!("predicted value {m} must be positive")));
        }
        if !(*x >= 0.0) || !x.is_finite() {
            return Err(DidesError::Domain(format!("observed value {x} must be nonnegative")));
        }
        let term = if *x == 0.0 { *m } else { x * (x / m).ln() - (x - m) };
        // Nonnegative in exact arithmetic; clamp rounding.
        total += 2.0 * term.max(0.0);
    }
    Ok(total)
}

/// Data for PPML estimation: group shares in a base and an end period and
/// the common wage change between them.
#[derive(Debug, Clone, PartialEq)]
pub struct PpmlProblem {
    panel: GroupPanel,
    w_hat: DVector<f64>,
    omega: DMatrix<f64>,
    base_period: usize,
    end_period: usize,
    theta_max: f64,
    rho_max: f64,
}

impl PpmlProblem {
    /// Uses the first two periods of `panel`.
    pub fn new(panel: GroupPanel, w_hat: DVector<f64>, omega: DMatrix<f64>) -> Result<Self> {
        if panel.periods().len() < 2 {
            return Err(DidesError::Dimension("PPML needs at least two periods".into()));
        }
        let n = panel.n_occupations();
        ensure_len("w_hat", &w_hat, n)?;
        ensure_positive("w_hat", &w_hat)?;
        // Validates the loadings.
        SkillSpace::new(omega.clone(), DVector::zeros(omega.ncols()))?;
        if omega.nrows() != n {
            return Err(DidesError::Dimension(format!("omega has {} rows, expected {n}", omega.nrows())));
        }
        Ok(PpmlProblem { panel, w_hat, omega, base_period: 0, end_period: 1, theta_max: 50.0, rho_max: 0.999 })
    }

    pub fn with_periods(mut self, base: usize, end: usize) -> Result<Self> {
        let p = self.panel.periods().len();
        if base >= p || end >= p || base == end {
            return Err(DidesError::Dimension(format!("periods ({base}, {end}) invalid for a {p}-period panel")));
        }
        self.base_period = base;
        self.end_period = end;
        Ok(self)
    }

    pub fn with_bounds(mut self, theta_max: f64, rho_max: f64) -> Result<Self> {
        if !(theta_max > 0.0) || !(rho_max > 0.0 && rho_max <= 0.999) {
            return Err(DidesError::Parameter(format!("invalid bounds theta_max={theta_max}, rho_max={rho_max}")));
        }
        self.theta_max = theta_max;
        self.rho_max = rho_max;
        Ok(self)
    }

    pub fn panel(&self) -> &GroupPanel {
        &self.panel
    }

    pub fn w_hat(&self) -> &DVector<f64> {
        &self.w_hat
    }

    pub fn n_skills(&self) -> usize {
        self.omega.ncols()
    }

    pub fn observed(&self) -> &DMatrix<f64> {
        self.panel.shares(self.end_period)
    }

    pub fn skills(&self, rho: &DVector<f64>) -> Result<SkillSpace> {
        SkillSpace::new(self.omega.clone(), rho.clone())
    }

    /// Predicted end-period shares (`G × O`) at `(θ, ρ)`.
    pub fn predicted(&self, theta: f64, rho: &DVector<f64>) -> Result<DMatrix<f64>> {
        let skills = self.skills(rho)?;
        let g_n = self.panel.groups().len();
        let mut out = DMatrix::zeros(g_n, self.panel.n_occupations());
        for g in 0..g_n {
            let pi = self.panel.group_shares(self.base_period, g);
            let (pp, _) = counterfactual_shares(&pi, &self.w_hat, &skills, theta)?;
            out.set_row(g, &pp.transpose());
        }
        Ok(out)
    }

    /// Deviance at `(θ, ρ)`.
    pub fn deviance(&self, theta: f64, rho: &DVector<f64>) -> Result<f64> {
        ppml_deviance(self.observed(), &self.predicted(theta, rho)?)
    }
}

/// Settings for [`estimate_dides`].
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub n_starts: usize,
    pub seed: u64,
    pub theta_init: f64,
    pub rho_init: Option<DVector<f64>>,
    /// Per skill: `Some(value)` pins `ρ_s`, `None` estimates it.
    pub fixed_rho: Option<Vec<Option<f64>>>,
    pub bfgs: BfgsOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            n_starts: 5,
            seed: 0,
            theta_init: 1.0,
            rho_init: None,
            fixed_rho: None,
            bfgs: BfgsOptions { gtol: 1e-11, max_iter: 400, max_step: 2.0 },
        }
    }
}

/// One local optimum reached from some start.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOptimum {
    pub theta: f64,
    pub rho: DVector<f64>,
    pub deviance: f64,
    pub converged: bool,
    /// How many starts ended here.
    pub hits: usize,
}

/// PPML estimates with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PpmlEstimate {
    pub theta: f64,
    pub rho: DVector<f64>,
    pub se_theta: f64,
    /// `NaN` for pinned or boundary components.
    pub se_rho: DVector<f64>,
    pub deviance: f64,
    /// Pearson dispersion used to scale the standard errors.
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Deviance after each accepted step of the winning start.
    pub trace: Vec<f64>,
    /// Per skill: estimate within `1e-4` of a bound.
    pub rho_at_bound: Vec<bool>,
    pub theta_at_bound: bool,
    pub local_optima: Vec<LocalOptimum>,
}

struct Layout {
    n_skills: usize,
    free: Vec<usize>,
    fixed: Vec<Option<f64>>,
    rho_max: f64,
    theta_max: f64,
}

impl Layout {
    fn rho(&self, p: &DVector<f64>) -> DVector<f64> {
        let mut rho = DVector::zeros(self.n_skills);
        for s in 0..self.n_skills {
            rho[s] = self.fixed[s].unwrap_or(0.0);
        }
        for (k, s) in self.free.iter().enumerate() {
            rho[*s] = self.rho_max / (1.0 + (-p[k + 1]).exp());
        }
        rho
    }

    fn pack(&self, theta: f64, rho: &DVector<f64>) -> DVector<f64> {
        let mut p = DVector::zeros(1 + self.free.len());
        p[0] = theta.ln();
        for (k, s) in self.free.iter().enumerate() {
            let u = (rho[*s] / self.rho_max).clamp(1e-9, 1.0 - 1e-9);
            p[k + 1] = (u / (1.0 - u)).ln();
        }
        p
    }
}

fn objective(problem: &PpmlProblem, layout: &Layout, p: &DVector<f64>) -> f64 {
    let theta = p[0].exp();
    if !(theta <= layout.theta_max) || !theta.is_finite() {
        return f64::INFINITY;
    }
    problem.deviance(theta, &layout.rho(p)).unwrap_or(f64::INFINITY)
}

/// Minimizes the PPML deviance over `θ` and the free `ρ_s`.
///
/// Each start runs BFGS on `(ln θ, logit(ρ_s/ρ_max))`. The first start is the
/// user's initial value; the rest are drawn deterministically from `seed`.
/// Standard errors come from the finite-difference Hessian `H` of the deviance
/// in natural parameters, `cov = 2φ H^{-1}`, with `φ` the Pearson dispersion.
pub fn estimate_dides(problem: &PpmlProblem, options: &EstimateOptions) -> Result<PpmlEstimate> {
    let n_skills = problem.n_skills();
    let fixed = match &options.fixed_rho {
        Some(f) if f.len() == n_skills => f.clone(),
        Some(f) => {
            return Err(DidesError::Dimension(format!("fixed_rho has {} entries, expected {n_skills}", f.len())))
        }
        None => vec![None; n_skills],
    };
    for v in fixed.iter().flatten() {
        if !(0.0..=problem.rho_max).contains(v) {
            return Err(DidesError::Parameter(format!("pinned rho {v} outside [0, {}]", problem.rho_max)));
        }
    }
    if options.n_starts == 0 {
        return Err(DidesError::Parameter("at least one start is required".into()));
    }
    if !(options.theta_init > 0.0 && options.theta_init <= problem.theta_max) {
        return Err(DidesError::Parameter(format!("theta_init {} outside (0, theta_max]", options.theta_init)));
    }
    let free: Vec<usize> = (0..n_skills).filter(|s| fixed[*s].is_none()).collect();
    let layout = Layout { n_skills, free, fixed, rho_max: problem.rho_max, theta_max: problem.theta_max };
    let rho_init = match &options.rho_init {
        Some(r) => {
            ensure_len("rho_init", r, n_skills)?;
            r.clone()
        }
        None => DVector::from_element(n_skills, 0.5 * problem.rho_max),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut starts = vec![layout.pack(options.theta_init, &rho_init)];
    while starts.len() < options.n_starts {
        let theta = options.theta_init * (rng.random::<f64>() * 3.0 - 1.5).exp();
        let theta = theta.min(problem.theta_max * 0.9);
        let rho = DVector::from_fn(n_skills, |_, _| problem.rho_max * (0.05 + 0.9 * rng.random::<f64>()));
        starts.push(layout.pack(theta, &rho));
    }

    let mut runs = Vec::with_capacity(starts.len());
    for start in starts {
        let rep = bfgs_minimize(|p| objective(problem, &layout, p), start, &options.bfgs);
        runs.push(rep);
    }
    let finite: Vec<_> = runs.iter().filter(|r| r.value.is_finite()).collect();
    if finite.is_empty() {
        return Err(DidesError::Estimator("every start failed to evaluate the deviance".into()));
    }
    let best = finite.iter().min_by(|a, b| a.value.total_cmp(&b.value)).copied().unwrap();

    let mut optima: Vec<LocalOptimum> = Vec::new();
    for r in &finite {
        let theta = r.x[0].exp();
        let rho = layout.rho(&r.x);
        if let Some(existing) = optima.iter_mut().find(|o| {
            (o.theta - theta).abs() < 1e-3 * theta.max(1.0) && (&o.rho - &rho).amax() < 1e-3
        }) {
            existing.hits += 1;
            if r.value < existing.deviance {
                existing.deviance = r.value;
            }
        } else {
            optima.push(LocalOptimum { theta, rho, deviance: r.value, converged: r.converged, hits: 1 });
        }
    }
    optima.sort_by(|a, b| a.deviance.total_cmp(&b.deviance));

    let theta = best.x[0].exp();
    let rho = layout.rho(&best.x);
    let rho_at_bound: Vec<bool> = (0..n_skills)
        .map(|s| layout.fixed[s].is_none() && (rho[s] < 1e-4 || rho[s] > problem.rho_max - 1e-4))
        .collect();
    let theta_at_bound = theta > problem.theta_max - 1e-4;
    let (dispersion, se_theta, se_rho) = standard_errors(problem, &layout, theta, &rho, &rho_at_bound, theta_at_bound)?;
    Ok(PpmlEstimate {
        theta,
        rho,
        se_theta,
        se_rho,
        deviance: best.value,
        dispersion,
        converged: best.converged,
        iterations: best.iterations,
        trace: best.trace.clone(),
        rho_at_bound,
        theta_at_bound,
        local_optima: optima,
    })
}

/// Pearson dispersion `Σ (x - m)²/m / (n - k)`.
pub fn pearson_dispersion(observed: &DMatrix<f64>, predicted: &DMatrix<f64>, n_params: usize) -> f64 {
    let n = observed.len();
    let chi2: f64 = observed.iter().zip(predicted.iter()).map(|(x, m)| (x - m).powi(2) / m).sum();
    chi2 / (n.saturating_sub(n_params).max(1)) as f64
}

fn standard_errors(
    problem: &PpmlProblem,
    layout: &Layout,
    theta: f64,
    rho: &DVector<f64>,
    rho_at_bound: &[bool],
    theta_at_bound: bool,
) -> Result<(f64, f64, DVector<f64>)> {
    // Natural-parameter vector (θ, free interior ρ).
    let interior: Vec<usize> = layout.free.iter().copied().filter(|s| !rho_at_bound[*s]).collect();
    let k = 1 + layout.free.len();
    let predicted = problem.predicted(theta, rho)?;
    let dispersion = pearson_dispersion(problem.observed(), &predicted, k);
    let mut se_rho = DVector::from_element(layout.n_skills, f64::NAN);
    if theta_at_bound {
        return Ok((dispersion, f64::NAN, se_rho));
    }
    let m = 1 + interior.len();
    let x0 = {
        let mut v = DVector::zeros(m);
        v[0] = theta;
        for (i, s) in interior.iter().enumerate() {
            v[i + 1] = rho[*s];
        }
        v
    };
    let eval = |x: &DVector<f64>| -> Result<f64> {
        let mut r = rho.clone();
        for (i, s) in interior.iter().enumerate() {
            r[*s] = x[i + 1];
        }
        problem.deviance(x[0], &r)
    };
    let h: Vec<f64> = (0..m).map(|i| 1e-4 * x0[i].abs().max(1e-2)).collect();
    let f0 = eval(&x0)?;
    let mut hess = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let val = if i == j {
                let mut xp = x0.clone();
                xp[i] += h[i];
                let mut xm = x0.clone();
                xm[i] -= h[i];
                (eval(&xp)? - 2.0 * f0 + eval(&xm)?) / (h[i] * h[i])
            } else {
                let mut acc = 0.0;
                for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    let mut x = x0.clone();
                    x[i] += si * h[i];
                    x[j] += sj * h[j];
                    acc += sign * eval(&x)?;
                }
                acc / (4.0 * h[i] * h[j])
            };
            hess[(i, j)] = val;
            hess[(j, i)] = val;
        }
    }
    let Some(inv) = hess.clone().try_inverse() else {
        log::warn!("deviance Hessian is singular; standard errors unavailable");
        return Ok((dispersion, f64::NAN, se_rho));
    };
    let cov = inv * (2.0 * dispersion);
    let se = |i: usize| if cov[(i, i)] > 0.0 { cov[(i, i)].sqrt() } else { f64::NAN };
    for (i, s) in interior.iter().enumerate() {
        se_rho[*s] = se(i + 1);
    }
    Ok((dispersion, se(0), se_rho))
}

/// CES restriction (`ρ = 0`): returns `(θ̂, se)`.
pub fn estimate_ces(problem: &PpmlProblem, options: &EstimateOptions) -> Result<(f64, f64)> {
    let mut opts = options.clone();
    opts.fixed_rho = Some(vec![Some(0.0); problem.n_skills()]);
    opts.rho_init = None;
    let est = estimate_dides(problem, &opts)?;
    Ok((est.theta, est.se_theta))
}

/// Closed-form CES benchmark: slope of `ln(π^g_{o,1}/π^g_{o,0})` on `ln ŵ_o`
/// with group intercepts.
pub fn ces_log_share_regression(problem: &PpmlProblem) -> Result<f64> {
    let lw = problem.w_hat.map(f64::ln);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for g in 0..problem.panel.groups().len() {
        let p0 = problem.panel.group_shares(problem.base_period, g);
        let p1 = problem.panel.group_shares(problem.end_period, g);
        if p0.iter().chain(p1.iter()).any(|v| !(*v > 0.0)) {
            return Err(DidesError::Domain("log-share regression needs positive shares".into()));
        }
        let y = p1.zip_map(&p0, |a, b| (a / b).ln());
        let ym = y.mean();
        let xm = lw.mean();
        for o in 0..y.len() {
            sxy += (lw[o] - xm) * (y[o] - ym);
            sxx += (lw[o] - xm).powi(2);
        }
    }
    if sxx == 0.0 {
        return Err(DidesError::Estimator("wage changes are uniform; θ is not identified".into()));
    }
    Ok(sxy / sxx)
}

/// Sample analog of `E[(v - 1) z] = 0` for prediction errors `v = x/m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub mean: f64,
    pub std_error: f64,
}

pub fn ppml_moment(problem: &PpmlProblem, theta: f64, rho: &DVector<f64>, z: &DVector<f64>) -> Result<MomentCheck> {
    ensure_len("z", z, problem.panel.n_occupations())?;
    let pred = problem.predicted(theta, rho)?;
    let obs = problem.observed();
    let zm = z.mean();
    let vals: Vec<f64> = (0..obs.nrows())
        .flat_map(|g| (0..obs.ncols()).map(move |o| (g, o)))
        .map(|(g, o)| (obs[(g, o)] / pred[(g, o)] - 1.0) * (z[o] - zm))
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MomentCheck { mean, std_error: (var / n).sqrt() })
}

/// Adjusted transitions and wages for the Euler-equation regression.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerPanel {
    pub mu_tilde: Vec<DMatrix<f64>>,
    pub w: Vec<DVector<f64>>,
    pub beta: f64,
}

impl EulerPanel {
    pub fn new(mu_tilde: Vec<DMatrix<f64>>, w: Vec<DVector<f64>>, beta: f64) -> Result<Self> {
        if mu_tilde.len() != w.len() {
            return Err(DidesError::Dimension("transition and wage paths differ in length".into()));
        }
        if mu_tilde.len() < 3 {
            return Err(DidesError::Estimator(format!(
                "the Euler regression needs at least 3 periods (one lag and one lead), got {}",
                mu_tilde.len()
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(DidesError::Parameter(format!("beta must lie in (0, 1), got {beta}")));
        }
        let n = w[0].len();
        for t in 0..w.len() {
            ensure_len("w", &w[t], n)?;
            ensure_positive("w", &w[t])?;
            if mu_tilde[t].shape() != (n, n) || mu_tilde[t].iter().any(|v| !(*v > 0.0)) {
                return Err(DidesError::Domain(format!("adjusted transitions at t={t} must be positive and {n}×{n}")));
            }
        }
        Ok(EulerPanel { mu_tilde, w, beta })
    }

    pub fn from_transitions(panel: &TransitionPanel, beta: f64) -> Result<Self> {
        EulerPanel::new(panel.mu_tilde.clone(), panel.w.clone(), beta)
    }
}

/// Stacked regression data, one row per `(t, o, o')` with `o ≠ o'`.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerObservations {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    /// Lagged relative wage and lagged relative adjusted transition.
    pub z: DMatrix<f64>,
    pub origin: Vec<usize>,
    pub destination: Vec<usize>,
    pub period: Vec<usize>,
    pub n_occupations: usize,
}

/// Builds `y = ln(μ̃_{oo',t}/μ̃_{oo,t}) - β ln(μ̃_{oo',t+1}/μ̃_{o'o',t+1})`,
/// `x = ln(w_{o',t}/w_{o,t})` and the lag-one instruments for `t = 1..T-1`.
pub fn euler_observations(panel: &EulerPanel) -> EulerObservations {
    let n = panel.w[0].len();
    let last = panel.w.len() - 1;
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    let (mut origin, mut destination, mut period) = (Vec::new(), Vec::new(), Vec::new());
    let m = &panel.mu_tilde;
    for t in 1..last {
        for o in 0..n {
            for d in 0..n {
                if o == d {
                    continue;
                }
                y.push((m[t][(o, d)] / m[t][(o, o)]).ln() - panel.beta * (m[t + 1][(o, d)] / m[t + 1][(d, d)]).ln());
                x.push((panel.w[t][d] / panel.w[t][o]).ln());
                z.push((panel.w[t - 1][d] / panel.w[t - 1][o]).ln());
                z.push((m[t - 1][(o, d)] / m[t - 1][(o, o)]).ln());
                origin.push(o);
                destination.push(d);
                period.push(t);
            }
        }
    }
    let rows = y.len();
    EulerObservations {
        y: DVector::from_vec(y),
        x: DVector::from_vec(x),
        z: DMatrix::from_row_slice(rows, 2, &z),
        origin,
        destination,
        period,
        n_occupations: n,
    }
}

/// Fixed effects and estimator choice for [`euler_regress`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerOptions {
    pub use_iv: bool,
    /// Origin-destination pair effects; these absorb `(β-1)(θ/κ)τ_{oo'}`.
    pub pair_fe: bool,
    pub fe_origin: bool,
    pub fe_destination: bool,
}

impl Default for EulerOptions {
    fn default() -> Self {
        EulerOptions { use_iv: true, pair_fe: true, fe_origin: false, fe_destination: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EulerEstimate {
    /// `θ/κ`.
    pub ratio: f64,
    /// Heteroskedasticity-robust standard error with a degrees-of-freedom correction.
    pub se: f64,
    pub n_obs: usize,
    pub n_absorbed: usize,
    /// First-stage F statistic of the excluded instruments (IV only).
    pub first_stage_f: Option<f64>,
    pub first_stage_partial_r2: Option<f64>,
}

impl EulerEstimate {
    pub fn ci95(&self) -> (f64, f64) {
        (self.ratio - 1.96 * self.se, self.ratio + 1.96 * self.se)
    }
}

/// Euler-equation regression on a panel.
pub fn euler_regress(panel: &EulerPanel, options: &EulerOptions) -> Result<EulerEstimate> {
    euler_regress_observations(&euler_observations(panel), options)
}

fn demean_by(v: &mut DVector<f64>, keys: &[usize], n_keys: usize) {
    let mut sum = vec![0.0; n_keys];
    let mut cnt = vec![0usize; n_keys];
    for (i, k) in keys.iter().enumerate() {
        sum[*k] += v[i];
        cnt[*k] += 1;
    }
    for (i, k) in keys.iter().enumerate() {
        v[i] -= sum[*k] / cnt[*k] as f64;
    }
}

/// Within transform; returns the number of absorbed parameters.
fn within(columns: &mut [&mut DVector<f64>], obs: &EulerObservations, options: &EulerOptions) -> usize {
    let n = obs.n_occupations;
    let used = |keys: &[usize], size: usize| {
        let mut seen = vec![false; size];
        keys.iter().for_each(|k| seen[*k] = true);
        seen.iter().filter(|s| **s).count()
    };
    if options.pair_fe {
        let keys: Vec<usize> = obs.origin.iter().zip(&obs.destination).map(|(o, d)| o * n + d).collect();
        for c in columns.iter_mut() {
            demean_by(c, &keys, n * n);
        }
        return used(&keys, n * n);
    }
    match (options.fe_origin, options.fe_destination) {
        (true, true) => {
            for c in columns.iter_mut() {
                for _ in 0..10_000 {
                    let before = (*c).clone();
                    demean_by(c, &obs.origin, n);
                    demean_by(c, &obs.destination, n);
                    if (&**c - before).amax() < 1e-14 {
                        break;
                    }
                }
            }
            used(&obs.origin, n) + used(&obs.destination, n) - 1
        }
        (true, false) => {
            for c in columns.iter_mut() {
                demean_by(c, &obs.origin, n);
            }
            used(&obs.origin, n)
        }
        (false, true) => {
            for c in columns.iter_mut() {
                demean_by(c, &obs.destination, n);
            }
            used(&obs.destination, n)
        }
        (false, false) => {
            for c in columns.iter_mut() {
                let m = c.mean();
                c.add_scalar_mut(-m);
            }
            1
        }
    }
}

/// OLS or 2SLS of `y` on `x` after absorbing the chosen fixed effects.
pub fn euler_regress_observations(obs: &EulerObservations, options: &EulerOptions) -> Result<EulerEstimate> {
    let n_obs = obs.y.len();
    if n_obs < 3 {
        return Err(DidesError::Estimator("too few observations".into()));
    }
    let mut y = obs.y.clone();
    let mut x = obs.x.clone();
    let mut z1 = obs.z.column(0).into_owned();
    let mut z2 = obs.z.column(1).into_owned();
    let absorbed = within(&mut [&mut y, &mut x, &mut z1, &mut z2], obs, options);
    let dof = n_obs as f64 - absorbed as f64 - 1.0;
    if dof < 1.0 {
        return Err(DidesError::Estimator("no degrees of freedom left after fixed effects".into()));
    }
    let (regressor, first_stage_f, partial_r2) = if options.use_iv {
        let z = DMatrix::from_columns(&[z1, z2]);
        let ztz = z.transpose() * &z;
        let sv = ztz.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-12 * smax) {
            return Err(DidesError::Estimator("instruments are collinear after fixed effects".into()));
        }
        let coef = ztz
            .lu()
            .solve(&(z.transpose() * &x))
            .ok_or_else(|| DidesError::Estimator("first stage is singular".into()))?;
        let fitted = &z * coef;
        let rss_u = (&x - &fitted).norm_squared();
        let rss_r = x.norm_squared();
        let q = 2.0;
        let f = ((rss_r - rss_u) / q) / (rss_u / (dof - 1.0)).max(f64::MIN_POSITIVE);
        let r2 = if rss_r > 0.0 { 1.0 - rss_u / rss_r } else { f64::NAN };
        (fitted, Some(f), Some(r2))
    } else {
        (x.clone(), None, None)
    };
    let sxx = regressor.dot(&x);
    if sxx.abs() < 1e-300 || regressor.norm_squared() < 1e-300 {
        return Err(DidesError::Estimator("no wage variation left after fixed effects".into()));
    }
    let ratio = regressor.dot(&y) / sxx;
    let resid = &y - &x * ratio;
    let meat: f64 = regressor.iter().zip(resid.iter()).map(|(r, e)| r * r * e * e).sum();
    let var = meat / (sxx * sxx) * n_obs as f64 / dof;
    Ok(EulerEstimate {
        ratio,
        se: var.sqrt(),
        n_obs,
        n_absorbed: absorbed,
        first_stage_f,
        first_stage_partial_r2: partial_r2,
    })
}
