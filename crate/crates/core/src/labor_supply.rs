//! Employment shares, their within/between-skill decomposition and the labor
//! supply elasticity matrix `Θ = ∂ ln π / ∂ ln w`.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use crate::corr_core::{cnces_cross_row, evaluate_nests, ln_cnces_grad, FrechetParams, SkillSpace};
use crate::error::{DidesError, Result};
use crate::numeric::{ensure_finite, ensure_len, ensure_positive};

/// One static equilibrium snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Economy {
    skills: SkillSpace,
    frechet: FrechetParams,
    w: DVector<f64>,
    sigma: f64,
    alpha: Option<DVector<f64>>,
    aggregate_productivity: f64,
    total_labor: f64,
}

impl Economy {
    pub fn new(skills: SkillSpace, frechet: FrechetParams, w: DVector<f64>, sigma: f64) -> Result<Self> {
        let o = skills.n_occupations();
        ensure_len("A", frechet.a(), o)?;
        ensure_len("w", &w, o)?;
        ensure_positive("w", &w)?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(DidesError::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Economy { skills, frechet, w, sigma, alpha: None, aggregate_productivity: 1.0, total_labor: 1.0 })
    }

    pub fn with_alpha(mut self, alpha: DVector<f64>) -> Result<Self> {
        ensure_len("alpha", &alpha, self.n_occupations())?;
        ensure_positive("alpha", &alpha)?;
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn with_aggregate_productivity(mut self, value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(DidesError::Parameter(format!("aggregate productivity must be positive, got {value}")));
        }
        self.aggregate_productivity = value;
        Ok(self)
    }

    pub fn with_total_labor(mut self, value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(DidesError::Parameter(format!("total labor must be positive, got {value}")));
        }
        self.total_labor = value;
        Ok(self)
    }

    /// Copy with a different wage vector.
    pub fn with_wages(&self, w: DVector<f64>) -> Result<Self> {
        ensure_len("w", &w, self.n_occupations())?;
        ensure_positive("w", &w)?;
        let mut out = self.clone();
        out.w = w;
        Ok(out)
    }

    pub fn n_occupations(&self) -> usize {
        self.skills.n_occupations()
    }

    pub fn skills(&self) -> &SkillSpace {
        &self.skills
    }

    pub fn frechet(&self) -> &FrechetParams {
        &self.frechet
    }

    pub fn theta(&self) -> f64 {
        self.frechet.theta()
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alpha(&self) -> Option<&DVector<f64>> {
        self.alpha.as_ref()
    }

    pub fn aggregate_productivity(&self) -> f64 {
        self.aggregate_productivity
    }

    pub fn total_labor(&self) -> f64 {
        self.total_labor
    }

    /// `ln x_o = ln A_o + θ ln w_o`.
    pub fn ln_x(&self) -> DVector<f64> {
        let theta = self.theta();
        self.frechet.a().zip_map(&self.w, |a, w| a.ln() + theta * w.ln())
    }

    /// Aggregate wage index `W = F(A_1 w_1^θ, …)^{1/θ}`.
    pub fn wage_index(&self) -> f64 {
        (evaluate_nests(&self.ln_x(), &self.skills).ln_f / self.theta()).exp()
    }
}

/// Employment shares with their skill decomposition `π_o = Σ_s π_o^{s,W} π^s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareDecomposition {
    pub pi: DVector<f64>,
    /// `π_o^{s,W}`: occupation `o`'s share within skill `s` (occupations × skills).
    pub within: DMatrix<f64>,
    /// `π^s`: skill `s`'s share of the workforce.
    pub between: DVector<f64>,
}

/// Dense labor-supply elasticity matrix together with the shares it was built at.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityMatrix {
    pub theta_matrix: DMatrix<f64>,
    pub shares: DVector<f64>,
}

impl ElasticityMatrix {
    pub fn new(theta_matrix: DMatrix<f64>, shares: DVector<f64>) -> Result<Self> {
        let n = shares.len();
        if theta_matrix.shape() != (n, n) {
            return Err(DidesError::Dimension(format!(
                "elasticity matrix is {:?} but there are {n} shares",
                theta_matrix.shape()
            )));
        }
        Ok(ElasticityMatrix { theta_matrix, shares })
    }

    pub fn dim(&self) -> usize {
        self.shares.len()
    }

    /// Largest absolute row sum of `Θ` (zero in theory).
    pub fn max_row_sum(&self) -> f64 {
        self.theta_matrix.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max)
    }

    /// Checks zero row sums (to `tol`), a positive diagonal and nonpositive
    /// off-diagonal entries (to `tol`).
    pub fn check_structure(&self, tol: f64) -> Result<()> {
        let n = self.dim();
        for i in 0..n {
            let rs = self.theta_matrix.row(i).sum();
            if rs.abs() > tol {
                return Err(DidesError::Structure(format!("row {i} of the elasticity matrix sums to {rs:.3e}")));
            }
            if !(self.theta_matrix[(i, i)] > 0.0) {
                return Err(DidesError::Structure(format!("diagonal entry {i} is not positive")));
            }
            for j in 0..n {
                if i != j && self.theta_matrix[(i, j)] > tol {
                    return Err(DidesError::Structure(format!("off-diagonal entry ({i},{j}) is positive")));
                }
            }
        }
        Ok(())
    }
}

fn check_ln_x(ln_x: &DVector<f64>, skills: &SkillSpace) -> Result<()> {
    ensure_len("ln x", ln_x, skills.n_occupations())?;
    ensure_finite("ln x", ln_x)
}

fn first_zero(pi: &DVector<f64>) -> Option<usize> {
    pi.iter().position(|p| !(*p > 1e-300))
}

/// Shares and decomposition at `x = exp(ln_x)`.
pub fn shares_from_ln_x(ln_x: &DVector<f64>, skills: &SkillSpace) -> Result<ShareDecomposition> {
    check_ln_x(ln_x, skills)?;
    let nests = evaluate_nests(ln_x, skills);
    let pi = nests.shares();
    if let Some(o) = first_zero(&pi) {
        return Err(DidesError::DegenerateShare { occupation: o });
    }
    Ok(ShareDecomposition { pi, within: nests.within, between: nests.between })
}

/// Employment shares `π_o = x_o F_o(x)/F(x)` with `x_o = A_o w_o^θ`, via the
/// within/between decomposition.
pub fn employment_shares(econ: &Economy) -> Result<ShareDecomposition> {
    shares_from_ln_x(&econ.ln_x(), econ.skills())
}

/// Same shares computed directly as `x_o F_o / F` from the gradient.
pub fn employment_shares_direct(econ: &Economy) -> Result<DVector<f64>> {
    let ln_x = econ.ln_x();
    let ln_f = evaluate_nests(&ln_x, econ.skills()).ln_f;
    let ln_grad = ln_cnces_grad(&ln_x, econ.skills());
    Ok(DVector::from_fn(ln_x.len(), |o, _| (ln_x[o] + ln_grad[o] - ln_f).exp()))
}

/// Correlated substitution term `C_{oo'} = x_{o'} F_{oo'} / F_o` in share form:
///
/// `C_{oo'} = Σ_s ρ_s/(1-ρ_s) · π^s π_o^{s,W} (1{o=o'} - π_{o'}^{s,W}) / π_o`.
pub fn correlated_component(ln_x: &DVector<f64>, skills: &SkillSpace) -> Result<(DMatrix<f64>, ShareDecomposition)> {
    let dec = shares_from_ln_x(ln_x, skills)?;
    let n = dec.pi.len();
    let mut c = DMatrix::zeros(n, n);
    for s in 0..skills.n_skills() {
        let rho = skills.rho()[s];
        if rho == 0.0 {
            continue;
        }
        let k = rho / (1.0 - rho) * dec.between[s];
        if k == 0.0 {
            continue;
        }
        for o in 0..n {
            let wo = dec.within[(o, s)];
            if wo == 0.0 {
                continue;
            }
            let scale = k * wo / dec.pi[o];
            for j in 0..n {
                c[(o, j)] -= scale * dec.within[(j, s)];
            }
            c[(o, o)] += scale;
        }
    }
    Ok((c, dec))
}

/// `Θ = θ (C + I - 1π')` at `x = exp(ln_x)`.
pub fn elasticity_from_ln_x(ln_x: &DVector<f64>, skills: &SkillSpace, theta: f64) -> Result<ElasticityMatrix> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(DidesError::Parameter(format!("theta must be positive, got {theta}")));
    }
    let (c, dec) = correlated_component(ln_x, skills)?;
    let n = dec.pi.len();
    let m = DMatrix::from_fn(n, n, |o, j| theta * (c[(o, j)] + if o == j { 1.0 } else { 0.0 } - dec.pi[j]));
    ElasticityMatrix::new(m, dec.pi)
}

/// Labor-supply elasticity matrix of an economy.
pub fn elasticity_matrix(econ: &Economy) -> Result<ElasticityMatrix> {
    elasticity_from_ln_x(&econ.ln_x(), econ.skills(), econ.theta())
}

/// `Θ` assembled from the analytic gradient and Hessian rows of `F`,
/// `θ[x_{o'} F_{oo'}/F_o - π_{o'} + 1{o=o'}]`; an independent evaluation of
/// [`elasticity_matrix`].
pub fn elasticity_matrix_from_derivatives(econ: &Economy) -> Result<ElasticityMatrix> {
    let ln_x = econ.ln_x();
    let x = ln_x.map(f64::exp);
    ensure_positive("x", &x)?;
    let pi = employment_shares_direct(econ)?;
    if let Some(o) = first_zero(&pi) {
        return Err(DidesError::DegenerateShare { occupation: o });
    }
    let grad = ln_cnces_grad(&ln_x, econ.skills()).map(f64::exp);
    let n = x.len();
    let theta = econ.theta();
    let mut m = DMatrix::zeros(n, n);
    for o in 0..n {
        let row = cnces_cross_row(&x, o, econ.skills())?;
        for j in 0..n {
            let delta = if o == j { 1.0 } else { 0.0 };
            m[(o, j)] = theta * (x[j] * row[j] / grad[o] - pi[j] + delta);
        }
    }
    ElasticityMatrix::new(m, pi)
}

fn check_delta(delta: f64, theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(DidesError::Parameter(format!("delta must lie in [0, 1], got {delta}")));
    }
    if delta > 0.0 && theta <= 1.0 {
        return Err(DidesError::Parameter(format!(
            "efficiency units need theta > 1 for a finite conditional mean, got {theta}"
        )));
    }
    Ok(())
}

/// Selected productivity `E[ε_o | o chosen] = Γ(1-1/θ) W / w_o`.
pub fn conditional_mean_productivity(econ: &Economy) -> Result<DVector<f64>> {
    let theta = econ.theta();
    if theta <= 1.0 {
        return Err(DidesError::Parameter(format!(
            "conditional productivity mean does not exist for theta = {theta} <= 1"
        )));
    }
    let scale = gamma(1.0 - 1.0 / theta) * econ.wage_index();
    Ok(econ.w().map(|w| scale / w))
}

/// Efficiency-unit shares `s_o = δΓ(1-1/θ)(W/w_o) / [δΓ(1-1/θ)(W/w_o) + (1-δ)]`.
pub fn efficiency_shares(econ: &Economy, delta: f64) -> Result<DVector<f64>> {
    check_delta(delta, econ.theta())?;
    if delta == 0.0 {
        return Ok(DVector::zeros(econ.n_occupations()));
    }
    let mean = conditional_mean_productivity(econ)?;
    Ok(mean.map(|m| delta * m / (delta * m + (1.0 - delta))))
}

/// Effective labor per unit of workforce, `π_o [(1-δ) + δ E[ε_o | o]]`.
pub fn effective_labor_supply(econ: &Economy, delta: f64) -> Result<DVector<f64>> {
    check_delta(delta, econ.theta())?;
    let pi = employment_shares(econ)?.pi;
    if delta == 0.0 {
        return Ok(pi);
    }
    let mean = conditional_mean_productivity(econ)?;
    Ok(pi.zip_map(&mean, |p, m| p * ((1.0 - delta) + delta * m)))
}

/// Elasticity of effective labor: the correlated term is unchanged and the
/// independent coefficient becomes `θ - s_o`, i.e.
/// `Θ^eff_{oo'} = Θ_{oo'} + s_o (π_{o'} - 1{o=o'})`.
pub fn effective_elasticity_matrix(econ: &Economy, delta: f64) -> Result<ElasticityMatrix> {
    let s = efficiency_shares(econ, delta)?;
    let base = elasticity_matrix(econ)?;
    if delta == 0.0 {
        return Ok(base);
    }
    let n = base.dim();
    let pi = &base.shares;
    let m = DMatrix::from_fn(n, n, |o, j| {
        let delta_oj = if o == j { 1.0 } else { 0.0 };
        base.theta_matrix[(o, j)] + s[o] * (pi[j] - delta_oj)
    });
    ElasticityMatrix::new(m, base.shares.clone())
}

/// Shares of each group (row of `group_a`), sharing `F`, `θ` and wages.
pub fn group_shares(econ: &Economy, group_a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = econ.n_occupations();
    if group_a.ncols() != n {
        return Err(DidesError::Dimension(format!("group productivities have {} columns, expected {n}", group_a.ncols())));
    }
    let mut out = DMatrix::zeros(group_a.nrows(), n);
    for g in 0..group_a.nrows() {
        let a = group_a.row(g).transpose();
        let econ_g = Economy::new(
            econ.skills().clone(),
            FrechetParams::new(econ.theta(), a)?,
            econ.w().clone(),
            econ.sigma(),
        )?;
        out.set_row(g, &employment_shares(&econ_g)?.pi.transpose());
    }
    Ok(out)
}
