//! Cross-nested CES correlation function
//!
//! ```text
//! F(x) = Σ_s [ Σ_o (ω_o^s x_o)^{1/(1-ρ_s)} ]^{1-ρ_s}
//! ```
//!
//! with its gradient and Hessian rows, the skill-intensity construction and an
//! exact sampler for the implied multivariate Fréchet distribution.
//!
//! Everything is evaluated in log space: with `ρ_s` close to one the inner
//! exponents `1/(1-ρ_s)` are large enough to overflow naive power sums.

mod sampler;

pub use sampler::{sample_choice_frequencies, sample_conditional_means, sample_productivity, ChoiceSample};

use nalgebra::{DMatrix, DVector};

use crate::error::{DidesError, Result};
use crate::numeric::{ensure_len, ensure_positive, log_sum_exp};

/// Skill intensities `ω` (occupations × skills) and within-skill correlations `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillSpace {
    omega: DMatrix<f64>,
    rho: DVector<f64>,
    ln_omega: DMatrix<f64>,
}

impl SkillSpace {
    /// Validates and wraps `ω` (rows on the simplex to 1e-12) and `ρ ∈ [0, 1)`.
    pub fn new(omega: DMatrix<f64>, rho: DVector<f64>) -> Result<Self> {
        let (o, s) = omega.shape();
        if o == 0 || s == 0 {
            return Err(DidesError::Dimension("skill space needs at least one occupation and one skill".into()));
        }
        ensure_len("rho", &rho, s)?;
        for (k, r) in rho.iter().enumerate() {
            if !(0.0..1.0).contains(r) {
                return Err(DidesError::Parameter(format!("rho[{k}] = {r} outside [0, 1)")));
            }
        }
        for i in 0..o {
            let mut sum = 0.0;
            for k in 0..s {
                let v = omega[(i, k)];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(DidesError::Domain(format!("omega[{i},{k}] = {v} must be a finite nonnegative number")));
                }
                sum += v;
            }
            if sum == 0.0 {
                return Err(DidesError::DegenerateOccupation { occupation: i });
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(DidesError::Domain(format!("omega row {i} sums to {sum}, expected 1")));
            }
        }
        let ln_omega = omega.map(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
        Ok(SkillSpace { omega, rho, ln_omega })
    }

    /// Builds from row slices; a convenience for tests and fixtures.
    pub fn from_rows(rows: &[&[f64]], rho: &[f64]) -> Result<Self> {
        let s = rho.len();
        let mut data = Vec::with_capacity(rows.len() * s);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != s {
                return Err(DidesError::Dimension(format!("omega row {i} has {} entries, expected {s}", r.len())));
            }
            data.extend_from_slice(r);
        }
        SkillSpace::new(DMatrix::from_row_slice(rows.len(), s, &data), DVector::from_column_slice(rho))
    }

    /// One skill with `ρ = 0`: the independent (CES / logit) case.
    pub fn independent(n_occupations: usize) -> Self {
        SkillSpace::new(DMatrix::from_element(n_occupations, 1, 1.0), DVector::from_element(1, 0.0))
            .expect("single-skill space is valid")
    }

    /// Same intensities, new correlations.
    pub fn with_rho(&self, rho: DVector<f64>) -> Result<Self> {
        SkillSpace::new(self.omega.clone(), rho)
    }

    pub fn n_occupations(&self) -> usize {
        self.omega.nrows()
    }

    pub fn n_skills(&self) -> usize {
        self.omega.ncols()
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn rho(&self) -> &DVector<f64> {
        &self.rho
    }

    pub(crate) fn ln_omega(&self, o: usize, s: usize) -> f64 {
        self.ln_omega[(o, s)]
    }

    /// `1/(1-ρ_s)`.
    pub(crate) fn power(&self, s: usize) -> f64 {
        1.0 / (1.0 - self.rho[s])
    }
}

/// Dispersion `θ` and occupation productivities `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetParams {
    theta: f64,
    a: DVector<f64>,
}

impl FrechetParams {
    pub fn new(theta: f64, a: DVector<f64>) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(DidesError::Parameter(format!("theta must be positive, got {theta}")));
        }
        ensure_positive("A", &a)?;
        Ok(FrechetParams { theta, a })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    /// Skill-specific productivities `A_o^s = (ω_o^s A_o)^{1/θ}`, the unique split
    /// with `A_o = Σ_s (A_o^s)^θ` and `ω_o^s = (A_o^s)^θ / A_o`.
    pub fn skill_productivities(&self, skills: &SkillSpace) -> Result<DMatrix<f64>> {
        ensure_len("A", &self.a, skills.n_occupations())?;
        let (o, s) = skills.omega().shape();
        Ok(DMatrix::from_fn(o, s, |i, k| (skills.omega()[(i, k)] * self.a[i]).powf(1.0 / self.theta)))
    }
}

/// Nest-level pieces of `F` at a point, all computed in log space.
///
/// `within[(o, s)]` is occupation `o`'s share of nest `s`, `between[s]` the
/// nest's share of `F`; an occupation's choice probability is
/// `Σ_s within[(o, s)] · between[s]`.
#[derive(Debug, Clone)]
pub struct NestEvaluation {
    pub ln_f: f64,
    /// `ln G_s` with `G_s = Σ_o (ω_o^s x_o)^{1/(1-ρ_s)}`; `-inf` for an empty nest.
    pub ln_g: DVector<f64>,
    pub within: DMatrix<f64>,
    pub between: DVector<f64>,
}

impl NestEvaluation {
    /// Choice probabilities `x_o F_o / F`.
    pub fn shares(&self) -> DVector<f64> {
        &self.within * &self.between
    }
}

/// Evaluates the nest decomposition at `ln x`. Inputs are assumed finite.
pub fn evaluate_nests(ln_x: &DVector<f64>, skills: &SkillSpace) -> NestEvaluation {
    let (o_n, s_n) = skills.omega().shape();
    let mut terms = DMatrix::from_element(o_n, s_n, f64::NEG_INFINITY);
    let mut ln_g = DVector::from_element(s_n, f64::NEG_INFINITY);
    for s in 0..s_n {
        let p = skills.power(s);
        for o in 0..o_n {
            let lw = skills.ln_omega(o, s);
            if lw > f64::NEG_INFINITY {
                terms[(o, s)] = p * (lw + ln_x[o]);
            }
        }
        ln_g[s] = log_sum_exp(terms.column(s).iter().copied());
    }
    let nest_ln: Vec<f64> = (0..s_n)
        .map(|s| if ln_g[s] > f64::NEG_INFINITY { (1.0 - skills.rho()[s]) * ln_g[s] } else { f64::NEG_INFINITY })
        .collect();
    let ln_f = log_sum_exp(nest_ln.iter().copied());
    let between = DVector::from_fn(s_n, |s, _| (nest_ln[s] - ln_f).exp());
    let within = DMatrix::from_fn(o_n, s_n, |o, s| {
        if terms[(o, s)] > f64::NEG_INFINITY {
            (terms[(o, s)] - ln_g[s]).exp()
        } else {
            0.0
        }
    });
    NestEvaluation { ln_f, ln_g, within, between }
}

fn checked_ln(x: &DVector<f64>, skills: &SkillSpace) -> Result<DVector<f64>> {
    ensure_len("x", x, skills.n_occupations())?;
    ensure_positive("x", x)?;
    Ok(x.map(f64::ln))
}

/// `F(x)`.
pub fn cnces_f(x: &DVector<f64>, skills: &SkillSpace) -> Result<f64> {
    Ok(ln_cnces_f(&checked_ln(x, skills)?, skills).exp())
}

/// `ln F(exp(ln_x))`, safe for arguments whose levels would overflow.
pub fn ln_cnces_f(ln_x: &DVector<f64>, skills: &SkillSpace) -> f64 {
    evaluate_nests(ln_x, skills).ln_f
}

/// Gradient `F_o(x)`, evaluated term by term from the closed form.
pub fn cnces_grad(x: &DVector<f64>, skills: &SkillSpace) -> Result<DVector<f64>> {
    let ln_x = checked_ln(x, skills)?;
    Ok(ln_cnces_grad(&ln_x, skills).map(f64::exp))
}

/// `ln F_o` at `ln x`.
pub fn ln_cnces_grad(ln_x: &DVector<f64>, skills: &SkillSpace) -> DVector<f64> {
    let nests = evaluate_nests(ln_x, skills);
    let (o_n, s_n) = skills.omega().shape();
    DVector::from_fn(o_n, |o, _| {
        log_sum_exp((0..s_n).filter_map(|s| {
            let lw = skills.ln_omega(o, s);
            if lw == f64::NEG_INFINITY {
                return None;
            }
            let p = skills.power(s);
            let rho = skills.rho()[s];
            Some(-rho * nests.ln_g[s] + p * lw + (p - 1.0) * ln_x[o])
        }))
    })
}

/// Row `o` of the Hessian, `{F_{oo'}(x)}_{o'}`.
///
/// Off-diagonal entries are `-Σ_s ρ_s/(1-ρ_s) G_s^{-ρ_s-1} a_o^s a_{o'}^s` with
/// `a_o^s = ω_o^s (ω_o^s x_o)^{ρ_s/(1-ρ_s)}`; the diagonal adds the curvature of
/// the own power term.
pub fn cnces_cross_row(x: &DVector<f64>, o: usize, skills: &SkillSpace) -> Result<DVector<f64>> {
    let ln_x = checked_ln(x, skills)?;
    if o >= skills.n_occupations() {
        return Err(DidesError::Dimension(format!("occupation index {o} out of range")));
    }
    let nests = evaluate_nests(&ln_x, skills);
    let (o_n, s_n) = skills.omega().shape();
    // ln a_o^s
    let ln_a = |j: usize, s: usize| {
        let p = skills.power(s);
        skills.ln_omega(j, s) * p + (p - 1.0) * ln_x[j]
    };
    let mut row = DVector::zeros(o_n);
    for s in 0..s_n {
        let rho = skills.rho()[s];
        if rho == 0.0 || skills.ln_omega(o, s) == f64::NEG_INFINITY {
            continue;
        }
        let c = rho / (1.0 - rho);
        let lg = nests.ln_g[s];
        let la_o = ln_a(o, s);
        for j in 0..o_n {
            if skills.ln_omega(j, s) == f64::NEG_INFINITY {
                continue;
            }
            row[j] -= c * ((-rho - 1.0) * lg + la_o + ln_a(j, s)).exp();
        }
        // d/dx_o of (ω x_o)^{ρ/(1-ρ)} contributes c·G^{-ρ}·ω^{p}·x_o^{p-2}.
        let p = skills.power(s);
        row[o] += c * (-rho * lg + p * skills.ln_omega(o, s) + (p - 2.0) * ln_x[o]).exp();
    }
    Ok(row)
}

/// Variance-weighted skill intensities `ω_o^s = r_o^s var_s / Σ_s' r_o^s' var_s'`.
pub fn skill_intensities(r: &DMatrix<f64>, var: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (o_n, s_n) = r.shape();
    ensure_len("var", var, s_n)?;
    ensure_positive("var", var)?;
    let mut omega = DMatrix::zeros(o_n, s_n);
    for o in 0..o_n {
        let mut total = 0.0;
        for s in 0..s_n {
            let v = r[(o, s)];
            if !(0.0..=1.0).contains(&v) {
                return Err(DidesError::Domain(format!("loading r[{o},{s}] = {v} outside [0, 1]")));
            }
            total += v * var[s];
        }
        if total == 0.0 {
            return Err(DidesError::DegenerateOccupation { occupation: o });
        }
        for s in 0..s_n {
            omega[(o, s)] = r[(o, s)] * var[s] / total;
        }
    }
    Ok(omega)
}
