//! Exact static counterfactuals from observed shares.
//!
//! Observed shares are mapped to correlation-adjusted shares `π̃` with
//! `π_o = π̃_o F_o(π̃)` (so `F(π̃) = 1`). A wage change `ŵ` then moves them to
//! `π̃' = ŵ^θ π̃ / F(ŵ^θ π̃)`, with no need to know the levels of `A` or `w`.

use nalgebra::{DMatrix, DVector};

use crate::corr_core::{evaluate_nests, ln_cnces_grad, SkillSpace};
use crate::error::{DidesError, Result};
use crate::labor_supply::{correlated_component, shares_from_ln_x};
use crate::numeric::{ensure_len, ensure_positive, newton_solve, sup_norm, thin_trace, SolverOptions};

/// Correlation-adjusted shares together with the observed shares they encode.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedShares {
    pub pi_tilde: DVector<f64>,
    pub origin: DVector<f64>,
}

/// Checks that `pi` is a strictly positive probability vector.
pub(crate) fn check_simplex(name: &str, pi: &DVector<f64>, n: usize) -> Result<()> {
    ensure_len(name, pi, n)?;
    for (o, p) in pi.iter().enumerate() {
        if !p.is_finite() || *p < 0.0 {
            return Err(DidesError::Domain(format!("{name}[{o}] = {p} is not a valid share")));
        }
        if *p == 0.0 {
            return Err(DidesError::DegenerateShare { occupation: o });
        }
    }
    let total = pi.sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(DidesError::Domain(format!("{name} sums to {total}, not 1")));
    }
    Ok(())
}

/// Forward map `π̃ ↦ (π̃_o F_o(π̃))_o`, in logs.
pub fn forward_ln_shares(ln_pi_tilde: &DVector<f64>, skills: &SkillSpace) -> DVector<f64> {
    ln_pi_tilde + ln_cnces_grad(ln_pi_tilde, skills)
}

/// Inverts `π_o = π̃_o F_o(π̃)` with default tolerances.
pub fn invert_shares(pi: &DVector<f64>, skills: &SkillSpace) -> Result<AdjustedShares> {
    invert_shares_with(pi, skills, &SolverOptions::default())
}

/// Inverts `π_o = π̃_o F_o(π̃)`.
///
/// Solves `g(y) = y + ln F_o(e^y) - ln π = 0` in `y = ln π̃` by Newton's method;
/// the Jacobian `I + C` has eigenvalues at least one, so the system is always
/// well posed. A damped fixed point `y ← y - d·g(y)` is the fallback.
pub fn invert_shares_with(pi: &DVector<f64>, skills: &SkillSpace, opts: &SolverOptions) -> Result<AdjustedShares> {
    opts.validate()?;
    check_simplex("pi", pi, skills.n_occupations())?;
    let ln_pi = pi.map(f64::ln);
    if skills.rho().iter().all(|r| *r == 0.0) {
        return Ok(AdjustedShares { pi_tilde: pi.clone(), origin: pi.clone() });
    }
    let g = |y: &DVector<f64>| -> Result<DVector<f64>> { Ok(forward_ln_shares(y, skills) - &ln_pi) };
    let jac = |y: &DVector<f64>| -> Result<DMatrix<f64>> {
        let (c, _) = correlated_component(y, skills)?;
        Ok(c + DMatrix::identity(y.len(), y.len()))
    };
    let y = match newton_solve("share inversion", g, Some(jac), ln_pi.clone(), opts) {
        Ok(rep) => rep.x,
        Err(DidesError::NoConvergence { .. }) | Err(DidesError::Conditioning(_)) => {
            damped_inversion(&ln_pi, skills, opts)?
        }
        Err(e) => return Err(e),
    };
    Ok(AdjustedShares { pi_tilde: y.map(f64::exp), origin: pi.clone() })
}

fn damped_inversion(ln_pi: &DVector<f64>, skills: &SkillSpace, opts: &SolverOptions) -> Result<DVector<f64>> {
    let mut y = ln_pi.clone();
    let mut trace = Vec::new();
    for _ in 0..opts.max_iter {
        let r = forward_ln_shares(&y, skills) - ln_pi;
        let res = sup_norm(&r);
        trace.push(res);
        if res < opts.tol {
            return Ok(y);
        }
        y -= r * opts.damping;
    }
    Err(DidesError::NoConvergence {
        solver: "share inversion",
        iterations: opts.max_iter,
        residual: *trace.last().unwrap_or(&f64::NAN),
        trace: thin_trace(&trace),
    })
}

fn ln_shifted(pi_tilde: &DVector<f64>, w_hat: &DVector<f64>, theta: f64) -> Result<DVector<f64>> {
    ensure_positive("pi_tilde", pi_tilde)?;
    ensure_len("w_hat", w_hat, pi_tilde.len())?;
    ensure_positive("w_hat", w_hat)?;
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(DidesError::Parameter(format!("theta must be positive, got {theta}")));
    }
    Ok(pi_tilde.zip_map(w_hat, |p, w| p.ln() + theta * w.ln()))
}

/// Counterfactual shares `(π', π̃')` after wages change by `ŵ`, starting from
/// already inverted shares.
pub fn counterfactual_from_adjusted(
    adjusted: &AdjustedShares,
    w_hat: &DVector<f64>,
    skills: &SkillSpace,
    theta: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let ln_x = ln_shifted(&adjusted.pi_tilde, w_hat, theta)?;
    if w_hat.iter().all(|w| *w == 1.0) && adjusted.origin.len() == w_hat.len() {
        // No wage change: return the observed shares bit for bit.
        return Ok((adjusted.origin.clone(), adjusted.pi_tilde.clone()));
    }
    let dec = shares_from_ln_x(&ln_x, skills)?;
    let ln_f = evaluate_nests(&ln_x, skills).ln_f;
    let pi_tilde_prime = ln_x.map(|v| (v - ln_f).exp());
    Ok((dec.pi, pi_tilde_prime))
}

/// Counterfactual shares `(π', π̃')` from observed shares `π` and wage change `ŵ`.
pub fn counterfactual_shares(
    pi: &DVector<f64>,
    w_hat: &DVector<f64>,
    skills: &SkillSpace,
    theta: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let adjusted = invert_shares(pi, skills)?;
    counterfactual_from_adjusted(&adjusted, w_hat, skills, theta)
}

/// Aggregate wage index change `Ŵ = F(ŵ^θ π̃)^{1/θ}`.
pub fn wage_index_change(pi_tilde: &DVector<f64>, w_hat: &DVector<f64>, skills: &SkillSpace, theta: f64) -> Result<f64> {
    ensure_len("pi_tilde", pi_tilde, skills.n_occupations())?;
    let ln_x = ln_shifted(pi_tilde, w_hat, theta)?;
    if w_hat.iter().all(|w| *w == 1.0) {
        return Ok(1.0);
    }
    Ok((evaluate_nests(&ln_x, skills).ln_f / theta).exp())
}

/// Employment shares of several worker groups over several periods.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPanel {
    groups: Vec<String>,
    periods: Vec<String>,
    /// One `G × O` matrix per period.
    shares: Vec<DMatrix<f64>>,
}

impl GroupPanel {
    pub fn new(groups: Vec<String>, periods: Vec<String>, shares: Vec<DMatrix<f64>>) -> Result<Self> {
        if shares.len() != periods.len() {
            return Err(DidesError::Dimension(format!(
                "{} share matrices for {} periods",
                shares.len(),
                periods.len()
            )));
        }
        for (t, m) in shares.iter().enumerate() {
            if m.nrows() != groups.len() {
                return Err(DidesError::Dimension(format!(
                    "period {t} has {} group rows, expected {}",
                    m.nrows(),
                    groups.len()
                )));
            }
            if shares.first().map(|f| f.ncols()) != Some(m.ncols()) {
                return Err(DidesError::Dimension("occupation count differs across periods".into()));
            }
            for g in 0..m.nrows() {
                let row = m.row(g).transpose();
                if (row.sum() - 1.0).abs() > 1e-10 || row.iter().any(|v| !(*v >= 0.0)) {
                    return Err(DidesError::Domain(format!(
                        "shares of group '{}' in period '{}' do not form a probability vector",
                        groups[g], periods[t]
                    )));
                }
            }
        }
        Ok(GroupPanel { groups, periods, shares })
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn n_occupations(&self) -> usize {
        self.shares.first().map_or(0, |m| m.ncols())
    }

    /// `G × O` share matrix of period `t`.
    pub fn shares(&self, t: usize) -> &DMatrix<f64> {
        &self.shares[t]
    }

    pub fn group_shares(&self, t: usize, g: usize) -> DVector<f64> {
        self.shares[t].row(g).transpose()
    }
}

/// Mobility gain of each group in period `t`: `ln Ŵ^g - Σ_o π_o^g ln ŵ_o`.
pub fn group_mobility_gain(
    panel: &GroupPanel,
    period: usize,
    w_hat: &DVector<f64>,
    skills: &SkillSpace,
    theta: f64,
) -> Result<Vec<f64>> {
    if period >= panel.periods().len() {
        return Err(DidesError::Dimension(format!("period {period} is out of range")));
    }
    ensure_len("w_hat", w_hat, skills.n_occupations())?;
    ensure_positive("w_hat", w_hat)?;
    (0..panel.groups().len())
        .map(|g| {
            let pi = panel.group_shares(period, g);
            let adjusted = invert_shares(&pi, skills)?;
            let w_index = wage_index_change(&adjusted.pi_tilde, w_hat, skills, theta)?;
            let stayer: f64 = pi.iter().zip(w_hat.iter()).map(|(p, w)| p * w.ln()).sum();
            Ok(w_index.ln() - stayer)
        })
        .collect()
}

/// Discrimination changes implied by group-minus-reference log changes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminationChanges {
    pub composite: DVector<f64>,
    pub pecuniary: DVector<f64>,
    pub nonpecuniary: DVector<f64>,
}

/// Splits the composite barrier change `(1/θ) Δ ln π̃`-gap into a pecuniary
/// part (wage gap plus the efficiency-unit correction `δ/θ`) and the
/// nonpecuniary residual.
pub fn discrimination_decomposition(
    d_ln_wagegap: &DVector<f64>,
    d_ln_pitilde_gap: &DVector<f64>,
    theta: f64,
    delta: f64,
) -> Result<DiscriminationChanges> {
    ensure_len("pitilde gap", d_ln_pitilde_gap, d_ln_wagegap.len())?;
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(DidesError::Parameter(format!("theta must be positive, got {theta}")));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(DidesError::Parameter(format!("delta must lie in [0, 1], got {delta}")));
    }
    let composite = d_ln_pitilde_gap / theta;
    let pecuniary = d_ln_wagegap + d_ln_pitilde_gap * (delta / theta);
    let nonpecuniary = d_ln_pitilde_gap * ((1.0 - delta) / theta) - d_ln_wagegap;
    Ok(DiscriminationChanges { composite, pecuniary, nonpecuniary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nested4(rho: f64) -> SkillSpace {
        SkillSpace::from_rows(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]], &[rho, rho]).unwrap()
    }

    #[test]
    fn independence_is_identity() {
        let pi = DVector::from_vec(vec![0.2, 0.3, 0.5]);
        let adj = invert_shares(&pi, &SkillSpace::independent(3)).unwrap();
        assert_eq!(adj.pi_tilde, pi);
    }

    #[test]
    fn uniform_nested_inversion() {
        let sk = nested4(0.77);
        let pi = DVector::from_element(4, 0.25);
        let adj = invert_shares(&pi, &sk).unwrap();
        let v = adj.pi_tilde[0];
        assert!(adj.pi_tilde.iter().all(|p| (p - v).abs() < 1e-14));
        let fwd = forward_ln_shares(&adj.pi_tilde.map(f64::ln), &sk).map(f64::exp);
        assert!((fwd - pi).amax() < 1e-13);
        // F(π̃) = 1 by Euler's theorem.
        assert!(evaluate_nests(&adj.pi_tilde.map(f64::ln), &sk).ln_f.abs() < 1e-12);
    }

    #[test]
    fn ces_logit_update() {
        let pi = DVector::from_vec(vec![0.1, 0.6, 0.3]);
        let w_hat = DVector::from_vec(vec![1.1, 0.95, 1.0]);
        let theta = 2.0;
        let (pp, _) = counterfactual_shares(&pi, &w_hat, &SkillSpace::independent(3), theta).unwrap();
        let raw = pi.zip_map(&w_hat, |p, w| p * w.powf(theta));
        let expect = &raw / raw.sum();
        assert!((pp - expect).amax() < 1e-14);
        let idx = wage_index_change(&pi, &w_hat, &SkillSpace::independent(3), theta).unwrap();
        assert!((idx - raw.sum().powf(1.0 / theta)).abs() < 1e-14);
    }

    #[test]
    fn ces_group_gain_example() {
        let panel = GroupPanel::new(
            vec!["g".into()],
            vec!["0".into()],
            vec![DMatrix::from_row_slice(1, 2, &[0.5, 0.5])],
        )
        .unwrap();
        let w_hat = DVector::from_vec(vec![1.0, 0.1f64.exp()]);
        let g = group_mobility_gain(&panel, 0, &w_hat, &SkillSpace::independent(2), 3.12).unwrap();
        let expect = ((1.0 + 0.312f64.exp()) / 2.0).ln() / 3.12 - 0.05;
        assert!((g[0] - expect).abs() < 1e-14);
        // Second-order approximation θ/2 · Var(ln ŵ).
        assert!((g[0] - 3.12 / 2.0 * 0.0025).abs() < 2e-4);
    }

    #[test]
    fn discrimination_identities() {
        let wg = DVector::from_vec(vec![0.02, -0.01]);
        let pg = DVector::from_vec(vec![0.3, 0.1]);
        let d = discrimination_decomposition(&wg, &pg, 2.0, 0.0).unwrap();
        assert_eq!(d.pecuniary, wg);
        let d = discrimination_decomposition(&wg, &pg, 2.0, 0.4).unwrap();
        assert!((&d.pecuniary + &d.nonpecuniary - &d.composite).amax() < 1e-15);
    }

    #[test]
    fn zero_share_named() {
        let pi = DVector::from_vec(vec![0.5, 0.0, 0.5]);
        assert_eq!(
            invert_shares(&pi, &SkillSpace::independent(3)).unwrap_err(),
            DidesError::DegenerateShare { occupation: 1 }
        );
    }
}
