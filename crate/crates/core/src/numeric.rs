//! Small numerical building blocks shared by the model modules: log-domain
//! sums, input validation and a Newton solver with backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{DidesError, Result};

/// Tolerances and iteration caps for iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverOptions {
    /// Convergence threshold on the sup-norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight on the new iterate in damped fixed-point updates.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-12, max_iter: 10_000, damping: 0.5 }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(DidesError::Parameter(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(DidesError::Parameter("max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(DidesError::Parameter(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        Ok(())
    }
}

/// `ln Σ exp(v)` over finite entries; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let vals: Vec<f64> = values.into_iter().collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub(crate) fn ensure_positive(name: &str, v: &DVector<f64>) -> Result<()> {
    for (i, x) in v.iter().enumerate() {
        if !(*x > 0.0) || !x.is_finite() {
            return Err(DidesError::Domain(format!("{name}[{i}] must be positive and finite, got {x}")));
        }
    }
    Ok(())
}

pub(crate) fn ensure_finite(name: &str, v: &DVector<f64>) -> Result<()> {
    for (i, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(DidesError::Domain(format!("{name}[{i}] is not finite")));
        }
    }
    Ok(())
}

pub(crate) fn ensure_len(name: &str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(DidesError::Dimension(format!("{name} has length {}, expected {n}", v.len())));
    }
    Ok(())
}

/// Keeps at most ~200 entries of a residual trace so errors stay small.
pub(crate) fn thin_trace(trace: &[f64]) -> Vec<f64> {
    if trace.len() <= 200 {
        return trace.to_vec();
    }
    let step = trace.len().div_ceil(200);
    let mut out: Vec<f64> = trace.iter().step_by(step).copied().collect();
    if let Some(last) = trace.last() {
        out.push(*last);
    }
    out
}

/// Outcome of a successful Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Forward-difference Jacobian of `f` at `x`, given `f(x)`.
pub(crate) fn fd_jacobian<F>(f: &mut F, x: &DVector<f64>, fx: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let m = fx.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = 1e-7 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fx[i]) / h;
        }
    }
    Ok(jac)
}

/// Solves `f(x) = 0` by Newton's method with a backtracking line search on
/// the sup-norm of the residual. Without an analytic Jacobian, forward
/// differences are used.
pub fn newton_solve<F, J>(
    solver: &'static str,
    mut f: F,
    mut jacobian: Option<J>,
    x0: DVector<f64>,
    opts: &SolverOptions,
) -> Result<NewtonReport>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let mut x = x0;
    let mut fx = f(&x)?;
    let mut res = sup_norm(&fx);
    let mut trace = vec![res];
    for iter in 0..opts.max_iter {
        if res < opts.tol {
            return Ok(NewtonReport { x, residual: res, iterations: iter });
        }
        let jac = match jacobian.as_mut() {
            Some(j) => j(&x)?,
            None => fd_jacobian(&mut f, &x, &fx)?,
        };
        let step = jac
            .lu()
            .solve(&(-&fx))
            .ok_or_else(|| DidesError::Conditioning(format!("{solver}: singular Newton system")))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &x + &step * t;
            match f(&cand) {
                Ok(fc) => {
                    let rc = sup_norm(&fc);
                    if rc.is_finite() && (rc < res * (1.0 - 1e-4 * t) || rc < opts.tol) {
                        x = cand;
                        fx = fc;
                        res = rc;
                        accepted = true;
                        break;
                    }
                }
                // Trial point left the domain; shorten the step.
                Err(DidesError::Domain(_)) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        trace.push(res);
        if !accepted {
            // No descent possible along the Newton direction: either we are at
            // the floating-point floor of the residual or the model is broken.
            if res < opts.tol * 1e3 {
                return Ok(NewtonReport { x, residual: res, iterations: iter + 1 });
            }
            return Err(DidesError::NoConvergence {
                solver,
                iterations: iter + 1,
                residual: res,
                trace: thin_trace(&trace),
            });
        }
    }
    if res < opts.tol {
        return Ok(NewtonReport { x, residual: res, iterations: opts.max_iter });
    }
    Err(DidesError::NoConvergence { solver, iterations: opts.max_iter, residual: res, trace: thin_trace(&trace) })
}

/// Type hint for calling [`newton_solve`] without an analytic Jacobian.
pub type NoJacobian = fn(&DVector<f64>) -> Result<DMatrix<f64>>;

/// Settings for [`bfgs_minimize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Stop once the sup-norm of the gradient falls below this.
    pub gtol: f64,
    pub max_iter: usize,
    /// Largest coordinate of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { gtol: 1e-10, max_iter: 500, max_step: 2.0 }
    }
}

/// Result of [`bfgs_minimize`].
#[derive(Debug, Clone)]
pub struct BfgsReport {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each accepted step (non-increasing).
    pub trace: Vec<f64>,
}

/// Central-difference gradient; non-finite objective values give `NaN` entries.
pub fn central_gradient<F: FnMut(&DVector<f64>) -> f64>(f: &mut F, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Unconstrained quasi-Newton minimization with finite-difference gradients
/// and an Armijo backtracking line search. The objective may return
/// `+inf` outside its domain; such trial points are rejected by the line search.
pub fn bfgs_minimize<F: FnMut(&DVector<f64>) -> f64>(mut f: F, x0: DVector<f64>, opts: &BfgsOptions) -> BfgsReport {
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = central_gradient(&mut f, &x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut trace = vec![fx];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let gnorm = g.amax();
        if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if gnorm < opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut p = -(&h * &g);
        if g.dot(&p) >= 0.0 {
            h = DMatrix::identity(n, n);
            p = -g.clone();
        }
        let pmax = p.amax();
        if pmax > opts.max_step {
            p *= opts.max_step / pmax;
        }
        let slope = g.dot(&p);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &p * t;
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if h != DMatrix::identity(n, n) {
                h = DMatrix::identity(n, n);
                continue;
            }
            // No descent along the gradient: we are at the noise floor.
            converged = gnorm < opts.gtol.sqrt();
            break;
        };
        let g_new = central_gradient(&mut f, &x_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        let small_step = s.amax() < 1e-14 * (1.0 + x.amax());
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        if small_step {
            converged = g.amax() < opts.gtol.sqrt();
            break;
        }
    }
    let grad_norm = g.amax();
    if grad_norm < opts.gtol {
        converged = true;
    }
    BfgsReport { x, value: fx, grad_norm, iterations, converged, trace }
}
