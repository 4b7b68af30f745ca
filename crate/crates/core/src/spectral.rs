//! Eigendecomposition of the elasticity matrix and the eigenshock view of
//! demand shocks.
//!
//! `Θ` is not symmetric, but `diag(π)Θ` is, so `diag(π)^{1/2} Θ diag(π)^{-1/2}`
//! is a symmetric matrix with the same spectrum. That route gives real
//! eigenvalues and a clean basis even inside repeated eigenspaces. Matrices
//! without this structure (e.g. efficiency-unit elasticities) go through a
//! general real Schur decomposition with inverse iteration for the vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{DidesError, Result};
use crate::labor_supply::ElasticityMatrix;
use crate::numeric::{ensure_finite, ensure_len};

/// Condition number of `U` above which projections are refused.
const MAX_CONDITION: f64 = 1e12;
/// Condition number of `U` above which projections are logged as unreliable.
const WARN_CONDITION: f64 = 1e8;

/// Eigenvalues (ascending) and unit-norm right eigenvectors of `Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: DVector<f64>,
    /// Columns `u_n`, unit norm, first nonzero component positive.
    pub right_vectors: DMatrix<f64>,
    pub left_inverse: DMatrix<f64>,
    /// 2-norm condition number of `U`.
    pub condition: f64,
    /// Index ranges `[start, end)` of eigenvalues that coincide numerically.
    pub degenerate_blocks: Vec<(usize, usize)>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn vector(&self, n: usize) -> DVector<f64> {
        self.right_vectors.column(n).into_owned()
    }

    /// Whether eigenvalue `n` belongs to a repeated block.
    pub fn is_degenerate(&self, n: usize) -> bool {
        self.degenerate_blocks.iter().any(|(a, b)| (*a..*b).contains(&n))
    }

    /// `‖U Λ U^{-1} - Θ‖_∞`.
    pub fn reconstruction_error(&self, theta: &DMatrix<f64>) -> f64 {
        let recon = &self.right_vectors * DMatrix::from_diagonal(&self.eigenvalues) * &self.left_inverse;
        inf_norm(&(recon - theta))
    }
}

/// Coefficients of a shock in the eigenvector basis.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenProjection {
    pub b: DVector<f64>,
    /// `b_n² / Σ_{m≥2} b_m²` for `n ≥ 2`; zero for the uniform mode.
    pub variance_shares: DVector<f64>,
    /// The shock is (numerically) uniform, so all shares are zero.
    pub uniform_only: bool,
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Full eigendecomposition `Θ = U Λ U^{-1}`.
pub fn eigendecompose(theta_m: &ElasticityMatrix) -> Result<Spectrum> {
    let theta = &theta_m.theta_matrix;
    let n = theta_m.dim();
    if n == 0 {
        return Err(DidesError::Dimension("empty elasticity matrix".into()));
    }
    for (i, v) in theta.iter().enumerate() {
        if !v.is_finite() {
            return Err(DidesError::Domain(format!("elasticity matrix entry {i} is not finite")));
        }
    }
    let scale = inf_norm(theta).max(1.0);
    if theta_m.max_row_sum() > 1e-8 * scale {
        return Err(DidesError::Structure(format!(
            "elasticity matrix rows do not sum to zero (max {:.3e})",
            theta_m.max_row_sum()
        )));
    }
    let (values, vectors) = match symmetrizable(theta_m, scale) {
        Some(d_half) => symmetric_route(theta, &d_half),
        None => general_route(theta, scale)?,
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let eigenvalues = DVector::from_fn(n, |i, _| values[order[i]]);
    let mut right = DMatrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    for j in 0..n {
        normalize_column(&mut right, j);
    }
    let degenerate_blocks = clusters(&eigenvalues, scale);
    if eigenvalues[0].abs() > 1e-8 * scale {
        return Err(DidesError::Structure(format!("smallest eigenvalue {:.3e} is not zero", eigenvalues[0])));
    }
    let lu = right.clone().lu();
    let left_inverse = lu
        .try_inverse()
        .ok_or_else(|| DidesError::Conditioning("eigenvector matrix is singular".into()))?;
    let condition = crate::incidence::condition_number(&right);
    Ok(Spectrum { eigenvalues, right_vectors: right, left_inverse, condition, degenerate_blocks })
}

/// `diag(π)^{1/2}` when `diag(π)Θ` is symmetric.
fn symmetrizable(theta_m: &ElasticityMatrix, scale: f64) -> Option<DVector<f64>> {
    let pi = &theta_m.shares;
    if pi.iter().any(|p| !(*p > 0.0)) {
        return None;
    }
    let n = theta_m.dim();
    let t = &theta_m.theta_matrix;
    for i in 0..n {
        for j in (i + 1)..n {
            if (pi[i] * t[(i, j)] - pi[j] * t[(j, i)]).abs() > 1e-12 * scale {
                return None;
            }
        }
    }
    Some(pi.map(f64::sqrt))
}

fn symmetric_route(theta: &DMatrix<f64>, d_half: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = theta.nrows();
    let mut sym = DMatrix::from_fn(n, n, |i, j| d_half[i] * theta[(i, j)] / d_half[j]);
    sym = (&sym + sym.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)] / d_half[i]);
    (eig.eigenvalues, vectors)
}

fn general_route(theta: &DMatrix<f64>, scale: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = theta.nrows();
    let complex = theta.clone().complex_eigenvalues();
    let tol = 1e-8 * scale;
    if let Some(c) = complex.iter().find(|c| c.im.abs() > tol) {
        return Err(DidesError::Structure(format!(
            "eigenvalue {:.6} {:+.3e}i is complex beyond tolerance",
            c.re, c.im
        )));
    }
    if complex.iter().any(|c| c.im != 0.0) {
        log::warn!("discarding imaginary parts below {tol:.1e} in the spectrum");
    }
    let mut values: Vec<f64> = complex.iter().map(|c| c.re).collect();
    values.sort_by(f64::total_cmp);
    let values = DVector::from_vec(values);
    let mut vectors = DMatrix::zeros(n, n);
    for (start, end) in clusters_all(&values, scale) {
        let k = end - start;
        let mean = values.rows(start, k).mean();
        let basis = inverse_iteration(theta, mean, k, start, scale)?;
        for j in 0..k {
            vectors.set_column(start + j, &basis.column(j));
        }
    }
    Ok((values, vectors))
}

/// Orthonormal basis of the invariant subspace for eigenvalues near `shift`.
fn inverse_iteration(theta: &DMatrix<f64>, shift: f64, k: usize, seed: usize, scale: f64) -> Result<DMatrix<f64>> {
    let n = theta.nrows();
    let mut offset = 1e-10 * scale;
    let lu = loop {
        let shifted = theta - DMatrix::identity(n, n) * (shift + offset);
        let lu = shifted.lu();
        if lu.is_invertible() {
            break lu;
        }
        offset *= 10.0;
        if offset > 1e-4 * scale {
            return Err(DidesError::Conditioning("inverse iteration could not find a regular shift".into()));
        }
    };
    // Deterministic, generic starting block.
    let mut x = DMatrix::from_fn(n, k, |i, j| {
        let h = ((i + 1) * 7919 + (j + seed + 1) * 104_729) % 1000;
        0.5 + h as f64 / 1000.0
    });
    for _ in 0..6 {
        let y = lu
            .solve(&x)
            .ok_or_else(|| DidesError::Conditioning("inverse iteration solve failed".into()))?;
        x = y.qr().q();
    }
    Ok(x)
}

fn normalize_column(m: &mut DMatrix<f64>, j: usize) {
    let norm = m.column(j).norm();
    if norm > 0.0 {
        m.column_mut(j).scale_mut(1.0 / norm);
    }
    let col = m.column(j);
    let first = col.iter().copied().find(|v| v.abs() > 1e-10);
    if let Some(v) = first {
        if v < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
}

/// Groups of consecutive (sorted) eigenvalues closer than the tolerance,
/// including singletons.
fn clusters_all(values: &DVector<f64>, scale: f64) -> Vec<(usize, usize)> {
    let tol = 1e-9 * scale;
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] > tol {
            out.push((start, i));
            start = i;
        }
    }
    out
}

fn clusters(values: &DVector<f64>, scale: f64) -> Vec<(usize, usize)> {
    clusters_all(values, scale).into_iter().filter(|(a, b)| b - a > 1).collect()
}

/// Coefficients `b` with `U b = shock`, and the variance shares of the
/// non-uniform modes.
pub fn project_shock(spectrum: &Spectrum, shock: &DVector<f64>) -> Result<EigenProjection> {
    ensure_len("shock", shock, spectrum.dim())?;
    ensure_finite("shock", shock)?;
    if spectrum.condition > MAX_CONDITION {
        return Err(DidesError::Conditioning(format!(
            "eigenvector basis has condition number {:.3e}",
            spectrum.condition
        )));
    }
    if spectrum.condition > WARN_CONDITION {
        log::warn!("eigenvector basis is poorly conditioned ({:.3e})", spectrum.condition);
    }
    let b = &spectrum.left_inverse * shock;
    let rest: f64 = b.iter().skip(1).map(|v| v * v).sum();
    let scale = shock.norm().max(f64::MIN_POSITIVE);
    let uniform_only = rest.sqrt() <= 1e-12 * scale;
    let variance_shares = if uniform_only {
        DVector::zeros(b.len())
    } else {
        DVector::from_fn(b.len(), |i, _| if i == 0 { 0.0 } else { b[i] * b[i] / rest })
    };
    Ok(EigenProjection { b, variance_shares, uniform_only })
}

/// Wage response `(d ln y/σ)·1 + Σ_n σ/(σ+λ_n) b_n u_n`, where `projection`
/// holds the coefficients of `d ln α / σ`.
pub fn spectral_incidence(spectrum: &Spectrum, projection: &EigenProjection, sigma: f64, d_ln_y: f64) -> Result<DVector<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DidesError::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    ensure_len("b", &projection.b, spectrum.dim())?;
    let factors = DVector::from_fn(spectrum.dim(), |n, _| sigma / (sigma + spectrum.eigenvalues[n]) * projection.b[n]);
    Ok(&spectrum.right_vectors * factors + DVector::from_element(spectrum.dim(), d_ln_y / sigma))
}

/// One row of an exposure decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureMode {
    pub eigenvalue: f64,
    pub coefficient: f64,
    pub variance_share: f64,
    /// The eigenvalue is repeated, so the split within its block depends on
    /// the basis chosen.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureReport {
    /// Coefficient on the uniform mode `u_1`.
    pub uniform_coefficient: f64,
    /// Non-uniform modes by ascending eigenvalue.
    pub modes: Vec<ExposureMode>,
}

/// Decomposition of an exposure vector across eigenshocks.
pub fn exposure_spectrum_report(spectrum: &Spectrum, z: &DVector<f64>) -> Result<ExposureReport> {
    let proj = project_shock(spectrum, z)?;
    let modes = (1..spectrum.dim())
        .map(|n| ExposureMode {
            eigenvalue: spectrum.eigenvalues[n],
            coefficient: proj.b[n],
            variance_share: proj.variance_shares[n],
            degenerate: spectrum.is_degenerate(n),
        })
        .collect();
    Ok(ExposureReport { uniform_coefficient: proj.b[0], modes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ces(theta: f64, pi: &[f64]) -> ElasticityMatrix {
        let n = pi.len();
        let p = DVector::from_column_slice(pi);
        ElasticityMatrix::new(DMatrix::from_fn(n, n, |i, j| theta * ((i == j) as u8 as f64 - p[j])), p).unwrap()
    }

    #[test]
    fn ces_spectrum() {
        let th = ces(2.5, &[0.1, 0.2, 0.3, 0.4]);
        let sp = eigendecompose(&th).unwrap();
        assert!(sp.eigenvalues[0].abs() < 1e-12);
        for n in 1..4 {
            assert!((sp.eigenvalues[n] - 2.5).abs() < 1e-12);
        }
        assert_eq!(sp.degenerate_blocks, vec![(1, 4)]);
        let u1 = sp.vector(0);
        assert!((u1 - DVector::from_element(4, 0.5)).amax() < 1e-12);
        assert!(sp.reconstruction_error(&th.theta_matrix) < 1e-12);
    }

    #[test]
    fn general_route_matches() {
        // Non-symmetrizable matrix with zero row sums and real spectrum.
        let t = DMatrix::from_row_slice(3, 3, &[2.0, -1.5, -0.5, -0.2, 1.0, -0.8, -0.3, -0.6, 0.9]);
        let th = ElasticityMatrix::new(t.clone(), DVector::from_vec(vec![0.3, 0.3, 0.4])).unwrap();
        let sp = eigendecompose(&th).unwrap();
        for n in 0..3 {
            let u = sp.vector(n);
            assert!((&t * &u - &u * sp.eigenvalues[n]).amax() < 1e-10);
            assert!((u.norm() - 1.0).abs() < 1e-12);
        }
        assert!(sp.reconstruction_error(&t) < 1e-10);
    }

    #[test]
    fn projection_round_trip() {
        let th = ces(2.0, &[0.2, 0.3, 0.5]);
        let sp = eigendecompose(&th).unwrap();
        let shock = DVector::from_vec(vec![0.3, -0.1, 0.7]);
        let p = project_shock(&sp, &shock).unwrap();
        assert!((&sp.right_vectors * &p.b - &shock).amax() < 1e-12);
        assert!((p.variance_shares.sum() - 1.0).abs() < 1e-12);
        let u = project_shock(&sp, &DVector::from_element(3, 2.0)).unwrap();
        assert!(u.uniform_only);
        assert_eq!(u.variance_shares, DVector::zeros(3));
    }

    #[test]
    fn complex_spectrum_is_rejected() {
        // A rotation-like block plus a zero mode: zero row sums, complex pair.
        let t = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, -2.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let th = ElasticityMatrix::new(t, DVector::from_vec(vec![0.3, 0.3, 0.4])).unwrap();
        assert!(matches!(eigendecompose(&th), Err(DidesError::Structure(_))));
    }
}
