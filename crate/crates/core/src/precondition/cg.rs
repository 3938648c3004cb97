//! Conjugate gradients for damped symmetric positive semi-definite systems.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CgStats {
    pub iterations: usize,
    /// Relative residual `||(H + damping I) x - b|| / ||b||` at exit.
    pub residual: f64,
    pub converged: bool,
    /// Set when the caller discarded the solution and used the raw gradient.
    pub fell_back: bool,
}

/// Solves `(H + damping I) x = b` given only products with `H`.
///
/// Returns `converged = false` (not an error) when `maxiter` is exhausted;
/// non-finite iterates, or a direction with non-positive curvature, are
/// reported as errors.
pub fn cg_solve<F>(
    apply_h: F,
    b: &DVector<f64>,
    damping: f64,
    tol: f64,
    maxiter: usize,
) -> Result<(DVector<f64>, CgStats)>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let b_norm = b.norm();
    if !b_norm.is_finite() {
        return Err(Error::NonFinite("conjugate-gradient right-hand side".into()));
    }
    let mut x = DVector::zeros(n);
    if b_norm == 0.0 {
        return Ok((x, CgStats { iterations: 0, residual: 0.0, converged: true, fell_back: false }));
    }
    let op = |v: &DVector<f64>| apply_h(v) + v * damping;
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rr = r.dot(&r);
    let mut iterations = 0;
    while iterations < maxiter {
        if rr.sqrt() / b_norm <= tol {
            break;
        }
        let hd = op(&d);
        let curvature = d.dot(&hd);
        if !curvature.is_finite() {
            return Err(Error::NonFinite("conjugate-gradient operator product".into()));
        }
        if curvature <= 0.0 {
            return Err(Error::Factorization(format!(
                "operator is not positive definite along a search direction (d'Hd = {curvature:.3e})"
            )));
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &hd, 1.0);
        let rr_next = r.dot(&r);
        if !rr_next.is_finite() {
            return Err(Error::NonFinite("conjugate-gradient residual".into()));
        }
        d = &r + &d * (rr_next / rr);
        rr = rr_next;
        iterations += 1;
    }
    let residual = rr.sqrt() / b_norm;
    Ok((x, CgStats { iterations, residual, converged: residual <= tol, fell_back: false }))
}
