//! Variance-invariance-covariance regularisation.
//!
//! `lambda/n sum_i ||a_i - b_i||^2`
//! `+ mu/2 sum_{Z in {A,B}} sum_d max(0, 1 - sqrt(Var_d(Z) + 1e-4))`
//! `+ nu sum_{Z in {A,B}} (1/h) sum_{i != j} Cov_ij(Z)^2`,
//! with unbiased (n - 1) variance and covariance estimates.

use nalgebra::DMatrix;

pub const VAR_EPS: f64 = 1e-4;

/// Variance hinge and covariance penalty of one branch, with gradient.
fn branch_terms(z: &DMatrix<f64>, mu: f64, nu: f64) -> (f64, DMatrix<f64>) {
    let (n, h) = z.shape();
    let denom = (n - 1) as f64;
    let mut zc = z.clone();
    crate::linalg::center_columns(&mut zc);
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(n, h);
    for j in 0..h {
        let std = (zc.column(j).norm_squared() / denom + VAR_EPS).sqrt();
        if std < 1.0 {
            value += 0.5 * mu * (1.0 - std);
            let col = zc.column(j) * (-0.5 * mu / (denom * std));
            grad.set_column(j, &col);
        }
    }
    let cov = zc.transpose() * &zc / denom;
    let mut off = cov.clone();
    off.fill_diagonal(0.0);
    value += nu * off.norm_squared() / h as f64;
    // d/dZc of (1/h) sum_{i!=j} Cov_ij^2 = (4 / (h (n-1))) Zc Off.
    let mut g_cov = &zc * &off * (4.0 * nu / (h as f64 * denom));
    crate::linalg::center_columns(&mut g_cov);
    grad += g_cov;
    (value, grad)
}

pub fn vicreg_loss(
    za: &DMatrix<f64>,
    zb: &DMatrix<f64>,
    lambda: f64,
    mu: f64,
    nu: f64,
) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let n = za.nrows() as f64;
    let diff = za - zb;
    let inv = lambda * diff.norm_squared() / n;
    let g_inv = &diff * (2.0 * lambda / n);
    let (va, ga) = branch_terms(za, mu, nu);
    let (vb, gb) = branch_terms(zb, mu, nu);
    (inv + va + vb, &g_inv + ga, gb - g_inv)
}
