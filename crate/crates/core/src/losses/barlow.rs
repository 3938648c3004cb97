//! Cross-correlation redundancy reduction loss
//! `sum_i (1 - C_ii)^2 + lambda sum_{i != j} C_ij^2`, where `C` is computed
//! from batch-centred, column-normalised embeddings.

use nalgebra::DMatrix;

use super::NORM_EPS;

/// Cached forward pass of the normalised cross-correlation.
#[derive(Debug, Clone)]
pub struct BtForward {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub scale_a: Vec<f64>,
    pub scale_b: Vec<f64>,
    pub c: DMatrix<f64>,
}

fn centered_normalized(z: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut zc = z.clone();
    crate::linalg::center_columns(&mut zc);
    let scales: Vec<f64> = zc.column_iter().map(|c| (c.norm_squared() + NORM_EPS).sqrt()).collect();
    for (j, mut col) in zc.column_iter_mut().enumerate() {
        col /= scales[j];
    }
    (zc, scales)
}

/// Forward-mode derivative of centring then normalising, given the output.
fn norm_jvp(hat: &DMatrix<f64>, scales: &[f64], dz: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = dz.clone();
    crate::linalg::center_columns(&mut d);
    for (j, &scale) in scales.iter().enumerate() {
        let proj = hat.column(j).dot(&d.column(j));
        let col = (d.column(j) - hat.column(j) * proj) / scale;
        d.set_column(j, &col);
    }
    d
}

/// Reverse-mode counterpart of [`norm_jvp`].
fn norm_vjp(hat: &DMatrix<f64>, scales: &[f64], g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = g.clone();
    for (j, &scale) in scales.iter().enumerate() {
        let proj = hat.column(j).dot(&g.column(j));
        let col = (g.column(j) - hat.column(j) * proj) / scale;
        d.set_column(j, &col);
    }
    crate::linalg::center_columns(&mut d);
    d
}

impl BtForward {
    pub fn new(za: &DMatrix<f64>, zb: &DMatrix<f64>) -> Self {
        let (a_hat, scale_a) = centered_normalized(za);
        let (b_hat, scale_b) = centered_normalized(zb);
        let c = a_hat.transpose() * &b_hat;
        Self { a_hat, b_hat, scale_a, scale_b, c }
    }

    pub fn value(&self, lambda_reg: f64) -> f64 {
        let h = self.c.nrows();
        let mut v = 0.0;
        for i in 0..h {
            for j in 0..h {
                let c = self.c[(i, j)];
                v += if i == j { (1.0 - c).powi(2) } else { lambda_reg * c * c };
            }
        }
        v
    }

    /// `dL/dC`.
    pub fn grad_c(&self, lambda_reg: f64) -> DMatrix<f64> {
        let h = self.c.nrows();
        DMatrix::from_fn(h, h, |i, j| {
            let c = self.c[(i, j)];
            if i == j {
                -2.0 * (1.0 - c)
            } else {
                2.0 * lambda_reg * c
            }
        })
    }

    /// Pulls a cotangent on `C` back to the two embedding blocks.
    pub fn vjp(&self, g: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let d_ahat = &self.b_hat * g.transpose();
        let d_bhat = &self.a_hat * g;
        (norm_vjp(&self.a_hat, &self.scale_a, &d_ahat), norm_vjp(&self.b_hat, &self.scale_b, &d_bhat))
    }

    /// Pushes embedding tangents forward to a tangent on `C`.
    pub fn jvp(&self, dza: &DMatrix<f64>, dzb: &DMatrix<f64>) -> DMatrix<f64> {
        let da = norm_jvp(&self.a_hat, &self.scale_a, dza);
        let db = norm_jvp(&self.b_hat, &self.scale_b, dzb);
        da.transpose() * &self.b_hat + self.a_hat.transpose() * db
    }
}

/// Residual weights: 1 on the diagonal, `sqrt(lambda)` elsewhere.
pub fn residual_weights(h: usize, lambda_reg: f64) -> DMatrix<f64> {
    let off = lambda_reg.sqrt();
    DMatrix::from_fn(h, h, |i, j| if i == j { 1.0 } else { off })
}

/// Returns the loss and its gradients with respect to `za` and `zb`.
pub fn bt_loss(za: &DMatrix<f64>, zb: &DMatrix<f64>, lambda_reg: f64) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let fwd = BtForward::new(za, zb);
    let (ga, gb) = fwd.vjp(&fwd.grad_c(lambda_reg));
    (fwd.value(lambda_reg), ga, gb)
}
