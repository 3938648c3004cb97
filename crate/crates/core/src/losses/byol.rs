//! Bootstrap loss: online embeddings pass through a linear predictor and are
//! pulled toward a moving-average target by `2 - 2 cos`. Target embeddings
//! receive no gradient.

use nalgebra::{DMatrix, DVector};

use super::simclr::{normalize_rows, normalize_rows_vjp};
use super::Params;

pub struct ByolOutput {
    pub value: f64,
    pub grad_online: DMatrix<f64>,
    pub grad_predictor: DMatrix<f64>,
}

/// `mean_i (2 - 2 cos(W z_i, t_i))` with predictor `W` applied row-wise.
pub fn byol_loss(online: &DMatrix<f64>, target: &DMatrix<f64>, predictor: &DMatrix<f64>) -> ByolOutput {
    let n = online.nrows() as f64;
    let pred = online * predictor.transpose();
    let (p_hat, p_norms) = normalize_rows(&pred);
    let (t_hat, _) = normalize_rows(target);
    let cos: f64 = p_hat.component_mul(&t_hat).sum();
    let value = 2.0 - 2.0 * cos / n;
    let g_hat = &t_hat * (-2.0 / n);
    let g_pred = normalize_rows_vjp(&p_hat, &p_norms, &g_hat);
    ByolOutput { value, grad_online: &g_pred * predictor, grad_predictor: g_pred.transpose() * online }
}

pub struct ByolPairOutput {
    pub value: f64,
    pub grad_a: DMatrix<f64>,
    pub grad_b: DMatrix<f64>,
    pub grad_predictor: DMatrix<f64>,
}

/// `(loss(Z_A -> T_B) + loss(Z_B -> T_A)) / 2`.
pub fn byol_symmetric(
    za: &DMatrix<f64>,
    zb: &DMatrix<f64>,
    ta: &DMatrix<f64>,
    tb: &DMatrix<f64>,
    predictor: &DMatrix<f64>,
) -> ByolPairOutput {
    let ab = byol_loss(za, tb, predictor);
    let ba = byol_loss(zb, ta, predictor);
    ByolPairOutput {
        value: 0.5 * (ab.value + ba.value),
        grad_a: ab.grad_online * 0.5,
        grad_b: ba.grad_online * 0.5,
        grad_predictor: (ab.grad_predictor + ba.grad_predictor) * 0.5,
    }
}

/// `target <- beta target + (1 - beta) online`.
pub fn ema_update(target: &mut (DMatrix<f64>, DVector<f64>), online: &Params, beta: f64) {
    target.0 = &target.0 * beta + &online.a * (1.0 - beta);
    target.1 = &target.1 * beta + &online.gamma * (1.0 - beta);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_rows_have_zero_loss() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let out = byol_loss(&z, &(&z * 2.0), &DMatrix::identity(2, 2));
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_rows_give_two() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let t = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, -2.0, 0.0]);
        let out = byol_loss(&z, &t, &DMatrix::identity(2, 2));
        assert!((out.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_momentum_freezes_target() {
        let mut target = (DMatrix::from_element(3, 2, 0.5), DVector::from_element(2, -1.0));
        let before = target.clone();
        let online = Params { a: DMatrix::from_element(3, 2, 9.0), gamma: DVector::from_element(2, 4.0), extra: None };
        for _ in 0..10 {
            ema_update(&mut target, &online, 1.0);
        }
        assert_eq!(target, before);
        ema_update(&mut target, &online, 0.5);
        assert_eq!(target.0[(0, 0)], 4.75);
    }
}
