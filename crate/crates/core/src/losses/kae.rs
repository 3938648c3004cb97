//! Kernel auto-encoder reconstruction term `(1/n) ||K_nm - Z B||_F^2` with
//! encoder `Z = K_nm A + 1 gamma^T` and linear decoder `B` (`h x mp`).

use nalgebra::{DMatrix, DVector};

pub struct KaeOutput {
    pub value: f64,
    pub grad_z: DMatrix<f64>,
    pub grad_decoder: DMatrix<f64>,
}

pub fn kae_reconstruction(
    k_nm: &DMatrix<f64>,
    a: &DMatrix<f64>,
    gamma: &DVector<f64>,
    decoder: &DMatrix<f64>,
) -> KaeOutput {
    let n = k_nm.nrows() as f64;
    let z = super::embed(k_nm, a, gamma);
    let resid = k_nm - &z * decoder;
    KaeOutput {
        value: resid.norm_squared() / n,
        grad_z: &resid * decoder.transpose() * (-2.0 / n),
        grad_decoder: z.transpose() * &resid * (-2.0 / n),
    }
}
