//! Kernel PCA reconstruction objective in the Nyström parameterisation:
//!
//! `Tr(K)/n - (2/n) Tr(T) + (1/n) Tr(S T) + lambda Tr(S)`,
//! `S = A^T K_mm A`, `T = A^T M A`, `M = K_nm^T K_nm`.
//!
//! This is the mean squared distance between each Nyström feature `Phi_i`
//! and its projection onto the span of `A^T K_mm`; it attains
//! `Tr(K)/n - (1/n) sum_{i <= h} lambda_i` at the principal-component solution.

use nalgebra::DMatrix;

pub struct KpcaOutput {
    pub value: f64,
    pub grad_a: DMatrix<f64>,
}

/// `trace_k` is `sum_i k(x_i, x_i)` over the `n` rows of `k_nm`.
pub fn kpca_loss(trace_k: f64, k_nm: &DMatrix<f64>, k_mm: &DMatrix<f64>, a: &DMatrix<f64>, lambda: f64) -> KpcaOutput {
    let n = k_nm.nrows() as f64;
    let ka = k_nm * a;
    let ma = k_nm.transpose() * &ka;
    let kmm_a = k_mm * a;
    let s = a.transpose() * &kmm_a;
    let t = a.transpose() * &ma;
    let value = trace_k / n - 2.0 * t.trace() / n + (&s * &t).trace() / n + lambda * s.trace();
    let grad_a = (&ma * -4.0 + (&ma * &s + &kmm_a * &t) * 2.0) / n + kmm_a * (2.0 * lambda);
    KpcaOutput { value, grad_a }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, KernelSpec};
    use crate::linalg::{seeded_rng, sym_eigen_desc};
    use crate::model::pci_init;
    use rand::Rng;

    fn toy_gram(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded_rng(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        Kernel::new(&KernelSpec::Rbf { bandwidth: 0.8 }).unwrap().matrix(&x, &x, 64).unwrap()
    }

    #[test]
    fn zero_parameters_leave_the_trace() {
        let k = toy_gram(10, 1);
        let out = kpca_loss(k.trace(), &k, &k, &DMatrix::zeros(10, 3), 0.5);
        assert!((out.value - k.trace() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn pci_attains_spectral_optimum() {
        let n = 40;
        let k = toy_gram(n, 2);
        let (vals, _) = sym_eigen_desc(&k);
        for h in 1..=6 {
            let (_, a0) = pci_init(&k, h).unwrap();
            let out = kpca_loss(k.trace(), &k, &k, &a0, 0.0);
            let oracle = (k.trace() - vals.rows(0, h).sum()) / n as f64;
            assert!((out.value - oracle).abs() < 1e-8, "h={h}: {} vs {oracle}", out.value);
            assert!(out.grad_a.amax() < 1e-6);
        }
    }

    #[test]
    fn non_increasing_in_h() {
        let k = toy_gram(25, 3);
        let mut last = f64::INFINITY;
        for h in 1..=5 {
            let (_, a0) = pci_init(&k, h).unwrap();
            let v = kpca_loss(k.trace(), &k, &k, &a0, 0.0).value;
            assert!(v <= last + 1e-12);
            last = v;
        }
    }
}
