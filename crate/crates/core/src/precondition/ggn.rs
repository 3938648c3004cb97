//! Matrix-free generalised Gauss-Newton operators over `vec(A)`.
//!
//! Correlation loss: the residual is `r = W (.) (C - I)` so that the loss is
//! `||r||^2`, and the operator is `J^T J`. Contrastive cross-entropy: the
//! outputs are the masked logits `S` and the operator is `J^T Q J` with
//! `Q_k = (diag p_k - p_k p_k^T) / 2n` for each softmax row. Products with `J`
//! and `J^T` reuse the forward and backward passes of the losses. With more
//! than two views the operators average over view pairs.

use nalgebra::{DMatrix, DVector};

use crate::losses::barlow::{residual_weights, BtForward};
use crate::losses::simclr::SimclrForward;
use crate::losses::{embed, view_pairs, Batch, Params};

fn tangents(batch: &Batch, d: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    batch.k.iter().map(|k| k * d).collect()
}

fn pull_back(batch: &Batch, dz: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = batch.k[0].transpose() * &dz[0];
    for (k, g) in batch.k.iter().zip(dz).skip(1) {
        out += k.transpose() * g;
    }
    out
}

pub struct GgnBt<'a> {
    batch: &'a Batch,
    pairs: Vec<(usize, usize, BtForward)>,
    weights: DMatrix<f64>,
    scale: f64,
}

impl<'a> GgnBt<'a> {
    pub fn new(params: &Params, batch: &'a Batch, lambda_reg: f64) -> Self {
        let z: Vec<DMatrix<f64>> = batch.k.iter().map(|k| embed(k, &params.a, &params.gamma)).collect();
        let pairs: Vec<_> =
            view_pairs(batch.views()).into_iter().map(|(j, k)| (j, k, BtForward::new(&z[j], &z[k]))).collect();
        let scale = 1.0 / (pairs.len() as f64).sqrt();
        Self { batch, pairs, weights: residual_weights(params.a.ncols(), lambda_reg), scale }
    }

    /// Residual tangent per view pair.
    pub fn jvp(&self, d: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let dz = tangents(self.batch, d);
        self.pairs
            .iter()
            .map(|(j, k, fwd)| self.weights.component_mul(&fwd.jvp(&dz[*j], &dz[*k])) * self.scale)
            .collect()
    }

    pub fn vjp(&self, u: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut dz: Vec<DMatrix<f64>> =
            self.batch.k.iter().map(|k| DMatrix::zeros(k.nrows(), self.weights.nrows())).collect();
        for ((j, k, fwd), uk) in self.pairs.iter().zip(u) {
            let (ga, gb) = fwd.vjp(&(self.weights.component_mul(uk) * self.scale));
            dz[*j] += ga;
            dz[*k] += gb;
        }
        pull_back(self.batch, &dz)
    }

    pub fn hvp(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        self.vjp(&self.jvp(d))
    }
}

/// Stacked residual `vec(W (.) (C - I))` over view pairs, scaled like the operator.
pub fn bt_residual(params: &Params, batch: &Batch, lambda_reg: f64) -> DVector<f64> {
    let op = GgnBt::new(params, batch, lambda_reg);
    let h = params.a.ncols();
    let mut out = Vec::new();
    for (_, _, fwd) in &op.pairs {
        let r = op.weights.component_mul(&(&fwd.c - DMatrix::identity(h, h))) * op.scale;
        out.extend(r.iter());
    }
    DVector::from_vec(out)
}

pub struct GgnSimclr<'a> {
    batch: &'a Batch,
    pairs: Vec<(usize, usize, SimclrForward)>,
    scale: f64,
}

impl<'a> GgnSimclr<'a> {
    pub fn new(params: &Params, batch: &'a Batch, tau: f64) -> Self {
        let z: Vec<DMatrix<f64>> = batch.k.iter().map(|k| embed(k, &params.a, &params.gamma)).collect();
        let pairs: Vec<_> =
            view_pairs(batch.views()).into_iter().map(|(j, k)| (j, k, SimclrForward::new(&z[j], &z[k], tau))).collect();
        let scale = 1.0 / pairs.len() as f64;
        Self { batch, pairs, scale }
    }

    pub fn forwards(&self) -> impl Iterator<Item = &SimclrForward> {
        self.pairs.iter().map(|(_, _, f)| f)
    }

    /// Logit tangent per view pair.
    pub fn jvp(&self, d: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let dz = tangents(self.batch, d);
        self.pairs.iter().map(|(j, k, fwd)| fwd.jvp(&dz[*j], &dz[*k])).collect()
    }

    pub fn apply_q(&self, v: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        self.pairs.iter().zip(v).map(|((_, _, fwd), vk)| fwd.apply_q(vk) * self.scale).collect()
    }

    pub fn vjp(&self, u: &[DMatrix<f64>]) -> DMatrix<f64> {
        let h = self.pairs[0].2.u.ncols();
        let mut dz: Vec<DMatrix<f64>> = self.batch.k.iter().map(|k| DMatrix::zeros(k.nrows(), h)).collect();
        for ((j, k, fwd), uk) in self.pairs.iter().zip(u) {
            let (ga, gb) = fwd.vjp(uk);
            dz[*j] += ga;
            dz[*k] += gb;
        }
        pull_back(self.batch, &dz)
    }

    pub fn hvp(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        self.vjp(&self.apply_q(&self.jvp(d)))
    }
}

/// Stacked logits `U U^T / tau` (diagonal zeroed) over view pairs.
pub fn simclr_logits(params: &Params, batch: &Batch, tau: f64) -> DVector<f64> {
    let z: Vec<DMatrix<f64>> = batch.k.iter().map(|k| embed(k, &params.a, &params.gamma)).collect();
    let mut out = Vec::new();
    for (j, k) in view_pairs(batch.views()) {
        let fwd = SimclrForward::new(&z[j], &z[k], tau);
        let mut s = &fwd.u * fwd.u.transpose() / tau;
        s.fill_diagonal(0.0);
        out.extend(s.iter());
    }
    DVector::from_vec(out)
}
