//! Kernelised self-supervised objectives with analytic gradients.
//!
//! Each loss is first differentiated with respect to the embeddings
//! `Z_v = K_v A + 1 gamma^T` of a batch, then chained to the parameters as
//! `dA = sum_v K_v^T dZ_v` and `dgamma = sum_v colsum(dZ_v)`. Pairwise losses
//! are averaged over all view pairs `(j, k)` with `j < k`. The Tikhonov term
//! `lambda_tik Tr(A^T K_mm A)` is added by [`Objective`].

pub mod barlow;
pub mod byol;
pub mod contrastive;
pub mod kae;
pub mod kpca;
pub mod simclr;
pub mod vicreg;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_row_vector, all_finite, col_sums};

fn d_bt_lambda() -> f64 {
    5e-3
}
fn d_vicreg_lambda() -> f64 {
    25.0
}
fn d_vicreg_mu() -> f64 {
    25.0
}
fn d_vicreg_nu() -> f64 {
    1.0
}
fn d_tau() -> f64 {
    0.5
}
fn d_momentum() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    BarlowTwins {
        #[serde(default = "d_bt_lambda")]
        lambda_reg: f64,
    },
    Vicreg {
        #[serde(default = "d_vicreg_lambda")]
        lambda: f64,
        #[serde(default = "d_vicreg_mu")]
        mu: f64,
        #[serde(default = "d_vicreg_nu")]
        nu: f64,
        /// Accepted for configuration compatibility; not used by the loss.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau: Option<f64>,
    },
    Simclr {
        #[serde(default = "d_tau")]
        tau: f64,
    },
    Byol {
        #[serde(default = "d_momentum")]
        momentum: f64,
    },
    SimpleContrastive,
    SpectralContrastive,
    Kpca,
    Kae,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::BarlowTwins { .. } => "barlow_twins",
            LossKind::Vicreg { .. } => "vicreg",
            LossKind::Simclr { .. } => "simclr",
            LossKind::Byol { .. } => "byol",
            LossKind::SimpleContrastive => "simple_contrastive",
            LossKind::SpectralContrastive => "spectral_contrastive",
            LossKind::Kpca => "kpca",
            LossKind::Kae => "kae",
        }
    }

    fn is_pairwise(&self) -> bool {
        !matches!(self, LossKind::Kpca | LossKind::Kae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    #[serde(flatten)]
    pub kind: LossKind,
    /// Weight of `Tr(A^T K_mm A)`; for KAE it also weights `||B||_F^2`.
    #[serde(default)]
    pub tikhonov: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind, tikhonov: f64) -> Self {
        Self { kind, tikhonov }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::validation(format!("loss coefficient {name} must be finite and nonnegative")))
            }
        };
        check("tikhonov", self.tikhonov)?;
        match &self.kind {
            LossKind::BarlowTwins { lambda_reg } => check("lambda_reg", *lambda_reg),
            LossKind::Vicreg { lambda, mu, nu, .. } => {
                check("lambda", *lambda)?;
                check("mu", *mu)?;
                check("nu", *nu)
            }
            LossKind::Simclr { tau } => {
                if *tau > 0.0 && tau.is_finite() {
                    Ok(())
                } else {
                    Err(Error::validation("simclr temperature tau must be positive"))
                }
            }
            LossKind::Byol { momentum } => {
                if (0.0..=1.0).contains(momentum) {
                    Ok(())
                } else {
                    Err(Error::validation("byol momentum must lie in [0, 1]"))
                }
            }
            _ => Ok(()),
        }
    }
}

/// Learnable parameters. `extra` is the BYOL predictor (`h x h`) or the KAE
/// decoder (`h x mp`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub a: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub extra: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad_a: DMatrix<f64>,
    pub grad_gamma: DVector<f64>,
    pub grad_extra: Option<DMatrix<f64>>,
}

impl LossValueGrad {
    pub fn check_finite(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        if !all_finite(&self.grad_a) {
            return Err(Error::NonFinite("grad_A".into()));
        }
        if self.grad_gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grad_gamma".into()));
        }
        if let Some(e) = &self.grad_extra {
            if !all_finite(e) {
                return Err(Error::NonFinite("grad of auxiliary parameters".into()));
            }
        }
        Ok(())
    }
}

/// Kernel rows of one minibatch against the landmarks, one matrix per view.
#[derive(Debug, Clone)]
pub struct Batch {
    pub k: Vec<DMatrix<f64>>,
    /// `k(x, x)` for every batch row, per view.
    pub k_diag: Vec<DVector<f64>>,
    /// In-batch negative index for each row (a derangement).
    pub negatives: Vec<usize>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.k.first().map_or(0, |k| k.nrows())
    }

    pub fn views(&self) -> usize {
        self.k.len()
    }
}

pub(crate) fn embed(k: &DMatrix<f64>, a: &DMatrix<f64>, gamma: &DVector<f64>) -> DMatrix<f64> {
    let mut z = k * a;
    add_row_vector(&mut z, gamma);
    z
}

pub(crate) fn view_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|j| (j + 1..p).map(move |k| (j, k))).collect()
}

/// Loss state: specification, the landmark Gram matrix and, for BYOL, the
/// moving-average target parameters.
#[derive(Debug, Clone)]
pub struct Objective {
    pub spec: LossSpec,
    pub k_mm: DMatrix<f64>,
    pub target: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl Objective {
    pub fn new(spec: LossSpec, k_mm: DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, k_mm, target: None })
    }

    /// Wraps model parameters, creating the loss-specific auxiliaries: the
    /// BYOL predictor starts at the identity and its target at `(A, gamma)`;
    /// the KAE decoder starts at `A^T K_mm`.
    pub fn init_params(&mut self, a: DMatrix<f64>, gamma: DVector<f64>) -> Params {
        let h = a.ncols();
        let extra = match self.spec.kind {
            LossKind::Byol { .. } => {
                self.target = Some((a.clone(), gamma.clone()));
                Some(DMatrix::identity(h, h))
            }
            LossKind::Kae => Some(a.transpose() * &self.k_mm),
            _ => None,
        };
        Params { a, gamma, extra }
    }

    /// Moving-average update of the BYOL target; a no-op for other losses.
    pub fn after_step(&mut self, params: &Params) {
        if let (LossKind::Byol { momentum }, Some(target)) = (&self.spec.kind, self.target.as_mut()) {
            byol::ema_update(target, params, *momentum);
        }
    }

    pub fn value_grad(&self, params: &Params, batch: &Batch) -> Result<LossValueGrad> {
        let p = batch.views();
        let n = batch.rows();
        let mp = params.a.nrows();
        let h = params.a.ncols();
        if p == 0 || batch.k.iter().any(|k| k.nrows() != n || k.ncols() != mp) {
            return Err(Error::validation("batch kernel blocks must share shape (rows, m * p)"));
        }
        if self.spec.kind.is_pairwise() && p < 2 {
            return Err(Error::validation(format!("{} needs at least two views", self.spec.kind.name())));
        }
        if n < 2 {
            return Err(Error::validation("a batch needs at least two rows"));
        }
        let mut grad_extra = params.extra.as_ref().map(|e| DMatrix::zeros(e.nrows(), e.ncols()));
        let (mut value, dz) = if self.spec.kind.is_pairwise() {
            let z: Vec<DMatrix<f64>> = batch.k.iter().map(|k| embed(k, &params.a, &params.gamma)).collect();
            let pairs = view_pairs(p);
            let w = 1.0 / pairs.len() as f64;
            let mut dz: Vec<DMatrix<f64>> = z.iter().map(|zv| DMatrix::zeros(zv.nrows(), h)).collect();
            let mut value = 0.0;
            for &(j, k) in &pairs {
                let (v, dj, dk) = match &self.spec.kind {
                    LossKind::BarlowTwins { lambda_reg } => barlow::bt_loss(&z[j], &z[k], *lambda_reg),
                    LossKind::Vicreg { lambda, mu, nu, .. } => vicreg::vicreg_loss(&z[j], &z[k], *lambda, *mu, *nu),
                    LossKind::Simclr { tau } => simclr::simclr_loss(&z[j], &z[k], *tau),
                    LossKind::SimpleContrastive => {
                        contrastive::simple_contrastive_loss(&z[j], &z[k], &batch.negatives)?
                    }
                    LossKind::SpectralContrastive => {
                        contrastive::spectral_contrastive_loss(&z[j], &z[k], &batch.negatives)?
                    }
                    LossKind::Byol { .. } => {
                        let (ta, tg) =
                            self.target.as_ref().ok_or_else(|| Error::validation("byol target not initialised"))?;
                        let pred = params.extra.as_ref().ok_or_else(|| Error::validation("byol predictor missing"))?;
                        let tj = embed(&batch.k[j], ta, tg);
                        let tk = embed(&batch.k[k], ta, tg);
                        let out = byol::byol_symmetric(&z[j], &z[k], &tj, &tk, pred);
                        if let Some(ge) = grad_extra.as_mut() {
                            *ge += out.grad_predictor * w;
                        }
                        (out.value, out.grad_a, out.grad_b)
                    }
                    LossKind::Kpca | LossKind::Kae => unreachable!(),
                };
                value += w * v;
                dz[j] += dj * w;
                dz[k] += dk * w;
            }
            (value, dz)
        } else {
            let stacked = stack_rows(&batch.k);
            let diag: f64 = batch.k_diag.iter().map(|d| d.sum()).sum();
            match self.spec.kind {
                LossKind::Kpca => {
                    let out = kpca::kpca_loss(diag, &stacked, &self.k_mm, &params.a, 0.0);
                    let g = LossValueGrad {
                        value: out.value + self.tikhonov_value(params),
                        grad_a: out.grad_a + self.tikhonov_grad(params),
                        grad_gamma: DVector::zeros(h),
                        grad_extra: None,
                    };
                    g.check_finite()?;
                    return Ok(g);
                }
                LossKind::Kae => {
                    let dec = params.extra.as_ref().ok_or_else(|| Error::validation("kae decoder missing"))?;
                    let out = kae::kae_reconstruction(&stacked, &params.a, &params.gamma, dec);
                    if let Some(ge) = grad_extra.as_mut() {
                        *ge += &out.grad_decoder + dec * (2.0 * self.spec.tikhonov);
                    }
                    let value = out.value + self.spec.tikhonov * dec.norm_squared();
                    (value, split_rows(&out.grad_z, p))
                }
                _ => unreachable!(),
            }
        };
        let mut grad_a = DMatrix::zeros(mp, h);
        let mut grad_gamma = DVector::zeros(h);
        for (k, d) in batch.k.iter().zip(&dz) {
            grad_a += k.transpose() * d;
            grad_gamma += col_sums(d);
        }
        value += self.tikhonov_value(params);
        grad_a += self.tikhonov_grad(params);
        let out = LossValueGrad { value, grad_a, grad_gamma, grad_extra };
        out.check_finite()?;
        Ok(out)
    }

    fn tikhonov_value(&self, params: &Params) -> f64 {
        if self.spec.tikhonov == 0.0 {
            0.0
        } else {
            self.spec.tikhonov * crate::model::tikhonov(&params.a, &self.k_mm)
        }
    }

    fn tikhonov_grad(&self, params: &Params) -> DMatrix<f64> {
        if self.spec.tikhonov == 0.0 {
            DMatrix::zeros(params.a.nrows(), params.a.ncols())
        } else {
            &self.k_mm * &params.a * (2.0 * self.spec.tikhonov)
        }
    }
}

pub(crate) fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

fn split_rows(m: &DMatrix<f64>, p: usize) -> Vec<DMatrix<f64>> {
    let n = m.nrows() / p;
    (0..p).map(|v| m.rows(v * n, n).into_owned()).collect()
}

/// Added to squared norms before the square root when normalising.
pub(crate) const NORM_EPS: f64 = 1e-12;

#[cfg(test)]
mod tests;
