//! Preconditioned update directions for `A`.
//!
//! `general` solves `(K_mm + lambda_p I) P = grad_A` with a cached Cholesky
//! factor. `ggn` solves `(H + lambda_p I) p = vec(grad_A)` by conjugate
//! gradients, where `H` is the Gauss-Newton operator of the correlation or
//! contrastive cross-entropy loss. The gradient of `gamma` is never
//! preconditioned.

pub mod cg;
pub mod ggn;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Batch, LossKind, Params};
pub use cg::{cg_solve, CgStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrecondMode {
    #[default]
    None,
    General,
    Ggn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrecondSpec {
    pub mode: PrecondMode,
    pub damping: f64,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
}

impl Default for PrecondSpec {
    fn default() -> Self {
        Self { mode: PrecondMode::None, damping: 1e-3, cg_tol: 1e-6, cg_maxiter: 100 }
    }
}

impl PrecondSpec {
    pub fn validate(&self, loss: &LossKind) -> Result<()> {
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return Err(Error::validation("preconditioner damping must be positive"));
        }
        if self.cg_tol.is_nan() || self.cg_tol <= 0.0 {
            return Err(Error::validation("cg_tol must be positive"));
        }
        if self.mode == PrecondMode::Ggn && !matches!(loss, LossKind::BarlowTwins { .. } | LossKind::Simclr { .. }) {
            return Err(Error::validation(format!(
                "ggn preconditioning is available for barlow_twins and simclr, not {}",
                loss.name()
            )));
        }
        Ok(())
    }
}

fn factor(k_mm: &DMatrix<f64>, damping: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = k_mm.nrows();
    let shifted = k_mm + DMatrix::identity(n, n) * damping;
    if let Some(c) = shifted.clone().cholesky() {
        return Ok(c);
    }
    crate::linalg::with_jitter(&shifted)
        .cholesky()
        .ok_or_else(|| Error::Factorization("K_mm + damping I is not positive definite".into()))
}

/// `(K_mm + damping I)^{-1} grad_A`.
pub fn general_precondition(grad_a: &DMatrix<f64>, k_mm: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>> {
    Ok(factor(k_mm, damping)?.solve(grad_a))
}

/// Direction for one step; `stats` is present for the CG-based modes.
pub struct Direction {
    pub grad_a: DMatrix<f64>,
    pub stats: Option<CgStats>,
}

pub struct Preconditioner {
    spec: PrecondSpec,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl Preconditioner {
    pub fn new(spec: PrecondSpec, loss: &LossKind, k_mm: &DMatrix<f64>) -> Result<Self> {
        spec.validate(loss)?;
        let chol = match spec.mode {
            PrecondMode::General => Some(factor(k_mm, spec.damping)?),
            _ => None,
        };
        Ok(Self { spec, chol })
    }

    pub fn spec(&self) -> &PrecondSpec {
        &self.spec
    }

    pub fn direction(
        &self,
        loss: &LossKind,
        params: &Params,
        batch: &Batch,
        grad_a: DMatrix<f64>,
    ) -> Result<Direction> {
        match self.spec.mode {
            PrecondMode::None => Ok(Direction { grad_a, stats: None }),
            PrecondMode::General => {
                let chol = self.chol.as_ref().expect("factor cached for general mode");
                Ok(Direction { grad_a: chol.solve(&grad_a), stats: None })
            }
            PrecondMode::Ggn => {
                let (dir, stats) = match loss {
                    LossKind::BarlowTwins { lambda_reg } => {
                        let op = ggn::GgnBt::new(params, batch, *lambda_reg);
                        ggn_solve(|d| op.hvp(d), &grad_a, &self.spec)?
                    }
                    LossKind::Simclr { tau } => {
                        let op = ggn::GgnSimclr::new(params, batch, *tau);
                        ggn_solve(|d| op.hvp(d), &grad_a, &self.spec)?
                    }
                    other => {
                        return Err(Error::validation(format!("no Gauss-Newton operator for {}", other.name())));
                    }
                };
                Ok(Direction { grad_a: dir, stats: Some(stats) })
            }
        }
    }
}

/// Solves `(H + damping I) p = g`, falling back to `g` if CG does not converge.
pub fn ggn_solve(
    hvp: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    grad_a: &DMatrix<f64>,
    spec: &PrecondSpec,
) -> Result<(DMatrix<f64>, CgStats)> {
    let (rows, cols) = grad_a.shape();
    let apply = |v: &DVector<f64>| {
        let d = DMatrix::from_column_slice(rows, cols, v.as_slice());
        DVector::from_column_slice(hvp(&d).as_slice())
    };
    let b = DVector::from_column_slice(grad_a.as_slice());
    let (x, mut stats) = cg_solve(apply, &b, spec.damping, spec.cg_tol, spec.cg_maxiter)?;
    if stats.converged {
        Ok((DMatrix::from_column_slice(rows, cols, x.as_slice()), stats))
    } else {
        stats.fell_back = true;
        Ok((grad_a.clone(), stats))
    }
}
