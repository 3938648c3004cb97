//! Minibatch training loop: shuffled batches, loss and gradient, optional
//! preconditioning of the `A` gradient, Adam update, early stopping on the
//! epoch-mean training loss.

pub mod adam;
pub mod schedule;
pub mod search;

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluate::{spectrum, SpectrumReport};
use crate::linalg::seeded_rng;
use crate::losses::contrastive::derangement;
use crate::losses::{Batch, LossKind, LossSpec, Objective, Params};
use crate::model::NystromModel;
use crate::precondition::{PrecondSpec, Preconditioner};
pub use adam::{adam_step, AdamState};
pub use schedule::lr_at;
pub use search::{random_search, SearchOutcome, SearchSpace, TrialRecord};

/// Consecutive non-finite batches tolerated before training aborts.
pub const MAX_BAD_BATCHES: usize = 3;

fn d_lr() -> f64 {
    1e-2
}
fn d_lr_min() -> f64 {
    1e-5
}
fn d_warmup() -> f64 {
    2.0
}
fn d_epochs() -> usize {
    50
}
fn d_patience() -> usize {
    10
}
fn d_batch() -> usize {
    256
}
fn d_anneal() -> f64 {
    50.0
}
fn d_loss() -> LossSpec {
    LossSpec::new(LossKind::BarlowTwins { lambda_reg: 5e-3 }, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub lr_init: f64,
    #[serde(default = "d_lr_min")]
    pub lr_min: f64,
    #[serde(default = "d_warmup")]
    pub warmup_epochs: f64,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_anneal")]
    pub anneal_epochs: f64,
    #[serde(default = "d_loss")]
    pub loss: LossSpec,
    #[serde(default)]
    pub precond: PrecondSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: d_lr(),
            lr_min: d_lr_min(),
            warmup_epochs: d_warmup(),
            max_epochs: d_epochs(),
            patience: d_patience(),
            batch_size: d_batch(),
            seed: 0,
            weight_decay: 0.0,
            anneal_epochs: d_anneal(),
            loss: d_loss(),
            precond: PrecondSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) {
            return Err(Error::validation("lr_init must be finite and nonnegative"));
        }
        if self.lr_min.is_nan() || self.lr_min <= 0.0 {
            return Err(Error::validation("lr_min must be positive"));
        }
        if self.lr_init > 0.0 && self.lr_init <= self.lr_min {
            return Err(Error::validation("lr_init must exceed lr_min"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::validation("patience must not exceed max_epochs"));
        }
        if self.batch_size < 2 {
            return Err(Error::validation("batch_size must be at least 2"));
        }
        if !(self.warmup_epochs >= 0.0 && self.anneal_epochs >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::validation("warm-up, annealing horizon and weight decay must be nonnegative"));
        }
        self.loss.validate()?;
        self.precond.validate(&self.loss.kind)
    }

    pub fn lr_at(&self, epoch: f64) -> f64 {
        lr_at(epoch, self.lr_init, self.lr_min, self.warmup_epochs, self.anneal_epochs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub cg_iters: usize,
    pub cg_fallbacks: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoEpochs,
    MaxEpochs,
    EarlyStopped,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Mean loss over the first epoch's batches at the initial parameters.
    pub initial_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_loss: Option<f64>,
    pub stop_reason: StopReason,
    pub spectrum: Option<SpectrumReport>,
}

impl TrainReport {
    fn empty(stop_reason: StopReason) -> Self {
        Self { epochs: Vec::new(), initial_loss: None, best_epoch: None, best_loss: None, stop_reason, spectrum: None }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// CSV with columns `epoch,loss,lr,cg_iters,cg_fallbacks,seconds`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "lr", "cg_iters", "cg_fallbacks", "seconds"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                format!("{:e}", e.loss),
                format!("{:e}", e.lr),
                e.cg_iters.to_string(),
                e.cg_fallbacks.to_string(),
                format!("{:.6}", e.seconds),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Kernel rows of every sample against the landmarks, per view.
#[derive(Debug, Clone)]
pub struct KernelCache {
    pub k: Vec<DMatrix<f64>>,
    pub diag: Vec<DVector<f64>>,
}

impl KernelCache {
    pub fn new(model: &NystromModel, ds: &Dataset) -> Result<Self> {
        if ds.p() != model.p() {
            return Err(Error::DimensionMismatch { expected: model.p(), got: ds.p() });
        }
        let k = ds.views().iter().map(|v| model.k_nm(v)).collect::<Result<Vec<_>>>()?;
        let diag =
            ds.views().iter().map(|v| model.kernel().diagonal(v).map(DVector::from_vec)).collect::<Result<Vec<_>>>()?;
        Ok(Self { k, diag })
    }

    pub fn batch(&self, rows: &[usize], negatives: Vec<usize>) -> Batch {
        Batch {
            k: self.k.iter().map(|k| crate::linalg::select_rows(k, rows)).collect(),
            k_diag: self.diag.iter().map(|d| DVector::from_iterator(rows.len(), rows.iter().map(|&r| d[r]))).collect(),
            negatives,
        }
    }
}

fn epoch_batches(n: usize, batch_size: usize, rng: &mut impl rand::Rng) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).filter(|c| c.len() >= 2).map(|c| (c.to_vec(), derangement(c.len(), rng))).collect()
}

/// Trains `model` on all rows and views of `ds`. Returns the parameters of
/// the epoch with the lowest epoch-mean loss.
pub fn train(model: &NystromModel, ds: &Dataset, cfg: &TrainConfig) -> Result<(NystromModel, TrainReport)> {
    cfg.validate()?;
    if cfg.max_epochs == 0 {
        return Ok((model.clone(), TrainReport::empty(StopReason::NoEpochs)));
    }
    if ds.n() < 2 {
        return Err(Error::validation("training needs at least two samples"));
    }
    let cache = KernelCache::new(model, ds)?;
    train_cached(model, &cache, cfg)
}

pub fn train_cached(
    model: &NystromModel,
    cache: &KernelCache,
    cfg: &TrainConfig,
) -> Result<(NystromModel, TrainReport)> {
    cfg.validate()?;
    if cfg.max_epochs == 0 {
        return Ok((model.clone(), TrainReport::empty(StopReason::NoEpochs)));
    }
    let n = cache.k[0].nrows();
    let k_mm = model.k_mm()?;
    let precond = Preconditioner::new(cfg.precond, &cfg.loss.kind, &k_mm)?;
    let mut objective = Objective::new(cfg.loss.clone(), k_mm)?;
    let mut params = objective.init_params(model.a.clone(), model.gamma.clone());
    let sizes: Vec<usize> = tensors(&params).iter().map(|t| t.len()).collect();
    let mut adam = AdamState::new(&sizes);
    let mut rng = seeded_rng(cfg.seed);

    let mut report = TrainReport::empty(StopReason::MaxEpochs);
    let mut best: Option<(f64, Params)> = None;
    let mut since_best = 0;
    let mut bad_streak = 0;
    let mut batches = epoch_batches(n, cfg.batch_size, &mut rng);
    if batches.is_empty() {
        return Err(Error::validation("no batch with at least two rows"));
    }
    let mut initial = 0.0;
    for (rows, neg) in &batches {
        initial += objective.value_grad(&params, &cache.batch(rows, neg.clone()))?.value;
    }
    report.initial_loss = Some(initial / batches.len() as f64);

    for epoch in 0..cfg.max_epochs {
        if epoch > 0 {
            batches = epoch_batches(n, cfg.batch_size, &mut rng);
        }
        let start = Instant::now();
        let nb = batches.len() as f64;
        let (mut loss_sum, mut counted, mut cg_iters, mut cg_fallbacks) = (0.0, 0usize, 0usize, 0usize);
        let mut last_lr = 0.0;
        for (b, (rows, neg)) in batches.iter().enumerate() {
            let lr = cfg.lr_at(epoch as f64 + b as f64 / nb);
            last_lr = lr;
            let batch = cache.batch(rows, neg.clone());
            let vg = match objective.value_grad(&params, &batch) {
                Ok(vg) => vg,
                Err(Error::NonFinite(what)) => {
                    bad_streak += 1;
                    if bad_streak >= MAX_BAD_BATCHES {
                        report.stop_reason = StopReason::NonFinite;
                        return Err(Error::TrainingAborted {
                            reason: format!("{bad_streak} consecutive batches with non-finite {what} in epoch {epoch}"),
                            report: Box::new(report),
                        });
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            bad_streak = 0;
            loss_sum += vg.value;
            counted += 1;
            let dir = precond.direction(&cfg.loss.kind, &params, &batch, vg.grad_a)?;
            if let Some(s) = dir.stats {
                cg_iters += s.iterations;
                cg_fallbacks += s.fell_back as usize;
            }
            let extra_grad = vg.grad_extra.unwrap_or_else(|| DMatrix::zeros(0, 0));
            let grads: Vec<&[f64]> = vec![dir.grad_a.as_slice(), vg.grad_gamma.as_slice(), extra_grad.as_slice()];
            let mut ts = tensors_mut(&mut params);
            adam_step(&mut ts, &grads[..sizes.len()], &["A", "gamma", "auxiliary"], &mut adam, lr, cfg.weight_decay)?;
            objective.after_step(&params);
        }
        let loss = if counted > 0 { loss_sum / counted as f64 } else { f64::NAN };
        report.epochs.push(EpochRecord {
            epoch,
            loss,
            lr: last_lr,
            cg_iters,
            cg_fallbacks,
            seconds: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, params.clone()));
            report.best_epoch = Some(epoch);
            report.best_loss = Some(loss);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                report.stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }
    let best_params = best.map(|(_, p)| p).unwrap_or(params);
    let mut out = model.clone();
    out.a = best_params.a;
    out.gamma = best_params.gamma;
    report.spectrum = Some(spectrum(&out.a));
    Ok((out, report))
}

fn tensors(p: &Params) -> Vec<&[f64]> {
    let mut v = vec![p.a.as_slice(), p.gamma.as_slice()];
    if let Some(e) = &p.extra {
        v.push(e.as_slice());
    }
    v
}

fn tensors_mut(p: &mut Params) -> Vec<&mut [f64]> {
    let mut v: Vec<&mut [f64]> = vec![p.a.as_mut_slice(), p.gamma.as_mut_slice()];
    if let Some(e) = p.extra.as_mut() {
        v.push(e.as_mut_slice());
    }
    v
}
