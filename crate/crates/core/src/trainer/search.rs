//! Seeded random search over loss and optimiser hyperparameters.
//!
//! `lambda` maps to the loss's main coefficient (`lambda_reg` for the
//! correlation loss, the invariance weight for VICReg, the Tikhonov weight
//! otherwise) and `tau` to the SimCLR temperature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::linalg::seeded_rng;
use crate::losses::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub low: f64,
    pub high: f64,
    #[serde(default = "default_log")]
    pub log: bool,
}

fn default_log() -> bool {
    true
}

impl Range {
    pub fn log_uniform(low: f64, high: f64) -> Self {
        Self { low, high, log: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.low.is_nan() || self.high.is_nan() || self.low > self.high || (self.log && self.low <= 0.0) {
            return Err(Error::validation("search range needs low <= high (and low > 0 when log-scaled)"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.low == self.high {
            return self.low;
        }
        if self.log {
            rng.random_range(self.low.ln()..self.high.ln()).exp()
        } else {
            rng.random_range(self.low..self.high)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lambda: Range,
    pub tau: Range,
    pub lr: Range,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            lambda: Range::log_uniform(1e-5, 100.0),
            tau: Range::log_uniform(1e-3, 100.0),
            lr: Range::log_uniform(1e-4, 1e-1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub lambda: f64,
    pub tau: f64,
    pub lr: f64,
    pub score: f64,
}

pub struct SearchOutcome {
    pub best: TrainConfig,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord>,
}

/// Applies sampled values to a copy of `base`.
pub fn apply_sample(base: &TrainConfig, lambda: f64, tau: f64, lr: f64) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.lr_init = lr;
    match &mut cfg.loss.kind {
        LossKind::BarlowTwins { lambda_reg } => *lambda_reg = lambda,
        LossKind::Vicreg { lambda: l, .. } => *l = lambda,
        LossKind::Simclr { tau: t } => {
            *t = tau;
            cfg.loss.tikhonov = lambda;
        }
        _ => cfg.loss.tikhonov = lambda,
    }
    cfg
}

/// Draws `trials` configurations from `space`. The trajectory depends only
/// on `seed`, so trials may be evaluated in any order or concurrently.
pub fn sample_trials(
    space: &SearchSpace,
    base: &TrainConfig,
    trials: usize,
    seed: u64,
) -> Result<Vec<(TrialRecord, TrainConfig)>> {
    if trials == 0 {
        return Err(Error::validation("random search needs at least one trial"));
    }
    space.lambda.validate()?;
    space.tau.validate()?;
    space.lr.validate()?;
    let mut rng = seeded_rng(seed);
    Ok((0..trials)
        .map(|trial| {
            let lambda = space.lambda.sample(&mut rng);
            let tau = space.tau.sample(&mut rng);
            let lr = space.lr.sample(&mut rng);
            let mut cfg = apply_sample(base, lambda, tau, lr);
            if cfg.lr_init <= cfg.lr_min {
                cfg.lr_min = cfg.lr_init / 10.0;
            }
            (TrialRecord { trial, lambda, tau, lr, score: f64::NAN }, cfg)
        })
        .collect())
}

/// Maps an evaluation result to a trial score: failed or non-finite runs
/// score `-inf`, other errors propagate.
pub fn trial_score(result: Result<f64>) -> Result<f64> {
    match result {
        Ok(s) if s.is_finite() => Ok(s),
        Ok(_) | Err(Error::TrainingAborted { .. }) | Err(Error::NonFinite(_)) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Highest score wins; ties keep the earliest trial.
pub fn pick_best(samples: Vec<(TrialRecord, TrainConfig)>, scores: &[f64]) -> SearchOutcome {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let mut trials = Vec::with_capacity(samples.len());
    let mut best_cfg = None;
    for ((mut rec, cfg), &score) in samples.into_iter().zip(scores) {
        rec.score = score;
        if rec.trial == best {
            best_cfg = Some(cfg);
        }
        trials.push(rec);
    }
    SearchOutcome { best: best_cfg.expect("at least one trial"), best_trial: best, trials }
}

/// Runs `trials` sampled configurations through `evaluate` (higher is
/// better) and returns the best.
pub fn random_search(
    space: &SearchSpace,
    base: &TrainConfig,
    trials: usize,
    seed: u64,
    mut evaluate: impl FnMut(&TrainConfig) -> Result<f64>,
) -> Result<SearchOutcome> {
    let samples = sample_trials(space, base, trials, seed)?;
    let scores = samples.iter().map(|(_, cfg)| trial_score(evaluate(cfg))).collect::<Result<Vec<f64>>>()?;
    Ok(pick_best(samples, &scores))
}

/// Whether model selection should use balanced accuracy: true when the
/// largest class is more than three times the smallest.
pub fn prefers_balanced_accuracy(labels: &[usize]) -> bool {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let present: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    match (present.iter().max(), present.iter().min()) {
        (Some(&hi), Some(&lo)) => hi as f64 > 3.0 * lo as f64,
        _ => false,
    }
}
