//! Landmark selection: uniform, kmeans++ seeding, and sampling by
//! approximate ridge leverage scores.
//!
//! Leverage scores `l_j = (K (K + lambda n I)^{-1})_jj` are estimated with a
//! Rademacher sketch: for sketch columns `pi_1..pi_s`, solve
//! `(K + lambda n I) z_k = pi_k` by conjugate gradients and average
//! `pi_k * (K z_k)` elementwise.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::seeded_rng;
use crate::precondition::cg::cg_solve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkMethod {
    Uniform,
    Kmeanspp,
    Leverage,
}

impl LandmarkMethod {
    pub fn tag(self) -> u8 {
        match self {
            LandmarkMethod::Uniform => 0,
            LandmarkMethod::Kmeanspp => 1,
            LandmarkMethod::Leverage => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LandmarkMethod::Uniform),
            1 => Some(LandmarkMethod::Kmeanspp),
            2 => Some(LandmarkMethod::Leverage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub indices: Vec<usize>,
    pub method: LandmarkMethod,
    /// Estimated leverage scores over all candidate samples (leverage only).
    pub scores: Option<Vec<f64>>,
}

impl LandmarkSet {
    pub fn new(indices: Vec<usize>, method: LandmarkMethod, scores: Option<Vec<f64>>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::validation("a landmark set needs at least one index"));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("landmark indices must be distinct"));
        }
        if let Some(s) = &scores {
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::validation("leverage scores must be finite and nonnegative"));
            }
        }
        Ok(Self { indices, method, scores })
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeverageConfig {
    pub lambda: f64,
    pub sketch_size: usize,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
}

impl Default for LeverageConfig {
    fn default() -> Self {
        Self { lambda: 1e-3, sketch_size: 50, cg_tol: 1e-8, cg_maxiter: 1000 }
    }
}

fn check_m(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::validation(format!("need 1 <= m <= n, got m = {m}, n = {n}")));
    }
    Ok(())
}

pub fn select_uniform(n: usize, m: usize, seed: u64) -> Result<LandmarkSet> {
    check_m(n, m)?;
    let mut rng = seeded_rng(seed);
    let indices = index::sample(&mut rng, n, m).into_vec();
    LandmarkSet::new(indices, LandmarkMethod::Uniform, None)
}

/// kmeans++ seeding on the rows of `x`: first pick uniform, later picks with
/// probability proportional to the squared distance to the nearest chosen row.
/// When every remaining distance is zero the pick is uniform over unchosen rows.
pub fn select_kmeanspp(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<LandmarkSet> {
    let n = x.nrows();
    check_m(n, m)?;
    if !crate::linalg::all_finite(x) {
        return Err(Error::NonFinite("kmeans++ input rows".into()));
    }
    let mut rng = seeded_rng(seed);
    let xt = x.transpose();
    let mut chosen = vec![false; n];
    let mut indices = Vec::with_capacity(m);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    indices.push(first);
    let mut dist = vec![f64::INFINITY; n];
    while indices.len() < m {
        let last = xt.column(*indices.last().unwrap());
        for (i, d) in dist.iter_mut().enumerate() {
            let d2 = (xt.column(i) - last).norm_squared();
            if d2 < *d {
                *d = d2;
            }
        }
        let weights: Vec<f64> = dist.iter().zip(&chosen).map(|(&d, &c)| if c { 0.0 } else { d }).collect();
        let next = match WeightedIndex::new(&weights) {
            Ok(w) => w.sample(&mut rng),
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen[next] = true;
        indices.push(next);
    }
    LandmarkSet::new(indices, LandmarkMethod::Kmeanspp, None)
}

/// Unclamped sketch estimate of the leverage-score diagonal.
pub fn hutchinson_leverage<F>(
    k_apply: F,
    n: usize,
    lambda: f64,
    sketch_size: usize,
    seed: u64,
    cg_tol: f64,
    cg_maxiter: usize,
) -> Result<Vec<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    if sketch_size == 0 {
        return Err(Error::validation("sketch size must be at least 1"));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::validation("leverage-score lambda must be positive"));
    }
    let mut rng = seeded_rng(seed);
    let probes: Vec<DVector<f64>> =
        (0..sketch_size).map(|_| DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })).collect();
    let damping = lambda * n as f64;
    let columns: Vec<Result<DVector<f64>>> = probes
        .par_iter()
        .map(|pi| {
            let (z, stats) = cg_solve(&k_apply, pi, damping, cg_tol, cg_maxiter)?;
            if !stats.converged {
                return Err(Error::CgNotConverged { residual: stats.residual, iterations: stats.iterations });
            }
            Ok(k_apply(&z).component_mul(pi))
        })
        .collect();
    let mut acc = DVector::zeros(n);
    for c in columns {
        acc += c?;
    }
    Ok((acc / sketch_size as f64).iter().copied().collect())
}

/// Sketch estimate of ridge leverage scores, clamped to `[0, 1]`.
pub fn approx_leverage_scores<F>(
    k_apply: F,
    n: usize,
    lambda: f64,
    sketch_size: usize,
    seed: u64,
    cg_tol: f64,
    cg_maxiter: usize,
) -> Result<Vec<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    let raw = hutchinson_leverage(k_apply, n, lambda, sketch_size, seed, cg_tol, cg_maxiter)?;
    Ok(raw.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Exact diagonal of `K (K + lambda n I)^{-1}` by a dense solve. Intended as a
/// reference for small `n`.
pub fn exact_leverage_scores(k: &DMatrix<f64>, lambda: f64) -> Result<Vec<f64>> {
    let n = k.nrows();
    let shifted = k + DMatrix::identity(n, n) * (lambda * n as f64);
    let chol =
        shifted.cholesky().ok_or_else(|| Error::Factorization("K + lambda n I is not positive definite".into()))?;
    let m = chol.solve(k);
    Ok(m.diagonal().iter().copied().collect())
}

/// CSV `index,score`.
pub fn write_scores_csv(scores: &[f64], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "score"])?;
    for (i, s) in scores.iter().enumerate() {
        out.write_record([i.to_string(), format!("{s:e}")])?;
    }
    out.flush()?;
    Ok(())
}

/// Draws `m` distinct indices with probability proportional to `scores`,
/// renormalising over the remaining indices after each draw.
pub fn select_leverage(scores: &[f64], m: usize, seed: u64) -> Result<LandmarkSet> {
    let n = scores.len();
    check_m(n, m)?;
    if scores.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::validation("leverage scores must be finite and nonnegative"));
    }
    let mut rng = seeded_rng(seed);
    let mut weights = scores.to_vec();
    let mut indices = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    while indices.len() < m {
        let pick = match WeightedIndex::new(&weights) {
            Ok(w) => w.sample(&mut rng),
            Err(_) => {
                let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        taken[pick] = true;
        weights[pick] = 0.0;
        indices.push(pick);
    }
    LandmarkSet::new(indices, LandmarkMethod::Leverage, Some(scores.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{Kernel, KernelSpec};

    #[test]
    fn uniform_examples() {
        let mut all = select_uniform(7, 7, 1).unwrap().indices;
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        let one = select_uniform(10, 1, 3).unwrap();
        assert!(one.indices[0] < 10);
        assert_eq!(select_uniform(50, 5, 9).unwrap(), select_uniform(50, 5, 9).unwrap());
        assert!(select_uniform(3, 4, 0).is_err());
    }

    #[test]
    fn kmeanspp_full_selection_is_a_permutation() {
        let mut rng = seeded_rng(2);
        let x = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
        let mut idx = select_kmeanspp(&x, 12, 5).unwrap().indices;
        idx.sort();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn kmeanspp_identical_points_fall_back_to_uniform() {
        let x = DMatrix::from_element(6, 3, 1.5);
        let set = select_kmeanspp(&x, 4, 0).unwrap();
        assert_eq!(set.m(), 4);
        let mut s = set.indices.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn kmeanspp_second_pick_crosses_far_clusters() {
        let mut rng = seeded_rng(0);
        let mut rows = Vec::new();
        for c in [0.0, 100.0] {
            for _ in 0..20 {
                rows.push(c + rng.random_range(-0.5..0.5));
                rows.push(rng.random_range(-0.5..0.5));
            }
        }
        let x = DMatrix::from_row_slice(40, 2, &rows);
        let crossed = (0..1000)
            .filter(|&seed| {
                let idx = select_kmeanspp(&x, 2, seed).unwrap().indices;
                (idx[0] < 20) != (idx[1] < 20)
            })
            .count();
        assert!(crossed as f64 / 1000.0 >= 0.99, "{crossed}");
    }

    #[test]
    fn identity_gram_closed_form() {
        let n = 40;
        let lambda = 0.05;
        let scores = approx_leverage_scores(|v| v.clone(), n, lambda, 500, 1, 1e-12, 100).unwrap();
        let exact = 1.0 / (1.0 + lambda * n as f64);
        let mean = scores.iter().sum::<f64>() / n as f64;
        assert!((mean - exact).abs() / exact < 0.05);
        for s in &scores {
            assert!((s - exact).abs() / exact < 0.05);
        }
    }

    #[test]
    fn huge_lambda_drives_scores_to_zero() {
        let mut rng = seeded_rng(3);
        let x = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
        let k = Kernel::new(&KernelSpec::Rbf { bandwidth: 1.0 }).unwrap().matrix(&x, &x, 64).unwrap();
        let scores = approx_leverage_scores(|v| &k * v, 30, 1e8, 20, 0, 1e-12, 100).unwrap();
        assert!(scores.iter().all(|s| *s < 1e-6));
    }

    #[test]
    fn select_leverage_examples() {
        let one_hot = [0.0, 0.0, 3.0, 0.0];
        for seed in 0..20 {
            assert_eq!(select_leverage(&one_hot, 1, seed).unwrap().indices, vec![2]);
        }
        let mut all = select_leverage(&[0.2, 0.5, 0.1], 3, 0).unwrap().indices;
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        let zeros = select_leverage(&[0.0; 5], 2, 0).unwrap();
        assert_eq!(zeros.m(), 2);
    }

    #[test]
    fn uniform_scores_match_uniform_law() {
        let n = 10;
        let draws = 10_000;
        let mut counts = vec![0usize; n];
        for seed in 0..draws {
            counts[select_leverage(&[1.0; 10], 1, seed as u64).unwrap().indices[0]] += 1;
        }
        let expected = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }
}
