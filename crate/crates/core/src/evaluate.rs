//! Linear probing of frozen embeddings and spectrum diagnostics of `A^T A`.
//!
//! The probe whitens embeddings with the statistics of the full training
//! embedding set (eigen pseudo-inverse), then fits multinomial logistic
//! regression by full-batch gradient descent on a stratified labelled subset.
//! Whitening makes the probe invariant to invertible affine maps of `Z`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{seeded_rng, sym_eigen_desc};

pub const PROBE_L2: f64 = 1e-4;
pub const PROBE_TOL: f64 = 1e-6;
pub const PROBE_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub per_class_recall: Vec<f64>,
    pub n_labeled_used: usize,
}

/// Mean of per-class recalls over the classes present in `y`.
pub fn balanced_accuracy(pred: &[usize], y: &[usize]) -> Result<f64> {
    if pred.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: pred.len() });
    }
    if y.is_empty() {
        return Err(Error::validation("balanced accuracy of an empty set"));
    }
    let recalls = per_class_recall(pred, y, y.iter().max().unwrap() + 1);
    let present: Vec<f64> = recalls.into_iter().flatten().collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

fn per_class_recall(pred: &[usize], y: &[usize], n_classes: usize) -> Vec<Option<f64>> {
    let mut hit = vec![0usize; n_classes];
    let mut total = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(y) {
        total[t] += 1;
        if p == t {
            hit[t] += 1;
        }
    }
    (0..n_classes).map(|c| (total[c] > 0).then(|| hit[c] as f64 / total[c] as f64)).collect()
}

/// Per class, a shuffled `round(fraction * count)` of the indices.
pub fn stratified_subset(y: &[usize], fraction: f64, n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation("label fraction must lie in (0, 1]"));
    }
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        let take = (fraction * members.len() as f64).round() as usize;
        if take == 0 {
            return Err(Error::EmptyProbeClass { class: c });
        }
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..take]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Affine whitening map `x -> (x - mean) W` with `W = U Lambda^{-1/2}` over
/// the non-negligible eigenpairs of the covariance.
#[derive(Debug, Clone)]
pub struct Whitener {
    pub mean: DVector<f64>,
    pub map: DMatrix<f64>,
}

impl Whitener {
    pub fn fit(z: &DMatrix<f64>) -> Self {
        let n = z.nrows().max(1) as f64;
        let mean = crate::data::column_means(z);
        let mut zc = z.clone();
        crate::linalg::center_columns(&mut zc);
        let cov = zc.transpose() * &zc / n;
        let (vals, vecs) = sym_eigen_desc(&cov);
        let top = vals.iter().copied().fold(0.0, f64::max);
        let keep = vals.iter().filter(|&&v| v > crate::model::EIGEN_CUTOFF * top && v > 0.0).count();
        let mut map = vecs.columns(0, keep).into_owned();
        for (j, mut col) in map.column_iter_mut().enumerate() {
            col /= vals[j].sqrt();
        }
        Self { mean, map }
    }

    pub fn apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut zc = z.clone();
        for (j, mut col) in zc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        zc * &self.map
    }
}

/// Multinomial logistic regression on whitened features.
#[derive(Debug, Clone)]
pub struct LogisticProbe {
    pub whitener: Whitener,
    /// `(r + 1) x C`, last row is the bias.
    pub weights: DMatrix<f64>,
    pub iterations: usize,
}

fn with_bias(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    out.columns_mut(0, x.ncols()).copy_from(x);
    out
}

fn softmax_rows(logits: &mut DMatrix<f64>) {
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let s = row.sum();
        row /= s;
    }
}

impl LogisticProbe {
    pub fn fit(whitener: Whitener, z: &DMatrix<f64>, y: &[usize], n_classes: usize) -> Self {
        let x = with_bias(&whitener.apply(z));
        let n = x.nrows() as f64;
        let d = x.ncols();
        let mut targets = DMatrix::zeros(x.nrows(), n_classes);
        for (i, &c) in y.iter().enumerate() {
            targets[(i, c)] = 1.0;
        }
        let gram = x.transpose() * &x / n;
        let lipschitz = 0.5 * sym_eigen_desc(&gram).0[0] + 2.0 * PROBE_L2;
        let step = 1.0 / lipschitz;
        let mut w = DMatrix::zeros(d, n_classes);
        let mut iterations = 0;
        while iterations < PROBE_MAX_ITER {
            let mut p = &x * &w;
            softmax_rows(&mut p);
            let mut grad = x.transpose() * (p - &targets) / n;
            let mut reg = &w * (2.0 * PROBE_L2);
            reg.row_mut(d - 1).fill(0.0);
            grad += reg;
            if grad.amax() < PROBE_TOL {
                break;
            }
            w -= grad * step;
            iterations += 1;
        }
        Self { whitener, weights: w, iterations }
    }

    pub fn predict(&self, z: &DMatrix<f64>) -> Vec<usize> {
        let scores = with_bias(&self.whitener.apply(z)) * &self.weights;
        scores.row_iter().map(|r| r.transpose().argmax().0).collect()
    }
}

pub fn linear_probe(
    z_train: &DMatrix<f64>,
    y_train: &[usize],
    z_test: &DMatrix<f64>,
    y_test: &[usize],
    label_fraction: f64,
    seed: u64,
) -> Result<ProbeResult> {
    if y_train.len() != z_train.nrows() {
        return Err(Error::DimensionMismatch { expected: z_train.nrows(), got: y_train.len() });
    }
    if y_test.len() != z_test.nrows() {
        return Err(Error::DimensionMismatch { expected: z_test.nrows(), got: y_test.len() });
    }
    if y_test.is_empty() || y_train.is_empty() {
        return Err(Error::validation("probe needs labelled train and test rows"));
    }
    if !crate::linalg::all_finite(z_train) || !crate::linalg::all_finite(z_test) {
        return Err(Error::NonFinite("probe embeddings".into()));
    }
    let n_classes = y_train.iter().chain(y_test).max().unwrap() + 1;
    let subset = stratified_subset(y_train, label_fraction, n_classes, seed)?;
    let z_sub = crate::linalg::select_rows(z_train, &subset);
    let y_sub: Vec<usize> = subset.iter().map(|&i| y_train[i]).collect();
    let probe = LogisticProbe::fit(Whitener::fit(z_train), &z_sub, &y_sub, n_classes);
    let pred = probe.predict(z_test);
    let correct = pred.iter().zip(y_test).filter(|(p, t)| p == t).count();
    let recalls = per_class_recall(&pred, y_test, n_classes);
    Ok(ProbeResult {
        accuracy: correct as f64 / y_test.len() as f64,
        balanced_accuracy: balanced_accuracy(&pred, y_test)?,
        per_class_recall: recalls.into_iter().map(|r| r.unwrap_or(f64::NAN)).collect(),
        n_labeled_used: subset.len(),
    })
}

impl ProbeResult {
    /// Long-format CSV `metric,value`: accuracy, balanced_accuracy,
    /// n_labeled_used, then `recall_<c>` per class (empty when the class is
    /// absent from the test set).
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "value"])?;
        out.write_record(["accuracy".to_string(), format!("{:e}", self.accuracy)])?;
        out.write_record(["balanced_accuracy".to_string(), format!("{:e}", self.balanced_accuracy)])?;
        out.write_record(["n_labeled_used".to_string(), self.n_labeled_used.to_string()])?;
        for (c, r) in self.per_class_recall.iter().enumerate() {
            let v = if r.is_nan() { String::new() } else { format!("{r:e}") };
            out.write_record([format!("recall_{c}"), v])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub effective_rank: f64,
    /// Set when `A` is zero and the effective rank is reported as 0.
    pub degenerate: bool,
}

impl SpectrumReport {
    /// CSV `index,eigenvalue`, one row per eigenvalue in descending order.
    pub fn write_eigenvalues_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "eigenvalue"])?;
        for (i, v) in self.eigenvalues.iter().enumerate() {
            out.write_record([i.to_string(), format!("{v:e}")])?;
        }
        out.flush()?;
        Ok(())
    }

    /// CSV `h,effective_rank,degenerate` with a single row.
    pub fn write_summary_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["h", "effective_rank", "degenerate"])?;
        out.write_record([
            self.eigenvalues.len().to_string(),
            format!("{:e}", self.effective_rank),
            self.degenerate.to_string(),
        ])?;
        out.flush()?;
        Ok(())
    }
}

/// Eigenvalues of `A^T A` (descending) and `exp` of their normalised entropy.
pub fn spectrum(a: &DMatrix<f64>) -> SpectrumReport {
    let (vals, _) = sym_eigen_desc(&(a.transpose() * a));
    let eigenvalues: Vec<f64> = vals.iter().copied().collect();
    let total: f64 = eigenvalues.iter().filter(|v| **v > 0.0).sum();
    if total <= 0.0 {
        return SpectrumReport { eigenvalues, effective_rank: 0.0, degenerate: true };
    }
    let entropy: f64 = eigenvalues
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    SpectrumReport { eigenvalues, effective_rank: entropy.exp(), degenerate: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn csv_layouts() {
        let r = ProbeResult {
            accuracy: 0.5,
            balanced_accuracy: 0.25,
            per_class_recall: vec![1.0, f64::NAN],
            n_labeled_used: 4,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "metric,value\naccuracy,5e-1\nbalanced_accuracy,2.5e-1\nn_labeled_used,4\nrecall_0,1e0\nrecall_1,\n"
        );
        let s = spectrum(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        let mut buf = Vec::new();
        s.write_eigenvalues_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,eigenvalue\n0,4e0\n1,1e0\n");
        let mut buf = Vec::new();
        s.write_summary_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("h,effective_rank,degenerate\n2,1.6"));
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&[0, 0, 1], &[0, 1, 1]).unwrap(), 0.75);
        assert!(balanced_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn separable_two_classes_are_perfect() {
        let mut rng = seeded_rng(1);
        let n = 60;
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let z = DMatrix::from_fn(n, 3, |i, j| {
            let shift = if j == 0 {
                if y[i] == 0 {
                    -2.0
                } else {
                    2.0
                }
            } else {
                0.0
            };
            shift + rng.random_range(-0.5..0.5)
        });
        let r = linear_probe(&z, &y, &z, &y, 0.5, 0).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.n_labeled_used, 30);
    }

    #[test]
    fn noise_is_at_chance() {
        let c = 3;
        let mut total = 0.0;
        for seed in 0..5 {
            let mut rng = seeded_rng(seed);
            let n = 600;
            let y: Vec<usize> = (0..n).map(|i| i % c).collect();
            let z = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let zt = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            total += linear_probe(&z, &y, &zt, &y, 0.5, seed).unwrap().accuracy;
        }
        assert!((total / 5.0 - 1.0 / c as f64).abs() < 0.1);
    }

    #[test]
    fn empty_class_in_subset_is_an_error() {
        let y = vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let z = DMatrix::from_fn(10, 2, |i, j| (i * 2 + j) as f64);
        assert!(matches!(linear_probe(&z, &y, &z, &y, 0.1, 0), Err(Error::EmptyProbeClass { class: 1 })));
    }

    #[test]
    fn affine_invariance() {
        let mut rng = seeded_rng(3);
        let n = 90;
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let z = DMatrix::from_fn(n, 3, |i, j| (y[i] == j) as u8 as f64 * 1.5 + rng.random_range(-1.0..1.0));
        let zt = DMatrix::from_fn(n, 3, |i, j| (y[i] == j) as u8 as f64 * 1.5 + rng.random_range(-1.0..1.0));
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, -1.0, 1.0, 0.5, 0.0, 0.2, 4.0]);
        let b = nalgebra::RowDVector::from_vec(vec![5.0, -3.0, 1.0]);
        let map = |x: &DMatrix<f64>| {
            let mut out = x * &m;
            for mut row in out.row_iter_mut() {
                row += &b;
            }
            out
        };
        let r1 = linear_probe(&z, &y, &zt, &y, 0.3, 1).unwrap();
        let r2 = linear_probe(&map(&z), &y, &map(&zt), &y, 0.3, 1).unwrap();
        assert!((r1.accuracy - r2.accuracy).abs() <= 1e-3);
    }

    #[test]
    fn spectrum_examples() {
        let q = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = spectrum(&q);
        assert!((s.effective_rank - 2.0).abs() < 1e-12);
        let rank1 = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
        assert!((spectrum(&rank1).effective_rank - 1.0).abs() < 1e-6);
        let d = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = spectrum(&d);
        assert!((s.eigenvalues[0] - 4.0).abs() < 1e-12 && (s.eigenvalues[1] - 1.0).abs() < 1e-12);
        let h: f64 = -(0.8f64 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        assert!((s.effective_rank - h.exp()).abs() < 1e-12);
        assert!((s.effective_rank - 1.649).abs() < 1e-3);
        let zero = spectrum(&DMatrix::zeros(3, 2));
        assert!(zero.degenerate && zero.effective_rank == 0.0);
    }

    #[test]
    fn spectrum_invariant_to_left_rotation() {
        let mut rng = seeded_rng(5);
        let a = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = nalgebra::linalg::QR::new(DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0))).q();
        let s1 = spectrum(&a);
        let s2 = spectrum(&(q * &a));
        for (x, y) in s1.eigenvalues.iter().zip(&s2.eigenvalues) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
