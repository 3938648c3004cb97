//! Landmark-level explanations.
//!
//! * Ranking: landmark rows ordered by `omega_l = ||A_l||_2`, ties by index.
//! * Class coverage `kappa`: shortest ranked prefix whose labels cover every class.
//! * Influence `iota_{l->t} = k(x_t, x_l) * omega_l`.
//! * Concept vectors: unit normal of a squared-hinge linear separator between
//!   concept-positive and concept-negative embeddings.
//! * Concept score `(Z_m[l] . v_c) * iota_{l->t}` with landmark embeddings
//!   `Z_m = K_mm A (+ gamma)`, and the profile `Psi_N`, the sum of scores of
//!   the `N` most influential landmarks.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_row_vector, seeded_rng, sym_eigen_desc};
use crate::model::NystromModel;

pub const CAV_L2: f64 = 1e-3;
pub const CAV_HOLDOUT: f64 = 0.2;
const CAV_MAX_ITER: usize = 5000;
const CAV_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRanking {
    pub omega: Vec<f64>,
    /// Landmark rows, most important first.
    pub order: Vec<usize>,
}

pub fn rank_landmarks(a: &DMatrix<f64>) -> LandmarkRanking {
    let omega: Vec<f64> = a.row_iter().map(|r| r.norm()).collect();
    let order = sorted_desc(&omega);
    LandmarkRanking { omega, order }
}

fn sorted_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    order
}

/// `landmark_labels[l]` is the class of landmark row `l`.
pub fn class_coverage_kappa(
    ranking: &LandmarkRanking,
    landmark_labels: &[usize],
    label_set: &[usize],
) -> Result<usize> {
    if landmark_labels.len() != ranking.order.len() {
        return Err(Error::DimensionMismatch { expected: ranking.order.len(), got: landmark_labels.len() });
    }
    let mut wanted: Vec<usize> = label_set.to_vec();
    wanted.sort_unstable();
    wanted.dedup();
    let missing: Vec<usize> = wanted.iter().copied().filter(|c| !landmark_labels.contains(c)).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses { missing });
    }
    let mut seen = std::collections::BTreeSet::new();
    for (k, &l) in ranking.order.iter().enumerate() {
        if wanted.binary_search(&landmark_labels[l]).is_ok() {
            seen.insert(landmark_labels[l]);
        }
        if seen.len() == wanted.len() {
            return Ok(k + 1);
        }
    }
    Ok(ranking.order.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub test_id: usize,
    pub landmark_id: usize,
    pub kernel_sim: f64,
    pub row_norm: f64,
    pub iota: f64,
    pub alignment: Option<f64>,
    pub score: Option<f64>,
}

/// All landmarks scored for one test point, sorted by descending influence
/// (ties by landmark index), truncated to `top_k`.
pub fn influence_scores(
    model: &NystromModel,
    x_test: &[f64],
    test_id: usize,
    top_k: usize,
) -> Result<Vec<InfluenceRecord>> {
    let x = DMatrix::from_row_slice(1, x_test.len(), x_test);
    let sims = model.k_nm(&x)?;
    let omega: Vec<f64> = model.a.row_iter().map(|r| r.norm()).collect();
    let iota: Vec<f64> = (0..omega.len()).map(|l| sims[(0, l)] * omega[l]).collect();
    Ok(sorted_desc(&iota)
        .into_iter()
        .take(top_k)
        .map(|l| InfluenceRecord {
            test_id,
            landmark_id: l,
            kernel_sim: sims[(0, l)],
            row_norm: omega[l],
            iota: iota[l],
            alignment: None,
            score: None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptVector {
    pub name: String,
    /// Unit normal of the separator.
    pub direction: Vec<f64>,
    /// Offset such that `z . direction + offset > 0` predicts the concept.
    pub offset: f64,
    pub train_accuracy: f64,
    /// Accuracy on the held-out 20% (absent when too few samples to hold out).
    pub holdout_accuracy: Option<f64>,
}

impl ConceptVector {
    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.direction)
    }
}

fn holdout_split(n: usize, rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let hold = (CAV_HOLDOUT * n as f64).floor() as usize;
    let hold = hold.min(n - 1);
    (idx[hold..].to_vec(), idx[..hold].to_vec())
}

fn rows_as_sorted_vecs(z: &DMatrix<f64>) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = z.row_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    rows
}

/// Squared-hinge linear SVM `mean max(0, 1 - y (w.z + b))^2 + 1e-3 ||w||^2`
/// fitted by gradient descent on 80% of each side.
pub fn learn_cav(name: &str, z_pos: &DMatrix<f64>, z_neg: &DMatrix<f64>, seed: u64) -> Result<ConceptVector> {
    if z_pos.nrows() < 2 || z_neg.nrows() < 2 {
        return Err(Error::validation("concept vectors need at least two samples per side"));
    }
    if z_pos.ncols() != z_neg.ncols() {
        return Err(Error::DimensionMismatch { expected: z_pos.ncols(), got: z_neg.ncols() });
    }
    if rows_as_sorted_vecs(z_pos) == rows_as_sorted_vecs(z_neg) {
        return Err(Error::DegenerateSeparator("positive and negative sets are identical".into()));
    }
    let h = z_pos.ncols();
    let mut rng = seeded_rng(seed);
    let (pos_train, pos_hold) = holdout_split(z_pos.nrows(), &mut rng);
    let (neg_train, neg_hold) = holdout_split(z_neg.nrows(), &mut rng);
    let gather = |pos: &[usize], neg: &[usize]| {
        let n = pos.len() + neg.len();
        let mut x = DMatrix::from_element(n, h + 1, 1.0);
        let mut y = DVector::zeros(n);
        for (r, &i) in pos.iter().enumerate() {
            x.view_mut((r, 0), (1, h)).copy_from(&z_pos.row(i));
            y[r] = 1.0;
        }
        for (r, &i) in neg.iter().enumerate() {
            x.view_mut((pos.len() + r, 0), (1, h)).copy_from(&z_neg.row(i));
            y[pos.len() + r] = -1.0;
        }
        (x, y)
    };
    let (x, y) = gather(&pos_train, &neg_train);
    let n = x.nrows() as f64;
    let lipschitz = 2.0 * sym_eigen_desc(&(x.transpose() * &x / n)).0[0] + 2.0 * CAV_L2;
    let step = 1.0 / lipschitz;
    let mut w = DVector::zeros(h + 1);
    for _ in 0..CAV_MAX_ITER {
        let margins = (&x * &w).component_mul(&y);
        let slack = margins.map(|m| (1.0 - m).max(0.0));
        let mut grad = x.transpose() * slack.component_mul(&y) * (-2.0 / n);
        for k in 0..h {
            grad[k] += 2.0 * CAV_L2 * w[k];
        }
        if grad.amax() < CAV_TOL {
            break;
        }
        w -= grad * step;
    }
    let norm = w.rows(0, h).norm();
    if norm.is_nan() || norm <= 1e-10 {
        return Err(Error::DegenerateSeparator(format!("separator norm {norm:.3e}")));
    }
    let accuracy = |x: &DMatrix<f64>, y: &DVector<f64>| {
        let correct = (x * &w).iter().zip(y.iter()).filter(|(s, t)| (**s > 0.0) == (**t > 0.0)).count();
        correct as f64 / x.nrows() as f64
    };
    let train_accuracy = accuracy(&x, &y);
    let holdout_accuracy = if pos_hold.is_empty() && neg_hold.is_empty() {
        None
    } else {
        let (xh, yh) = gather(&pos_hold, &neg_hold);
        Some(accuracy(&xh, &yh))
    };
    Ok(ConceptVector {
        name: name.to_string(),
        direction: w.rows(0, h).iter().map(|v| v / norm).collect(),
        offset: w[h] / norm,
        train_accuracy,
        holdout_accuracy,
    })
}

/// Landmark embeddings `K_mm A`, plus `gamma` when `include_gamma`.
pub fn landmark_embeddings(model: &NystromModel, k_mm: &DMatrix<f64>, include_gamma: bool) -> DMatrix<f64> {
    let mut z = k_mm * &model.a;
    if include_gamma {
        add_row_vector(&mut z, &model.gamma);
    }
    z
}

/// `(Z_m[l] . v) * iota`.
pub fn concept_score(z_m: &DMatrix<f64>, v: &DVector<f64>, landmark: usize, iota: f64) -> f64 {
    z_m.row(landmark).transpose().dot(v) * iota
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptProfile {
    pub concept: String,
    pub test_id: usize,
    pub n: usize,
    pub psi: f64,
    pub records: Vec<InfluenceRecord>,
}

/// `Psi_N`: the sum of concept scores over the `N` most influential landmarks.
pub fn concept_profile(
    model: &NystromModel,
    z_m: &DMatrix<f64>,
    concept: &ConceptVector,
    x_test: &[f64],
    test_id: usize,
    n: usize,
) -> Result<ConceptProfile> {
    if n > model.a.nrows() {
        return Err(Error::validation(format!("N = {n} exceeds the {} landmark rows", model.a.nrows())));
    }
    let v = concept.vector();
    if v.len() != z_m.ncols() {
        return Err(Error::DimensionMismatch { expected: z_m.ncols(), got: v.len() });
    }
    let mut records = influence_scores(model, x_test, test_id, n)?;
    let mut psi = 0.0;
    for r in &mut records {
        let alignment = z_m.row(r.landmark_id).transpose().dot(&v);
        let score = alignment * r.iota;
        r.alignment = Some(alignment);
        r.score = Some(score);
        psi += score;
    }
    Ok(ConceptProfile { concept: concept.name.clone(), test_id, n, psi, records })
}

/// CSV `test_id,landmark_id,kernel_sim,row_norm,iota,alignment,score`;
/// absent alignment and score are left empty.
pub fn write_influence_csv(records: &[InfluenceRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["test_id", "landmark_id", "kernel_sim", "row_norm", "iota", "alignment", "score"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in records {
        out.write_record([
            r.test_id.to_string(),
            r.landmark_id.to_string(),
            format!("{:e}", r.kernel_sim),
            format!("{:e}", r.row_norm),
            format!("{:e}", r.iota),
            opt(r.alignment),
            opt(r.score),
        ])?;
    }
    out.flush()?;
    Ok(())
}
