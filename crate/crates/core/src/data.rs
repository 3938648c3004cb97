//! Tabular datasets: CSV ingestion, standardization, augmentation, synthetic
//! generators, train/validation/test splits and the binary embedding dump.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::seeded_rng;

/// Rows of feature vectors, `p` stacked augmented views and optional labels.
///
/// View 0 holds the original features; views `1..p` are augmentations of the
/// same rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    views: Vec<DMatrix<f64>>,
    labels: Option<Vec<usize>>,
    label_names: Vec<String>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        let d = features.ncols();
        Self::with_views(vec![features], labels, default_names(d), Vec::new())
    }

    pub fn with_views(
        views: Vec<DMatrix<f64>>,
        labels: Option<Vec<usize>>,
        feature_names: Vec<String>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let first = views.first().ok_or_else(|| Error::validation("a dataset needs at least one view"))?;
        let (n, d) = first.shape();
        if views.iter().any(|v| v.shape() != (n, d)) {
            return Err(Error::validation("all views must share the same shape"));
        }
        if feature_names.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: feature_names.len() });
        }
        if let Some(y) = &labels {
            if y.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: y.len() });
            }
        }
        let label_names = match &labels {
            Some(y) => {
                let classes = y.iter().max().map_or(0, |m| m + 1);
                if label_names.is_empty() {
                    (0..classes).map(|c| c.to_string()).collect()
                } else if label_names.len() < classes {
                    return Err(Error::validation("label out of range of the label names"));
                } else {
                    label_names
                }
            }
            None => Vec::new(),
        };
        Ok(Self { views, labels, label_names, feature_names })
    }

    pub fn n(&self) -> usize {
        self.views[0].nrows()
    }

    pub fn d(&self) -> usize {
        self.views[0].ncols()
    }

    /// Number of views per sample.
    pub fn p(&self) -> usize {
        self.views.len()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.views[0]
    }

    pub fn view(&self, j: usize) -> &DMatrix<f64> {
        &self.views[j]
    }

    pub fn views(&self) -> &[DMatrix<f64>] {
        &self.views
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    /// A dataset restricted to the given rows (all views).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let views = self.views.iter().map(|v| crate::linalg::select_rows(v, rows)).collect();
        let labels = self.labels.as_ref().map(|y| rows.iter().map(|&i| y[i]).collect());
        Dataset { views, labels, label_names: self.label_names.clone(), feature_names: self.feature_names.clone() }
    }

    /// Replaces the views, keeping labels and names.
    pub fn replace_views(&self, views: Vec<DMatrix<f64>>) -> Result<Dataset> {
        Dataset::with_views(views, self.labels.clone(), self.feature_names.clone(), self.label_names.clone())
    }
}

fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

/// Reads a CSV file with a header row.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, label_column)
}

/// Parses CSV text from any reader. Columns whose every cell parses as a
/// number are numeric; other columns are encoded as integers in order of first
/// appearance, as is the label column.
pub fn read_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::validation(format!("label column '{name}' not found")))?,
        ),
        None => None,
    };

    let mut cells: Vec<Vec<String>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: i + 2, message: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line: i + 2,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        cells.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    let n = cells.len();

    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| Some(c) != label_idx).collect();
    let mut x = DMatrix::zeros(n, feature_cols.len());
    for (j, &c) in feature_cols.iter().enumerate() {
        let parsed: Option<Vec<f64>> = cells.iter().map(|r| r[c].parse::<f64>().ok()).collect();
        match parsed {
            Some(values) => {
                for (i, v) in values.into_iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::validation(format!(
                            "non-finite value '{}' in column '{}' at line {}",
                            cells[i][c],
                            header[c],
                            i + 2
                        )));
                    }
                    x[(i, j)] = v;
                }
            }
            None => {
                let (codes, _) = encode_first_appearance(cells.iter().map(|r| r[c].as_str()));
                for (i, code) in codes.into_iter().enumerate() {
                    x[(i, j)] = code as f64;
                }
            }
        }
    }

    let (labels, label_names) = match label_idx {
        Some(c) => {
            let (codes, names) = encode_first_appearance(cells.iter().map(|r| r[c].as_str()));
            (Some(codes), names)
        }
        None => (None, Vec::new()),
    };
    let names = feature_cols.iter().map(|&c| header[c].clone()).collect();
    Dataset::with_views(vec![x], labels, names, label_names)
}

fn encode_first_appearance<'a>(values: impl Iterator<Item = &'a str>) -> (Vec<usize>, Vec<String>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let codes = values
        .map(|v| {
            *index.entry(v).or_insert_with(|| {
                names.push(v.to_string());
                names.len() - 1
            })
        })
        .collect();
    (codes, names)
}

/// Writes view 0 (and labels, as a trailing `label` column) to CSV.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.feature_names().to_vec();
    if ds.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = ds.features().row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(y) = ds.labels() {
            row.push(ds.label_names()[y[i]].clone());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-column affine normalization fitted on view 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of each column.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::validation("standardization needs at least two rows"));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mu = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            mean.push(mu);
            std.push(var.sqrt());
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: x.ncols() });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let s = self.std[j];
            if s <= 1e-12 * self.mean[j].abs().max(1.0) {
                0.0
            } else {
                (x[(i, j)] - self.mean[j]) / s
            }
        }))
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        let views = ds.views().iter().map(|v| self.apply(v)).collect::<Result<Vec<_>>>()?;
        ds.replace_views(views)
    }
}

/// Zero-mean, unit-variance columns using view-0 statistics for every view.
/// Constant columns map to zero.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    Standardizer::fit(ds.features())?.apply_dataset(ds)
}

/// Builds `p` views: view 0 is the original, every further view adds
/// `N(0, noise_sigma^2)` noise and zeroes each feature with probability
/// `drop_prob`.
pub fn augment_tabular(ds: &Dataset, noise_sigma: f64, drop_prob: f64, p: usize, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(Error::validation(format!("drop_prob {drop_prob} outside [0, 1)")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::validation("noise_sigma must be finite and non-negative"));
    }
    if p == 0 {
        return Err(Error::validation("at least one view is required"));
    }
    let base = ds.features();
    let mut rng = seeded_rng(seed);
    let mut views = vec![base.clone()];
    for _ in 1..p {
        let mut v = base.clone();
        for i in 0..v.nrows() {
            for j in 0..v.ncols() {
                if noise_sigma > 0.0 {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    v[(i, j)] += noise_sigma * eps;
                }
                if drop_prob > 0.0 && rng.random::<f64>() < drop_prob {
                    v[(i, j)] = 0.0;
                }
            }
        }
        views.push(v);
    }
    ds.replace_views(views)
}

/// `n_classes` isotropic unit-variance Gaussian clusters whose centres are
/// pairwise at least `separation` apart. Labels are assigned round-robin.
pub fn make_blobs(n: usize, d: usize, n_classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n_classes == 0 || n < n_classes {
        return Err(Error::validation("make_blobs needs n >= C >= 1"));
    }
    if d == 0 {
        return Err(Error::validation("make_blobs needs d >= 1"));
    }
    let mut rng = seeded_rng(seed);
    let centers = blob_centers(d, n_classes, separation, &mut rng);
    let mut x = DMatrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_classes;
        for j in 0..d {
            let eps: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = centers[c][j] + eps;
        }
        y.push(c);
    }
    Dataset::new(x, Some(y))
}

fn blob_centers(d: usize, c: usize, sep: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let radius = sep * c as f64;
    'attempt: for _ in 0..1000 {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c);
        for _ in 0..c {
            let cand: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
            let ok =
                centers.iter().all(|o| o.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= sep);
            if !ok {
                continue 'attempt;
            }
            centers.push(cand);
        }
        return centers;
    }
    // Collinear fallback always satisfies the separation.
    (0..c)
        .map(|k| {
            let mut v = vec![0.0; d];
            v[0] = sep * k as f64;
            v
        })
        .collect()
}

/// Two interleaving half circles with Gaussian noise; labels 0 (upper) and 1.
pub fn make_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::validation("make_moons needs n >= 2"));
    }
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::validation(e.to_string()))?;
    let n_outer = n / 2 + n % 2;
    let n_inner = n / 2;
    let mut x = DMatrix::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (px, py, label) = if i < n_outer {
            let t = std::f64::consts::PI * i as f64 / (n_outer.max(2) - 1) as f64;
            (t.cos(), t.sin(), 0)
        } else {
            let k = i - n_outer;
            let t = std::f64::consts::PI * k as f64 / (n_inner.max(2) - 1) as f64;
            (1.0 - t.cos(), 0.5 - t.sin(), 1)
        };
        x[(i, 0)] = px + normal.sample(&mut rng);
        x[(i, 1)] = py + normal.sample(&mut rng);
        y.push(label);
    }
    Dataset::new(x, Some(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Fraction of rows available for training; the rest form the test set.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Fraction of training rows whose labels the linear probe may use.
    #[serde(default = "default_probe_fraction")]
    pub probe_label_fraction: f64,
    /// Fraction of the training rows held out (labelled) for model selection.
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.7
}
fn default_probe_fraction() -> f64 {
    0.10
}
fn default_validation_fraction() -> f64 {
    0.10
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: default_train_fraction(),
            probe_label_fraction: default_probe_fraction(),
            validation_fraction: default_validation_fraction(),
            seed: 0,
        }
    }
}

/// Disjoint row partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.train_fraction) || !in_unit(self.probe_label_fraction) {
            return Err(Error::validation("train and probe fractions must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::validation("validation_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn split(&self, n: usize) -> Result<Split> {
        self.validate()?;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeded_rng(self.seed));
        let n_train_all = ((self.train_fraction * n as f64).round() as usize).min(n);
        let n_val = (self.validation_fraction * n_train_all as f64).round() as usize;
        let n_train = n_train_all - n_val;
        if n_train < 2 {
            return Err(Error::validation("split leaves fewer than two training rows"));
        }
        Ok(Split {
            train: perm[..n_train].to_vec(),
            validation: perm[n_train..n_train_all].to_vec(),
            test: perm[n_train_all..].to_vec(),
        })
    }
}

const EMBEDDING_MAGIC: &[u8; 4] = b"NYSB";

/// Writes `z` as `NYSB`, u32 rows, u32 cols, u32 reserved (zero), then
/// row-major little-endian f64 values.
pub fn write_embeddings(w: &mut impl Write, z: &DMatrix<f64>) -> Result<()> {
    let rows = u32::try_from(z.nrows()).map_err(|_| Error::validation("too many rows"))?;
    let cols = u32::try_from(z.ncols()).map_err(|_| Error::validation("too many columns"))?;
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for i in 0..z.nrows() {
        for v in z.row(i).iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_embeddings(r: &mut impl Read) -> Result<DMatrix<f64>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != EMBEDDING_MAGIC {
        return Err(Error::ModelFormat("bad embedding magic".into()));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf)?;
    let values: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Column means of view 0 (useful for diagnostics).
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    crate::linalg::col_sums(x) / n
}
