//! Positive-definite kernels and blockwise kernel-matrix assembly.
//!
//! Conventions: RBF is `exp(-||x - y||^2 / (2 sigma^2))`, Laplacian is
//! `exp(-||x - y||_1 / sigma)`, polynomial is `(scale <x, y> + offset)^degree`.
//! The `entk_mlp` kernel is the Jacobian inner product of a small randomly
//! initialised MLP with one scalar output head.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => s.tanh(),
            Activation::Relu => s.max(0.0),
        }
    }

    /// Derivative; `relu'(0)` is taken as 0.
    fn derivative(self, s: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = s.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Rbf {
        bandwidth: f64,
    },
    Laplacian {
        bandwidth: f64,
    },
    Polynomial {
        degree: u32,
        #[serde(default)]
        offset: f64,
        #[serde(default = "default_one")]
        scale: f64,
    },
    Linear,
    EntkMlp {
        input_dim: usize,
        /// Hidden layer widths; empty means a single linear layer.
        #[serde(default)]
        widths: Vec<usize>,
        activation: Activation,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_true")]
        bias: bool,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Rbf { bandwidth } | KernelSpec::Laplacian { bandwidth } => {
                if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                    return Err(Error::validation("kernel bandwidth must be positive"));
                }
            }
            KernelSpec::Polynomial { degree, offset, scale } => {
                if *degree < 1 {
                    return Err(Error::validation("polynomial degree must be at least 1"));
                }
                if !offset.is_finite() || !scale.is_finite() {
                    return Err(Error::validation("polynomial parameters must be finite"));
                }
            }
            KernelSpec::Linear => {}
            KernelSpec::EntkMlp { input_dim, widths, .. } => {
                if *input_dim < 1 || widths.iter().any(|&w| w < 1) {
                    return Err(Error::validation("MLP widths must be at least 1"));
                }
            }
        }
        Ok(())
    }

    /// Input dimension the kernel is tied to, if any.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            KernelSpec::EntkMlp { input_dim, .. } => Some(*input_dim),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Laplacian { .. } => "laplacian",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::Linear => "linear",
            KernelSpec::EntkMlp { .. } => "entk_mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelRole {
    /// Landmarks against landmarks.
    LandmarkLandmark,
    /// Samples against landmarks.
    SampleLandmark,
    /// Samples against samples.
    SampleSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub matrix: DMatrix<f64>,
    pub role: KernelRole,
}

impl KernelMatrix {
    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.matrix;
        if m.nrows() != m.ncols() {
            return f64::INFINITY;
        }
        (m - m.transpose()).amax()
    }
}

#[derive(Debug, Clone)]
struct Layer {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

/// MLP `R^d -> R` at a fixed random initialisation, used for the eNTK.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
    bias: bool,
}

impl Mlp {
    /// Weights `N(0, 1/fan_in)`, biases `N(0, 0.01)` (or absent).
    pub fn new(input_dim: usize, widths: &[usize], activation: Activation, bias: bool, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(widths);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                });
                let bias = if bias {
                    DVector::from_fn(fan_out, |_, _| {
                        0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                    })
                } else {
                    DVector::zeros(fan_out)
                };
                Layer { weight, bias }
            })
            .collect();
        Self { layers, activation, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + if self.bias { l.bias.len() } else { 0 }).sum()
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(crate::linalg::to_row_major(&l.weight));
            if self.bias {
                out.extend(l.bias.iter());
            }
        }
        out
    }

    /// Rebuilds the network with the given flattened parameters.
    pub fn with_params(&self, theta: &[f64]) -> Self {
        let mut out = self.clone();
        let mut k = 0;
        for l in &mut out.layers {
            let (r, c) = l.weight.shape();
            l.weight = DMatrix::from_row_slice(r, c, &theta[k..k + r * c]);
            k += r * c;
            if self.bias {
                l.bias = DVector::from_column_slice(&theta[k..k + r]);
                k += r;
            }
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let last = self.layers.len() - 1;
        let mut a = DVector::from_column_slice(x);
        for (i, l) in self.layers.iter().enumerate() {
            let mut s = &l.weight * &a + &l.bias;
            if i < last {
                s.apply(|v| *v = self.activation.apply(*v));
            }
            a = s;
        }
        a[0]
    }

    /// Gradient of the scalar output with respect to all parameters, by an
    /// explicit backward recursion through the layers.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut acts = vec![DVector::from_column_slice(x)];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let s = &l.weight * acts.last().unwrap() + &l.bias;
            let a = if i < last { s.map(|v| self.activation.apply(v)) } else { s.clone() };
            pre.push(s);
            acts.push(a);
        }
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = DVector::from_element(1, 1.0);
        for i in (0..self.layers.len()).rev() {
            if i < last {
                let d = pre[i].map(|s| self.activation.derivative(s));
                delta.component_mul_assign(&d);
            }
            let gw = &delta * acts[i].transpose();
            grads.push((gw, delta.clone()));
            if i > 0 {
                delta = self.layers[i].weight.transpose() * &delta;
            }
        }
        grads.reverse();
        let mut out = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            out.extend(crate::linalg::to_row_major(&gw));
            if self.bias {
                out.extend(gb.iter());
            }
        }
        out
    }
}

/// A kernel ready for evaluation (eNTK parameters materialised once).
#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    mlp: Option<Mlp>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Kernel {
    pub fn new(spec: &KernelSpec) -> Result<Self> {
        spec.validate()?;
        let mlp = match spec {
            KernelSpec::EntkMlp { input_dim, widths, activation, seed, bias } => {
                Some(Mlp::new(*input_dim, widths, *activation, *bias, *seed))
            }
            _ => None,
        };
        Ok(Self { spec: spec.clone(), mlp })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        self.mlp.as_ref()
    }

    fn check_dims(&self, a: usize, b: usize) -> Result<()> {
        if a != b {
            return Err(Error::DimensionMismatch { expected: a, got: b });
        }
        if let Some(mlp) = &self.mlp {
            if mlp.input_dim() != a {
                return Err(Error::DimensionMismatch { expected: mlp.input_dim(), got: a });
            }
        }
        Ok(())
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.spec {
            KernelSpec::Rbf { bandwidth } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Laplacian { bandwidth } => {
                let d1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-d1 / bandwidth).exp()
            }
            KernelSpec::Polynomial { degree, offset, scale } => (scale * dot(x, y) + offset).powi(*degree as i32),
            KernelSpec::Linear => dot(x, y),
            KernelSpec::EntkMlp { .. } => {
                let mlp = self.mlp.as_ref().expect("eNTK kernel without network");
                dot(&mlp.jacobian(x), &mlp.jacobian(y))
            }
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dims(x.len(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Kernel matrix between the rows of `a` and `b`, assembled in row blocks
    /// of at most `block_size` rows. Blocks are filled in parallel.
    pub fn matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, block_size: usize) -> Result<DMatrix<f64>> {
        self.check_dims(a.ncols(), b.ncols())?;
        let (n, m) = (a.nrows(), b.nrows());
        if n == 0 || m == 0 {
            return Ok(DMatrix::zeros(n, m));
        }
        let block = block_size.max(1);
        let mut out = vec![0.0; n * m];
        match &self.mlp {
            Some(mlp) => {
                let ja = jacobian_rows(mlp, a);
                let jb = jacobian_rows(mlp, b);
                out.par_chunks_mut(block * m).enumerate().for_each(|(bi, chunk)| {
                    for (r, row) in chunk.chunks_mut(m).enumerate() {
                        let i = bi * block + r;
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = dot(&ja[i], &jb[j]);
                        }
                    }
                });
            }
            None => {
                let at = a.transpose();
                let bt = b.transpose();
                out.par_chunks_mut(block * m).enumerate().for_each(|(bi, chunk)| {
                    for (r, row) in chunk.chunks_mut(m).enumerate() {
                        let i = bi * block + r;
                        let x = at.column(i);
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = self.eval_unchecked(x.as_slice(), bt.column(j).as_slice());
                        }
                    }
                });
            }
        }
        Ok(DMatrix::from_row_slice(n, m, &out))
    }

    /// `k(x_i, x_i)` for every row.
    pub fn diagonal(&self, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_dims(a.ncols(), a.ncols())?;
        let at = a.transpose();
        Ok(at.column_iter().map(|c| self.eval_unchecked(c.as_slice(), c.as_slice())).collect())
    }
}

fn jacobian_rows(mlp: &Mlp, x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let xt = x.transpose();
    xt.column_iter().collect::<Vec<_>>().par_iter().map(|c| mlp.jacobian(c.as_slice())).collect()
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    Kernel::new(spec)?.eval(x, y)
}

pub fn build_kernel_matrix(
    spec: &KernelSpec,
    rows_a: &DMatrix<f64>,
    rows_b: &DMatrix<f64>,
    block_size: usize,
    role: KernelRole,
) -> Result<KernelMatrix> {
    let matrix = Kernel::new(spec)?.matrix(rows_a, rows_b, block_size)?;
    Ok(KernelMatrix { matrix, role })
}

/// Empirical NTK Gram matrix of a single-output MLP.
pub fn entk_gram(spec: &KernelSpec, rows_a: &DMatrix<f64>, rows_b: &DMatrix<f64>) -> Result<KernelMatrix> {
    if !matches!(spec, KernelSpec::EntkMlp { .. }) {
        return Err(Error::validation("entk_gram requires an entk_mlp kernel"));
    }
    let role = if std::ptr::eq(rows_a, rows_b) { KernelRole::SampleSample } else { KernelRole::SampleLandmark };
    build_kernel_matrix(spec, rows_a, rows_b, 256, role)
}
