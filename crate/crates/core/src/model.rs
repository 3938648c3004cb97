//! The Nyström function class `f(x) = A^T k_x + gamma`, principal component
//! initialisation, embedding, and the binary model file.
//!
//! Landmark rows are stored view-major: row `j * m + i` holds view `j` of the
//! `i`-th landmark sample, and row `r` of `A` weights that landmark.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec};
use crate::landmarks::{LandmarkMethod, LandmarkSet};
use crate::linalg::{add_row_vector, seeded_rng, sym_eigen_desc, with_jitter};

/// Eigenvalues at or below this fraction of the largest are treated as zero.
pub const EIGEN_CUTOFF: f64 = 1e-10;

const MAGIC: &[u8; 4] = b"NYSM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    #[default]
    Pci,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PciFactors {
    pub u_h: DMatrix<f64>,
    pub lambda_h: DVector<f64>,
}

/// `A_0 = U_h Lambda_h^{-1/2}` from the top-`h` eigenpairs of the jittered
/// landmark Gram matrix.
pub fn pci_init(k_mm: &DMatrix<f64>, h: usize) -> Result<(PciFactors, DMatrix<f64>)> {
    if k_mm.nrows() != k_mm.ncols() {
        return Err(Error::DimensionMismatch { expected: k_mm.nrows(), got: k_mm.ncols() });
    }
    if h == 0 {
        return Err(Error::validation("embedding dimension h must be at least 1"));
    }
    let jittered = with_jitter(k_mm);
    let shift = jittered[(0, 0)] - k_mm[(0, 0)];
    let (vals, vecs) = sym_eigen_desc(&jittered);
    let top = vals.iter().copied().fold(0.0, f64::max);
    let usable = vals.iter().filter(|&&v| v - shift > EIGEN_CUTOFF * top && v > 0.0).count();
    if usable < h {
        return Err(Error::RankDeficient { requested: h, usable });
    }
    let u_h = vecs.columns(0, h).into_owned();
    let lambda_h = vals.rows(0, h).into_owned();
    let mut a0 = u_h.clone();
    for (j, mut col) in a0.column_iter_mut().enumerate() {
        col /= lambda_h[j].sqrt();
    }
    Ok((PciFactors { u_h, lambda_h }, a0))
}

/// Zero-mean Gaussian initialisation with standard deviation `1/sqrt(rows)`.
pub fn random_init(rows: usize, h: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, 1.0 / (rows.max(1) as f64).sqrt()).expect("valid normal");
    DMatrix::from_fn(rows, h, |_, _| normal.sample(&mut rng))
}

/// `Tr(A^T K A)`.
pub fn tikhonov(a: &DMatrix<f64>, k_mm: &DMatrix<f64>) -> f64 {
    crate::linalg::frob_dot(&(k_mm * a), a)
}

/// Stacks every view of the selected samples, view-major.
pub fn landmark_rows(ds: &Dataset, landmarks: &LandmarkSet) -> Result<DMatrix<f64>> {
    let (m, p, d) = (landmarks.m(), ds.p(), ds.d());
    if let Some(&bad) = landmarks.indices.iter().find(|&&i| i >= ds.n()) {
        return Err(Error::validation(format!("landmark index {bad} out of range for {} samples", ds.n())));
    }
    Ok(DMatrix::from_fn(m * p, d, |r, c| ds.view(r / m)[(landmarks.indices[r % m], c)]))
}

/// Relative Frobenius error of the Nyström approximation
/// `K_nm K_mm^+ K_mn` to `K_nn`, using the eigen-truncated pseudo-inverse.
pub fn nystrom_relative_error(k_nn: &DMatrix<f64>, k_nm: &DMatrix<f64>, k_mm: &DMatrix<f64>) -> f64 {
    let (vals, vecs) = sym_eigen_desc(k_mm);
    let top = vals.iter().copied().fold(0.0, f64::max);
    let keep = vals.iter().filter(|&&v| v > EIGEN_CUTOFF * top && v > 0.0).count();
    let mut phi = k_nm * vecs.columns(0, keep);
    for (j, mut col) in phi.column_iter_mut().enumerate() {
        col /= vals[j].sqrt();
    }
    (k_nn - &phi * phi.transpose()).norm() / k_nn.norm()
}

#[derive(Debug, Clone)]
pub struct NystromModel {
    pub a: DMatrix<f64>,
    pub gamma: DVector<f64>,
    kernel: Kernel,
    landmarks: LandmarkSet,
    p: usize,
    landmark_features: DMatrix<f64>,
}

impl NystromModel {
    pub fn new(
        kernel: &KernelSpec,
        landmarks: LandmarkSet,
        landmark_features: DMatrix<f64>,
        a: DMatrix<f64>,
        gamma: DVector<f64>,
    ) -> Result<Self> {
        let m = landmarks.m();
        let rows = landmark_features.nrows();
        if rows == 0 || !rows.is_multiple_of(m) {
            return Err(Error::validation(format!("{rows} landmark rows is not a multiple of m = {m}")));
        }
        if a.nrows() != rows {
            return Err(Error::DimensionMismatch { expected: rows, got: a.nrows() });
        }
        if gamma.len() != a.ncols() {
            return Err(Error::DimensionMismatch { expected: a.ncols(), got: gamma.len() });
        }
        if let Some(d) = kernel.input_dim() {
            if d != landmark_features.ncols() {
                return Err(Error::DimensionMismatch { expected: d, got: landmark_features.ncols() });
            }
        }
        if !crate::linalg::all_finite(&a) || gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { a, gamma, kernel: Kernel::new(kernel)?, landmarks, p: rows / m, landmark_features })
    }

    /// Builds a model with `A` from PCI (or Gaussian) and `gamma = 0`.
    pub fn initialize(
        kernel: &KernelSpec,
        ds: &Dataset,
        landmarks: LandmarkSet,
        h: usize,
        init: InitMethod,
        seed: u64,
    ) -> Result<Self> {
        let features = landmark_rows(ds, &landmarks)?;
        let k = Kernel::new(kernel)?;
        let a = match init {
            InitMethod::Pci => pci_init(&k.matrix(&features, &features, 256)?, h)?.1,
            InitMethod::Random => random_init(features.nrows(), h, seed),
        };
        Self::new(kernel, landmarks, features, a, DVector::zeros(h))
    }

    pub fn h(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.landmarks.m()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn kernel_spec(&self) -> &KernelSpec {
        self.kernel.spec()
    }

    pub fn landmarks(&self) -> &LandmarkSet {
        &self.landmarks
    }

    pub fn landmark_features(&self) -> &DMatrix<f64> {
        &self.landmark_features
    }

    /// Sample index of landmark row `r`.
    pub fn landmark_sample(&self, r: usize) -> usize {
        self.landmarks.indices[r % self.m()]
    }

    pub fn k_mm(&self) -> Result<DMatrix<f64>> {
        self.kernel.matrix(&self.landmark_features, &self.landmark_features, 256)
    }

    pub fn k_nm(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.landmark_features.ncols() {
            return Err(Error::DimensionMismatch { expected: self.landmark_features.ncols(), got: x.ncols() });
        }
        self.kernel.matrix(x, &self.landmark_features, 256)
    }

    /// `Z = K_nm A + 1 gamma^T`.
    pub fn embed(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.embed_from_kernel(&self.k_nm(x)?))
    }

    pub fn embed_from_kernel(&self, k_nm: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = k_nm * &self.a;
        add_row_vector(&mut z, &self.gamma);
        z
    }

    pub fn tikhonov(&self, k_mm: &DMatrix<f64>) -> f64 {
        tikhonov(&self.a, k_mm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        let spec = serde_json::to_vec(self.kernel.spec())?;
        put_u32(w, len_u32(spec.len())?)?;
        w.write_all(&spec)?;
        put_u32(w, len_u32(self.m())?)?;
        put_u32(w, len_u32(self.p)?)?;
        for &i in &self.landmarks.indices {
            put_u32(w, len_u32(i)?)?;
        }
        w.write_all(&[self.landmarks.method.tag()])?;
        match &self.landmarks.scores {
            Some(s) => {
                w.write_all(&[1])?;
                put_u32(w, len_u32(s.len())?)?;
                for v in s {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            None => w.write_all(&[0])?,
        }
        put_matrix(w, &self.landmark_features)?;
        put_matrix(w, &self.a)?;
        put_u32(w, len_u32(self.gamma.len())?)?;
        for v in self.gamma.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("bad magic bytes".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}, expected {VERSION}")));
        }
        let spec_len = get_u32(r)? as usize;
        let mut spec = vec![0u8; spec_len];
        read_exact(r, &mut spec)?;
        let spec: KernelSpec =
            serde_json::from_slice(&spec).map_err(|e| Error::ModelFormat(format!("kernel description: {e}")))?;
        let m = get_u32(r)? as usize;
        let p = get_u32(r)? as usize;
        let indices = (0..m).map(|_| get_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let method = LandmarkMethod::from_tag(get_u8(r)?)
            .ok_or_else(|| Error::ModelFormat("unknown landmark method tag".into()))?;
        let scores = match get_u8(r)? {
            0 => None,
            1 => {
                let len = get_u32(r)? as usize;
                Some((0..len).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?)
            }
            t => return Err(Error::ModelFormat(format!("bad score flag {t}"))),
        };
        let features = get_matrix(r)?;
        if features.nrows() != m * p {
            return Err(Error::ModelFormat(format!(
                "landmark feature rows {} do not equal m * p = {}",
                features.nrows(),
                m * p
            )));
        }
        let a = get_matrix(r)?;
        let h = get_u32(r)? as usize;
        let gamma = DVector::from_vec((0..h).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?);
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::ModelFormat("trailing bytes after model data".into()));
        }
        let landmarks = LandmarkSet::new(indices, method, scores)?;
        Self::new(&spec, landmarks, features, a, gamma)
    }
}

fn len_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ModelFormat(format!("{v} does not fit in u32")))
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    put_u32(w, len_u32(m.nrows())?)?;
    put_u32(w, len_u32(m.ncols())?)?;
    for i in 0..m.nrows() {
        for v in m.row(i).iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::ModelFormat("truncated file".into()),
        _ => Error::Io(e),
    })
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_matrix(r: &mut impl Read) -> Result<DMatrix<f64>> {
    let rows = get_u32(r)? as usize;
    let cols = get_u32(r)? as usize;
    let data = (0..rows * cols).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
