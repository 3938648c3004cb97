//! Normalised-temperature cross-entropy over `2n` embeddings.
//!
//! Rows of `[Z_A; Z_B]` are l2-normalised to `U` and `S = U U^T / tau`. Row
//! `k` is a softmax over all `l != k`, with target the other view of the same
//! sample (`k + n mod 2n`). The loss is the mean cross-entropy over all rows.

use nalgebra::DMatrix;

use super::NORM_EPS;

#[derive(Debug, Clone)]
pub struct SimclrForward {
    pub u: DMatrix<f64>,
    pub norms: Vec<f64>,
    /// Row-softmax probabilities with zero diagonal.
    pub probs: DMatrix<f64>,
    pub value: f64,
    pub tau: f64,
}

pub fn positive_of(k: usize, n: usize) -> usize {
    (k + n) % (2 * n)
}

pub fn stack_views(za: &DMatrix<f64>, zb: &DMatrix<f64>) -> DMatrix<f64> {
    super::stack_rows(&[za.clone(), zb.clone()])
}

pub(crate) fn normalize_rows(z: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let norms: Vec<f64> = z.row_iter().map(|r| (r.norm_squared() + NORM_EPS).sqrt()).collect();
    let mut u = z.clone();
    for (i, mut row) in u.row_iter_mut().enumerate() {
        row /= norms[i];
    }
    (u, norms)
}

/// Reverse-mode derivative of row normalisation.
pub(crate) fn normalize_rows_vjp(u: &DMatrix<f64>, norms: &[f64], g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = g.clone();
    for (i, &norm) in norms.iter().enumerate() {
        let proj = u.row(i).dot(&g.row(i));
        let row = (g.row(i) - u.row(i) * proj) / norm;
        out.set_row(i, &row);
    }
    out
}

/// Forward-mode derivative of row normalisation (the same linear map).
pub(crate) fn normalize_rows_jvp(u: &DMatrix<f64>, norms: &[f64], dz: &DMatrix<f64>) -> DMatrix<f64> {
    normalize_rows_vjp(u, norms, dz)
}

impl SimclrForward {
    pub fn new(za: &DMatrix<f64>, zb: &DMatrix<f64>, tau: f64) -> Self {
        let n = za.nrows();
        let z = stack_views(za, zb);
        let (u, norms) = normalize_rows(&z);
        let s = &u * u.transpose() / tau;
        let two_n = 2 * n;
        let mut probs = DMatrix::zeros(two_n, two_n);
        let mut value = 0.0;
        for k in 0..two_n {
            let max = (0..two_n).filter(|&l| l != k).map(|l| s[(k, l)]).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for l in (0..two_n).filter(|&l| l != k) {
                let e = (s[(k, l)] - max).exp();
                probs[(k, l)] = e;
                denom += e;
            }
            for l in 0..two_n {
                probs[(k, l)] /= denom;
            }
            value += -(s[(k, positive_of(k, n))] - max) + denom.ln();
        }
        Self { u, norms, probs, value: value / two_n as f64, tau }
    }

    /// Gradient with respect to the logits `S` (diagonal excluded).
    pub fn grad_logits(&self) -> DMatrix<f64> {
        let two_n = self.u.nrows();
        let n = two_n / 2;
        let mut g = self.probs.clone();
        for k in 0..two_n {
            g[(k, positive_of(k, n))] -= 1.0;
        }
        g / two_n as f64
    }

    /// Pulls a logit cotangent (zero diagonal) back to `(dZ_A, dZ_B)`.
    pub fn vjp(&self, g: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let du = (g + g.transpose()) * &self.u / self.tau;
        let dz = normalize_rows_vjp(&self.u, &self.norms, &du);
        let n = self.u.nrows() / 2;
        (dz.rows(0, n).into_owned(), dz.rows(n, n).into_owned())
    }

    /// Pushes embedding tangents forward to a logit tangent (zero diagonal).
    pub fn jvp(&self, dza: &DMatrix<f64>, dzb: &DMatrix<f64>) -> DMatrix<f64> {
        let dz = stack_views(dza, dzb);
        let du = normalize_rows_jvp(&self.u, &self.norms, &dz);
        let mut ds = (&du * self.u.transpose() + &self.u * du.transpose()) / self.tau;
        ds.fill_diagonal(0.0);
        ds
    }

    /// Applies the per-row softmax curvature `(diag p - p p^T) / 2n`.
    pub fn apply_q(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let two_n = self.probs.nrows();
        let mut out = DMatrix::zeros(two_n, two_n);
        for k in 0..two_n {
            let p = self.probs.row(k);
            let pv = p.dot(&v.row(k));
            for l in 0..two_n {
                out[(k, l)] = p[l] * (v[(k, l)] - pv);
            }
        }
        out / two_n as f64
    }
}

pub fn simclr_loss(za: &DMatrix<f64>, zb: &DMatrix<f64>, tau: f64) -> (f64, DMatrix<f64>, DMatrix<f64>) {
    let fwd = SimclrForward::new(za, zb, tau);
    let (ga, gb) = fwd.vjp(&fwd.grad_logits());
    (fwd.value, ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::seeded_rng;
    use nalgebra::Rotation3;
    use rand::Rng;

    #[test]
    fn orthogonal_pairs_give_log_three() {
        let za = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let zb = DMatrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let (v, _, _) = simclr_loss(&za, &zb, 0.5);
        assert!((v - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infinite_temperature_limit() {
        let mut rng = seeded_rng(2);
        let n = 5;
        let za = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let zb = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let (v, _, _) = simclr_loss(&za, &zb, 1e9);
        assert!((v - ((2 * n - 1) as f64).ln()).abs() < 1e-7);
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = seeded_rng(5);
        let za = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let zb = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let rot = DMatrix::from_iterator(3, 3, r.matrix().iter().copied());
        let (v, _, _) = simclr_loss(&za, &zb, 0.2);
        let (w, _, _) = simclr_loss(&(&za * &rot), &(&zb * &rot), 0.2);
        assert!((v - w).abs() < 1e-8);
    }

    #[test]
    fn q_annihilates_constants_and_is_psd() {
        let mut rng = seeded_rng(8);
        let za = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let zb = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let fwd = SimclrForward::new(&za, &zb, 1.0);
        let mut ones = DMatrix::from_element(6, 6, 1.0);
        ones.fill_diagonal(0.0);
        assert!(fwd.apply_q(&ones).amax() < 1e-15);
        for _ in 0..100 {
            let v = DMatrix::from_fn(6, 6, |i, j| if i == j { 0.0 } else { rng.random_range(-1.0..1.0) });
            assert!(crate::linalg::frob_dot(&v, &fwd.apply_q(&v)) >= -1e-15);
        }
    }
}
