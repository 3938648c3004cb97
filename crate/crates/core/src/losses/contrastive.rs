//! Simple and spectral contrastive losses with in-batch negatives.
//!
//! Anchors are the rows of `Z`, positives the matching rows of `Z_pos`, and
//! the negative of row `i` is row `neg[i]` of `Z_pos`, where `neg` is a
//! derangement of the batch.
//!
//! simple:   `mean_i [ z_i . z_neg(i) - z_i . z_pos_i ]`
//! spectral: `mean_i [ -2 z_i . z_pos_i + (z_i . z_neg(i))^2 ]`

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};

/// Uniformly random cyclic permutation (Sattolo), which has no fixed points.
pub fn derangement(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        perm.swap(i, j);
    }
    perm
}

fn check(z: &DMatrix<f64>, pos: &DMatrix<f64>, neg: &[usize]) -> Result<()> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::validation("contrastive losses need a batch of at least two rows"));
    }
    if pos.shape() != z.shape() || neg.len() != n || neg.iter().any(|&j| j >= n) {
        return Err(Error::validation("anchor, positive and negative rows must align"));
    }
    Ok(())
}

pub fn simple_contrastive_loss(
    z: &DMatrix<f64>,
    pos: &DMatrix<f64>,
    neg: &[usize],
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    check(z, pos, neg)?;
    let n = z.nrows() as f64;
    let mut value = 0.0;
    let mut gz = DMatrix::zeros(z.nrows(), z.ncols());
    let mut gp = DMatrix::zeros(z.nrows(), z.ncols());
    for (i, &j) in neg.iter().enumerate() {
        let zi = z.row(i);
        value += zi.dot(&pos.row(j)) - zi.dot(&pos.row(i));
        let row = (pos.row(j) - pos.row(i)) / n;
        gz.set_row(i, &row);
        let zi_n = zi / n;
        let mut pi = gp.row_mut(i);
        pi -= &zi_n;
        let mut pj = gp.row_mut(j);
        pj += &zi_n;
    }
    Ok((value / n, gz, gp))
}

pub fn spectral_contrastive_loss(
    z: &DMatrix<f64>,
    pos: &DMatrix<f64>,
    neg: &[usize],
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>)> {
    check(z, pos, neg)?;
    let n = z.nrows() as f64;
    let mut value = 0.0;
    let mut gz = DMatrix::zeros(z.nrows(), z.ncols());
    let mut gp = DMatrix::zeros(z.nrows(), z.ncols());
    for (i, &j) in neg.iter().enumerate() {
        let zi = z.row(i);
        let s_pos = zi.dot(&pos.row(i));
        let s_neg = zi.dot(&pos.row(j));
        value += -2.0 * s_pos + s_neg * s_neg;
        let row = (pos.row(i) * -2.0 + pos.row(j) * (2.0 * s_neg)) / n;
        gz.set_row(i, &row);
        let to_pos = zi * (-2.0 / n);
        let mut pi = gp.row_mut(i);
        pi += &to_pos;
        let to_neg = zi * (2.0 * s_neg / n);
        let mut pj = gp.row_mut(j);
        pj += &to_neg;
    }
    Ok((value / n, gz, gp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::seeded_rng;

    #[test]
    fn derangements_have_no_fixed_points() {
        let mut rng = seeded_rng(0);
        for n in 2..30 {
            let d = derangement(n, &mut rng);
            assert!(d.iter().enumerate().all(|(i, &j)| i != j));
            let mut s = d.clone();
            s.sort();
            assert_eq!(s, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn simple_cancels_when_all_equal() {
        let z = DMatrix::from_element(4, 3, 0.7);
        let neg = vec![1, 2, 3, 0];
        assert_eq!(simple_contrastive_loss(&z, &z, &neg).unwrap().0, 0.0);
    }

    #[test]
    fn spectral_ideal_value() {
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (v, _, _) = spectral_contrastive_loss(&z, &z, &[1, 0]).unwrap();
        assert_eq!(v, -2.0);
    }

    #[test]
    fn single_row_batch_is_rejected() {
        let z = DMatrix::from_element(1, 2, 1.0);
        assert!(simple_contrastive_loss(&z, &z, &[0]).is_err());
        assert!(spectral_contrastive_loss(&z, &z, &[0]).is_err());
    }
}
