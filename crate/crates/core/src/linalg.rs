//! Small dense helpers: column-pivoted Householder QR and SPD log-determinants.

use nalgebra::{DMatrix, DVector};

/// Column-pivoted QR, `A P = Q R`.
#[derive(Clone, Debug)]
pub struct ColPivQr {
    /// Upper-trapezoidal factor, `min(m, n) x n`, columns in pivoted order.
    pub r: DMatrix<f64>,
    /// `perm[j]` is the original column placed at position `j`.
    pub perm: Vec<usize>,
}

impl ColPivQr {
    /// Number of leading diagonal entries with `|r_kk| > tol * |r_11|`.
    pub fn rank(&self, tol: f64) -> usize {
        let k = self.r.nrows().min(self.r.ncols());
        if k == 0 {
            return 0;
        }
        let r11 = self.r[(0, 0)].abs();
        if r11 == 0.0 {
            return 0;
        }
        (0..k)
            .take_while(|&i| self.r[(i, i)].abs() > tol * r11)
            .count()
    }
}

/// Businger-Golub pivoting: at each step the remaining column with the largest
/// trailing norm is moved to the front. Norms are recomputed rather than
/// downdated.
pub fn col_piv_qr(a: &DMatrix<f64>) -> ColPivQr {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);
    for k in 0..steps {
        let (mut best, mut best_norm) = (k, -1.0);
        for j in k..n {
            let nrm = w.view((k, j), (m - k, 1)).norm_squared();
            if nrm > best_norm {
                best = j;
                best_norm = nrm;
            }
        }
        if best != k {
            w.swap_columns(k, best);
            perm.swap(k, best);
        }
        let x_norm = best_norm.sqrt();
        if x_norm == 0.0 {
            break;
        }
        let x0 = w[(k, k)];
        let alpha = if x0 >= 0.0 { -x_norm } else { x_norm };
        let mut v: DVector<f64> = w.view((k, k), (m - k, 1)).column(0).into_owned();
        v[0] -= alpha;
        let v_norm2 = v.norm_squared();
        w[(k, k)] = alpha;
        for i in k + 1..m {
            w[(i, k)] = 0.0;
        }
        if v_norm2 == 0.0 {
            continue;
        }
        for j in k + 1..n {
            let mut col = w.view_mut((k, j), (m - k, 1));
            let mut col = col.column_mut(0);
            let s = v.dot(&col) * 2.0 / v_norm2;
            col.axpy(-s, &v, 1.0);
        }
    }
    let mut r = w.rows(0, steps).into_owned();
    for i in 0..steps {
        for j in 0..i.min(n) {
            r[(i, j)] = 0.0;
        }
    }
    ColPivQr { r, perm }
}

/// Solves `R x = b` for upper-triangular `R` (square, nonsingular diagonal).
pub fn solve_upper(r: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// `log det M` for symmetric positive-definite `M`; `None` when the Cholesky
/// factorisation fails or the result is not finite.
pub fn logdet_spd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut s = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) {
            return None;
        }
        s += d.ln();
    }
    let ld = 2.0 * s;
    ld.is_finite().then_some(ld)
}

/// Numerical rank from singular values, relative to the largest one.
pub fn svd_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > tol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn qr_reconstructs_permuted_gram_matrix() {
        let a = DMatrix::from_row_slice(
            5,
            3,
            &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.0, 4.0, 1.0, 2.0, -1.0, 0.0, 1.5, 0.5, 0.25],
        );
        let qr = col_piv_qr(&a);
        let mut ap = DMatrix::zeros(5, 3);
        for (j, &p) in qr.perm.iter().enumerate() {
            ap.set_column(j, &a.column(p));
        }
        // A^T A = R^T R for the permuted columns
        assert_relative_eq!(ap.transpose() * &ap, qr.r.transpose() * &qr.r, epsilon = 1e-12);
        assert_eq!(qr.rank(1e-10), 3);
        // diagonal magnitudes are non-increasing
        assert!(qr.r[(0, 0)].abs() >= qr.r[(1, 1)].abs());
        assert!(qr.r[(1, 1)].abs() >= qr.r[(2, 2)].abs());
    }

    #[test]
    fn qr_detects_dependent_column() {
        let mut a = DMatrix::from_fn(6, 3, |i, j| 1.0 / (i + j + 1) as f64);
        let c = a.column(0) * 2.0 - a.column(1);
        a = a.insert_column(3, 0.0);
        a.set_column(3, &c);
        let qr = col_piv_qr(&a);
        assert_eq!(qr.rank(1e-10), 3);
        assert_eq!(svd_rank(&a, 1e-10), 3);
    }

    #[test]
    fn logdet_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.5]));
        assert_relative_eq!(logdet_spd(&m).unwrap(), 2.0f64.ln(), epsilon = 1e-14);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(logdet_spd(&s).is_none());
    }
}
