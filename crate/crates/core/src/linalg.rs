//! Dense SVD on `nalgebra` matrices, computed with `faer`.
//!
//! nalgebra's own bidiagonal SVD loses accuracy on rank-deficient input
//! (reconstruction errors far above rounding), and most matrices here are
//! rank-deficient by construction.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

/// Thin SVD `m = u * diag(s) * v'`, singular values descending.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// `None` if the iteration fails to converge or the input is not finite.
pub fn thin_svd(m: &DMatrix<f64>) -> Option<Svd> {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Some(Svd {
            u: DMatrix::zeros(r, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(c, 0),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let fm = Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Some(Svd {
        u: DMatrix::from_fn(r, k, |i, j| u[(i, j)]),
        s: DVector::from_fn(k, |i, _| s[i]),
        v: DMatrix::from_fn(c, k, |i, j| v[(i, j)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_deficient_reconstruction() {
        // rank 2, 5 x 7
        let a = DMatrix::from_fn(5, 2, |i, j| ((i + 2 * j) as f64).sin());
        let b = DMatrix::from_fn(2, 7, |i, j| ((3 * i + j) as f64).cos());
        let m = &a * &b;
        let svd = thin_svd(&m).unwrap();
        let rec = &svd.u * DMatrix::from_diagonal(&svd.s) * svd.v.transpose();
        assert!((rec - &m).norm() < 1e-13);
        assert!(svd.s[2] < 1e-14 * svd.s[0]);
        assert!(svd.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }
}
