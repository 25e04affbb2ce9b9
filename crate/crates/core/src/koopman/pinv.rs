use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::KoopmanError;
use crate::linalg::thin_svd;

pub const DEFAULT_REL_TOL: f64 = 1e-12;

/// Singular values and the rank decision of one pseudoinverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinvReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub rel_tol: f64,
    /// Absolute cutoff: `rel_tol * sigma_max * max(rows, cols)`.
    pub cutoff: f64,
}

/// Moore-Penrose pseudoinverse by SVD, dropping `sigma < cutoff`.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>, KoopmanError> {
    pinv_with_report(m, rel_tol).map(|(p, _)| p)
}

pub fn pinv_with_report(
    m: &DMatrix<f64>,
    rel_tol: f64,
) -> Result<(DMatrix<f64>, PinvReport), KoopmanError> {
    pinv_parts(m, rel_tol).map(|(p, _, r)| (p, r))
}

/// Pseudoinverse together with `I - M M^+`, the projector onto the discarded
/// left singular directions. Building the projector from the singular
/// vectors keeps it exact when nothing is discarded.
pub(crate) fn pinv_parts(
    m: &DMatrix<f64>,
    rel_tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, PinvReport), KoopmanError> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(KoopmanError::Invalid(format!(
            "rel_tol must lie in (0, 1), got {rel_tol}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(KoopmanError::NonFinite);
    }
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok((
            DMatrix::zeros(c, r),
            DMatrix::identity(r, r),
            PinvReport {
                singular_values: vec![],
                rank: 0,
                rel_tol,
                cutoff: 0.0,
            },
        ));
    }
    let svd = thin_svd(m).ok_or(KoopmanError::NonFinite)?;
    let sigma = &svd.s;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = rel_tol * smax * r.max(c) as f64;
    let mut out = DMatrix::zeros(c, r);
    let mut kept = DMatrix::<f64>::zeros(r, r);
    let mut rank = 0;
    for (k, &s) in sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let uk = svd.u.column(k);
        kept.ger(1.0, &uk, &uk, 1.0);
        rank += 1;
        // out += v_k u_k^T / s
        let vk = svd.v.column(k);
        out.ger(1.0 / s, &vk, &uk, 1.0);
    }
    let sv: Vec<f64> = sigma.iter().cloned().collect();
    // I - U_r U_r^T, or the exact zero when the thin U is square and complete
    let null = if rank == r {
        DMatrix::zeros(r, r)
    } else {
        let mut p = -kept;
        for i in 0..r {
            p[(i, i)] += 1.0;
        }
        p
    };
    Ok((
        out,
        null,
        PinvReport {
            singular_values: sv,
            rank,
            rel_tol,
            cutoff,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + b.norm())
    }

    #[test]
    fn examples() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        assert!(close(
            &pinv(&d, DEFAULT_REL_TOL).unwrap(),
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]),
            1e-15
        ));
        let ones = DMatrix::from_element(2, 2, 1.0);
        let (p, rep) = pinv_with_report(&ones, DEFAULT_REL_TOL).unwrap();
        assert_eq!(rep.rank, 1);
        assert!(close(&p, &DMatrix::from_element(2, 2, 0.25), 1e-14));

        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, -2.0, 0.5, 3.0, 1.0, -1.0, 2.0, 5.0]);
        let p = pinv(&m, DEFAULT_REL_TOL).unwrap();
        assert!(close(&(&p * &m), &DMatrix::identity(3, 3), 1e-10));
    }

    #[test]
    fn rejects_nan_and_bad_tol() {
        let m = DMatrix::from_element(1, 1, f64::NAN);
        assert!(matches!(pinv(&m, 1e-12), Err(KoopmanError::NonFinite)));
        assert!(pinv(&DMatrix::identity(2, 2), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn penrose_identities(r in 1usize..6, c in 1usize..6, rank in 1usize..4,
                              seed in prop::collection::vec(-1.0f64..1.0, 60)) {
            let k = rank.min(r).min(c);
            let a = DMatrix::from_fn(r, k, |i, j| seed[(i * 5 + j) % 60]);
            let b = DMatrix::from_fn(k, c, |i, j| seed[(30 + i * 7 + j) % 60]);
            let m = &a * &b;
            let p = pinv(&m, DEFAULT_REL_TOL).unwrap();
            let tol = 1e-8;
            prop_assert!(close(&(&m * &p * &m), &m, tol));
            prop_assert!(close(&(&p * &m * &p), &p, tol));
            let mp = &m * &p;
            let pm = &p * &m;
            prop_assert!(close(&mp.transpose(), &mp, tol));
            prop_assert!(close(&pm.transpose(), &pm, tol));
        }
    }
}
