//! Cone geometry for the interior-point method: symmetric-matrix
//! scalarization, Nesterov-Todd scaling and Jordan-algebra products.
//!
//! A PSD block of side `s` is stored as `svec(X)`: the lower triangle in
//! column-major order (`for j in 0..s { for i in j..s { X[i][j] } }`) with
//! off-diagonal entries multiplied by `sqrt(2)`, so `<X, Y> = svec(X) . svec(Y)`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::thin_svd;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

pub fn svec_len(side: usize) -> usize {
    side * (side + 1) / 2
}

fn column_start(side: usize, j: usize) -> usize {
    j * side - j * j.saturating_sub(1) / 2
}

/// Position of entry `(i, j)`, `i >= j`, inside `svec`.
pub fn svec_index(side: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < side);
    column_start(side, j) + (i - j)
}

pub fn smat(v: &[f64], side: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(side, side);
    let mut k = 0;
    for j in 0..side {
        for i in j..side {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let e = v[k] / SQRT2;
                m[(i, j)] = e;
                m[(j, i)] = e;
            }
            k += 1;
        }
    }
    m
}

pub fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let side = m.nrows();
    let mut k = 0;
    for j in 0..side {
        for i in j..side {
            out[k] = if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * SQRT2
            };
            k += 1;
        }
    }
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; svec_len(m.nrows())];
    svec_into(m, &mut out);
    out
}

/// A conic block of the standard-form problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Nonneg { offset: usize, len: usize },
    Psd { offset: usize, side: usize },
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        match *self {
            Block::Nonneg { offset, len } => offset..offset + len,
            Block::Psd { offset, side } => offset..offset + svec_len(side),
        }
    }

    /// Barrier degree.
    pub fn degree(&self) -> usize {
        match *self {
            Block::Nonneg { len, .. } => len,
            Block::Psd { side, .. } => side,
        }
    }
}

/// Identity element of the cone product.
pub fn identity(blocks: &[Block], n: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    for b in blocks {
        match *b {
            Block::Nonneg { offset, len } => e.rows_mut(offset, len).fill(1.0),
            Block::Psd { offset, side } => {
                for j in 0..side {
                    e[offset + column_start(side, j)] = 1.0;
                }
            }
        }
    }
    e
}

/// Smallest eigenvalue per block (the element itself for nonneg entries);
/// `>= 0` means inside the cone.
pub fn min_cone_value(blocks: &[Block], v: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for b in blocks {
        match *b {
            Block::Nonneg { offset, len } => {
                for x in &v[offset..offset + len] {
                    m = m.min(*x);
                }
            }
            Block::Psd { offset, side } => {
                let mat = smat(&v[offset..offset + svec_len(side)], side);
                let e = mat.symmetric_eigenvalues();
                m = m.min(e.min());
            }
        }
    }
    m
}

/// Nesterov-Todd scaling of one block: `W s = W^{-T} x = lambda`.
enum BlockScaling {
    /// `W = diag(w)`, `w = sqrt(x / s)`.
    Nonneg {
        w: DVector<f64>,
        lambda: DVector<f64>,
    },
    /// `W(Z) = R^T Z R`, `W^{-T}(X) = R^{-1} X R^{-T}`, `lambda = diag(sigma)`.
    Psd {
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
        lambda: DVector<f64>,
    },
}

pub struct Scaling {
    blocks: Vec<Block>,
    scal: Vec<BlockScaling>,
}

/// Some `L` with `X = L L^T`: Cholesky, or an eigen square root when the
/// factorization breaks down numerically.
fn factor(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = x.clone().cholesky() {
        return Some(ch.l());
    }
    let eig = x.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|e| !e.is_finite() || *e <= 0.0) {
        return None;
    }
    let sq = eig.eigenvalues.map(f64::sqrt);
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&sq))
}

impl Scaling {
    /// `None` if `x` or `s` is not strictly inside the cone.
    pub fn new(blocks: &[Block], x: &DVector<f64>, s: &DVector<f64>) -> Option<Self> {
        let mut scal = Vec::with_capacity(blocks.len());
        for b in blocks {
            match *b {
                Block::Nonneg { offset, len } => {
                    let xs = x.rows(offset, len);
                    let ss = s.rows(offset, len);
                    if xs.iter().chain(ss.iter()).any(|v| !positive(*v)) {
                        return None;
                    }
                    let w = xs.zip_map(&ss, |a, b| (a / b).sqrt());
                    let lambda = xs.zip_map(&ss, |a, b| (a * b).sqrt());
                    scal.push(BlockScaling::Nonneg { w, lambda });
                }
                Block::Psd { offset, side } => {
                    let n = svec_len(side);
                    let xm = smat(x.rows(offset, n).as_slice(), side);
                    let sm = smat(s.rows(offset, n).as_slice(), side);
                    let lx = factor(&xm)?;
                    let ls = factor(&sm)?;
                    let svd = thin_svd(&(ls.transpose() * &lx))?;
                    let (u, v, sig) = (svd.u, svd.v, svd.s);
                    if sig.iter().any(|v| !positive(*v) || !v.is_finite()) {
                        return None;
                    }
                    let isq = sig.map(|v| 1.0 / v.sqrt());
                    let r = &lx * v * DMatrix::from_diagonal(&isq);
                    let rinv = DMatrix::from_diagonal(&isq) * u.transpose() * ls.transpose();
                    scal.push(BlockScaling::Psd {
                        r,
                        rinv,
                        lambda: sig,
                    });
                }
            }
        }
        Some(Self {
            blocks: blocks.to_vec(),
            scal,
        })
    }

    fn map_blocks(
        &self,
        v: &DVector<f64>,
        nonneg: impl Fn(&DVector<f64>, f64, usize) -> f64,
        psd: impl Fn(&BlockScaling, &DMatrix<f64>) -> DMatrix<f64>,
    ) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (b, sc) in self.blocks.iter().zip(&self.scal) {
            match (*b, sc) {
                (Block::Nonneg { offset, len }, BlockScaling::Nonneg { w, .. }) => {
                    for i in 0..len {
                        out[offset + i] = nonneg(w, v[offset + i], i);
                    }
                }
                (Block::Psd { offset, side }, sc) => {
                    let n = svec_len(side);
                    let m = smat(v.rows(offset, n).as_slice(), side);
                    svec_into(&psd(sc, &m), out.rows_mut(offset, n).as_mut_slice());
                }
                _ => unreachable!("scaling matches block layout"),
            }
        }
        out
    }

    /// `W s` (s-type vector to the scaled space).
    pub fn w(&self, v: &DVector<f64>) -> DVector<f64> {
        self.map_blocks(
            v,
            |w, vi, i| vi * w[i],
            |sc, m| match sc {
                BlockScaling::Psd { r, .. } => r.transpose() * m * r,
                _ => unreachable!(),
            },
        )
    }

    /// `W^{-T} x` (x-type vector to the scaled space).
    pub fn w_inv_t(&self, v: &DVector<f64>) -> DVector<f64> {
        self.map_blocks(
            v,
            |w, vi, i| vi / w[i],
            |sc, m| match sc {
                BlockScaling::Psd { rinv, .. } => rinv * m * rinv.transpose(),
                _ => unreachable!(),
            },
        )
    }

    /// `W^T u` (scaled space to x-type).
    pub fn w_t(&self, v: &DVector<f64>) -> DVector<f64> {
        self.map_blocks(
            v,
            |w, vi, i| vi * w[i],
            |sc, m| match sc {
                BlockScaling::Psd { r, .. } => r * m * r.transpose(),
                _ => unreachable!(),
            },
        )
    }

    /// `W^T W z`.
    pub fn d(&self, v: &DVector<f64>) -> DVector<f64> {
        self.w_t(&self.w(v))
    }

    /// `lambda` in svec layout.
    pub fn lambda(&self, n: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n);
        for (b, sc) in self.blocks.iter().zip(&self.scal) {
            match (*b, sc) {
                (Block::Nonneg { offset, len }, BlockScaling::Nonneg { lambda, .. }) => {
                    out.rows_mut(offset, len).copy_from(lambda);
                }
                (Block::Psd { offset, side }, BlockScaling::Psd { lambda, .. }) => {
                    let m = DMatrix::from_diagonal(lambda);
                    svec_into(&m, out.rows_mut(offset, svec_len(side)).as_mut_slice());
                }
                _ => unreachable!(),
            }
        }
        out
    }

    /// Solves `lambda o u = d` for `u`.
    pub fn lambda_div(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(d.len());
        for (b, sc) in self.blocks.iter().zip(&self.scal) {
            match (*b, sc) {
                (Block::Nonneg { offset, len }, BlockScaling::Nonneg { lambda, .. }) => {
                    for i in 0..len {
                        out[offset + i] = d[offset + i] / lambda[i];
                    }
                }
                (Block::Psd { offset, side }, BlockScaling::Psd { lambda, .. }) => {
                    let n = svec_len(side);
                    let dm = smat(d.rows(offset, n).as_slice(), side);
                    let um = DMatrix::from_fn(side, side, |i, j| {
                        2.0 * dm[(i, j)] / (lambda[i] + lambda[j])
                    });
                    svec_into(&um, out.rows_mut(offset, n).as_mut_slice());
                }
                _ => unreachable!(),
            }
        }
        out
    }

    /// Largest `alpha` with `lambda + alpha * dl` in the cone (capped at `cap`).
    pub fn max_step(&self, dl: &DVector<f64>, cap: f64) -> f64 {
        let mut alpha = cap;
        for (b, sc) in self.blocks.iter().zip(&self.scal) {
            match (*b, sc) {
                (Block::Nonneg { offset, len }, BlockScaling::Nonneg { lambda, .. }) => {
                    for i in 0..len {
                        let di = dl[offset + i];
                        if di < 0.0 {
                            alpha = alpha.min(-lambda[i] / di);
                        }
                    }
                }
                (Block::Psd { offset, side }, BlockScaling::Psd { lambda, .. }) => {
                    let n = svec_len(side);
                    let dm = smat(dl.rows(offset, n).as_slice(), side);
                    let isq = lambda.map(|v| 1.0 / v.sqrt());
                    let scaled = DMatrix::from_fn(side, side, |i, j| isq[i] * dm[(i, j)] * isq[j]);
                    let emin = scaled.symmetric_eigenvalues().min();
                    if emin < 0.0 {
                        alpha = alpha.min(-1.0 / emin);
                    }
                }
                _ => unreachable!(),
            }
        }
        alpha
    }
}

/// Jordan product `u o v` (elementwise for nonneg, `(UV + VU)/2` for PSD).
pub fn jordan(blocks: &[Block], u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(u.len());
    for b in blocks {
        match *b {
            Block::Nonneg { offset, len } => {
                for i in offset..offset + len {
                    out[i] = u[i] * v[i];
                }
            }
            Block::Psd { offset, side } => {
                let n = svec_len(side);
                let um = smat(u.rows(offset, n).as_slice(), side);
                let vm = smat(v.rows(offset, n).as_slice(), side);
                let p = (&um * &vm + &vm * &um) * 0.5;
                svec_into(&p, out.rows_mut(offset, n).as_mut_slice());
            }
        }
    }
    out
}

/// False for NaN as well as for nonpositive values.
fn positive(v: f64) -> bool {
    v > 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_inner_product() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -1.0, 1.0, 3.0, 0.5, -1.0, 0.5, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.0, -2.0, 0.5, 4.0, 0.0, 4.0, 2.0]);
        let ip: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        assert!((ip - a.component_mul(&b).sum()).abs() < 1e-14);
        assert_eq!(smat(&svec(&a), 3), a);
        // column-major lower triangle: (0,0) (1,0) (2,0) (1,1) (2,1) (2,2)
        let v = svec(&a);
        assert_eq!(v[0], 2.0);
        assert!((v[1] - SQRT2).abs() < 1e-15);
        assert_eq!(v[3], 3.0);
        assert_eq!(v[5], 1.0);
    }

    #[test]
    fn identity_marks_diagonals() {
        let blocks = [
            Block::Nonneg { offset: 0, len: 2 },
            Block::Psd { offset: 2, side: 3 },
        ];
        let e = identity(&blocks, 8);
        assert_eq!(e.as_slice(), &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn nt_scaling_identities() {
        let blocks = [
            Block::Nonneg { offset: 0, len: 1 },
            Block::Psd { offset: 1, side: 2 },
        ];
        let xm = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let sm = DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 3.0]);
        let mut x = vec![4.0];
        x.extend(svec(&xm));
        let mut s = vec![0.25];
        s.extend(svec(&sm));
        let (x, s) = (DVector::from_vec(x), DVector::from_vec(s));
        let sc = Scaling::new(&blocks, &x, &s).unwrap();
        let lam = sc.lambda(4);
        assert!((sc.w(&s) - &lam).norm() < 1e-12);
        assert!((sc.w_inv_t(&x) - &lam).norm() < 1e-12);
        // D maps s to x
        assert!((sc.d(&s) - &x).norm() < 1e-12);
        let d = DVector::from_vec(vec![0.7, 0.1, -0.4, 0.9]);
        let u = sc.lambda_div(&d);
        assert!((jordan(&blocks, &lam, &u) - d).norm() < 1e-12);
    }
}
