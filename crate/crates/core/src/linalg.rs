//! Small dense linear-algebra helpers over `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

pub(crate) fn mean(rows: &[DVector<f64>]) -> DVector<f64> {
    let d = rows[0].len();
    let mut m = DVector::zeros(d);
    for r in rows {
        m += r;
    }
    m / rows.len() as f64
}

/// Biased (1/N) covariance about `center`.
pub(crate) fn covariance(rows: &[DVector<f64>], center: &DVector<f64>) -> DMatrix<f64> {
    let d = center.len();
    let mut c = DMatrix::zeros(d, d);
    for r in rows {
        let x = r - center;
        c.ger(1.0, &x, &x, 1.0);
    }
    c / rows.len() as f64
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order; eigenvectors are the matching columns.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub(crate) fn cholesky(m: &DMatrix<f64>, op: &'static str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.cholesky().ok_or(Error::Numerical(op))
}

pub(crate) fn log_det_chol(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}
