//! Thin bridge to nalgebra for the few dense factorizations we need.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::{Error, Result};

pub(crate) fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let chol = to_na(a)
        .cholesky()
        .ok_or_else(|| Error::Validation("system matrix is not positive definite".into()))?;
    Ok(from_na(&chol.solve(&to_na(b))))
}

/// Thin SVD with singular values sorted descending: `(U, sigma, V^T)`.
pub(crate) fn svd_sorted(m: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let svd = to_na(m).svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let sigma = order.iter().map(|&k| svd.singular_values[k]).collect();
    let u_sorted = Array2::from_shape_fn((u.nrows(), order.len()), |(i, j)| u[(i, order[j])]);
    let vt_sorted = Array2::from_shape_fn((order.len(), vt.ncols()), |(i, j)| vt[(order[i], j)]);
    (u_sorted, sigma, vt_sorted)
}

/// Orthonormalizes the columns of a tall matrix (thin QR).
pub(crate) fn orthonormal_columns(m: &Array2<f64>) -> Array2<f64> {
    let q = to_na(m).qr().q();
    from_na(&q.columns(0, m.ncols()).into_owned())
}
