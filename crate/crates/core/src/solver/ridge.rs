use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::data::{Dataset, NodeId};
use crate::linalg::solve_spd;
use crate::{Error, Result};

/// Linear regressor from features onto one-hot concept indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    /// `m x d`, rows indexed by concept (leaves first, then supercategories,
    /// then attributes).
    pub coef: Array2<f64>,
    pub num_leaves: usize,
}

/// Closed-form minimizer of `sum_i ||M x_i - e_{y_i}||^2 + lambda ||M||_F^2`.
pub fn fit_ridge(dataset: &Dataset, lambda: f64) -> Result<RidgeModel> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge lambda must be > 0, got {lambda}"
        )));
    }
    let x = dataset.features();
    let d = dataset.dim();
    let m = dataset.num_concepts();
    let mut gram = x.t().dot(x);
    for i in 0..d {
        gram[[i, i]] += lambda;
    }
    // X^T Y where Y is the one-hot target matrix
    let mut xty = Array2::<f64>::zeros((d, m));
    for (row, y) in x.axis_iter(Axis(0)).zip(dataset.labels()) {
        xty.column_mut(y.index()).scaled_add(1.0, &row);
    }
    let coef_t = solve_spd(&gram, &xty)?;
    Ok(RidgeModel {
        coef: coef_t.reversed_axes().as_standard_layout().to_owned(),
        num_leaves: dataset.taxonomy().num_leaves(),
    })
}

impl RidgeModel {
    /// Scores of every leaf for `x`.
    pub fn leaf_scores(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.coef.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, ridge model expects {}",
                x.len(),
                self.coef.ncols()
            )));
        }
        Ok(self.coef.slice(ndarray::s![..self.num_leaves, ..]).dot(&x))
    }

    /// Leaves by descending score; ties go to the smaller id.
    pub fn predict_ranked(&self, x: ArrayView1<f64>) -> Result<Vec<NodeId>> {
        let scores = self.leaf_scores(x)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Ok(order.into_iter().map(NodeId::from_index).collect())
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<NodeId> {
        Ok(self.predict_ranked(x)?[0])
    }
}
