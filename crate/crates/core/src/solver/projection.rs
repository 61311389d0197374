use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::Taxonomy;
use crate::model::{Hyperparams, Params};
use crate::{Error, Result};

/// Elementwise clamp of `v` into `[lo, hi]`.
pub fn project_box(v: ArrayView1<f64>, lo: f64, hi: f64) -> Result<Array1<f64>> {
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "empty box: lo {lo} > hi {hi}"
        )));
    }
    Ok(v.mapv(|x| x.clamp(lo, hi)))
}

/// Rescales every column whose squared norm exceeds `bound` onto the sphere of
/// squared radius `bound`; other columns are untouched.
pub fn project_column_norm(m: ArrayView2<f64>, bound: f64) -> Result<Array2<f64>> {
    if !(bound > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "column norm bound must be > 0, got {bound}"
        )));
    }
    let mut out = m.to_owned();
    clamp_columns(&mut out, bound);
    Ok(out)
}

pub(crate) fn clamp_columns(m: &mut Array2<f64>, bound: f64) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let sq = col.dot(&col);
        if sq > bound {
            col *= (bound / sq).sqrt();
        }
    }
}

/// Applies every feasibility constraint of the model in place.
pub(crate) fn project_all(p: &mut Params, hyper: &Hyperparams, taxonomy: &Taxonomy) {
    clamp_columns(&mut p.w, hyper.lambda);
    clamp_columns(&mut p.u_cat, hyper.lambda);
    clamp_columns(&mut p.u_sup, hyper.lambda);
    clamp_columns(&mut p.u_attr, hyper.attr_bound());
    project_b(&mut p.b, hyper.gamma1, taxonomy);
}

pub(crate) fn project_b(b: &mut Array2<f64>, gamma1: f64, taxonomy: &Taxonomy) {
    b.mapv_inplace(|v| v.clamp(0.0, gamma1));
    for id in taxonomy.node_ids() {
        if taxonomy.parent_idx(id.index()).is_none() {
            b.column_mut(id.index()).fill(0.0);
        }
    }
}
