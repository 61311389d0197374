//! The `B` subproblem: box-constrained, exclusivity-coupled sparse coding of
//! every non-root node against the attribute dictionary.
//!
//! With embeddings fixed, the regularizer is a convex quadratic in `B`.
//! Collecting every term that touches column `beta_c` gives
//!
//! ```text
//! beta^T (D^T D + gamma2 n_c I) beta - 2 (D^T (u_c - u_p) - gamma2 sum_o beta_o)^T beta
//! ```
//!
//! where `n_c = |anc(c)| + 2 |sib(c)| + |desc(c)|` and the sum runs over the
//! non-root ancestors, the siblings (twice) and the descendants of `c`.
//! Columns are swept cyclically; each column is minimized over `[0, gamma1]^A`
//! by exact coordinate descent.

use ndarray::{Array1, Array2, ArrayView2};

use crate::data::Taxonomy;
use crate::model::Params;
use crate::objective::reg_terms;
use crate::{Error, Result};

const OUTER_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 10_000;
const MAX_COORD_SWEEPS: usize = 1_000;

struct Column {
    node: usize,
    target: Array1<f64>,
    quad_diag_extra: f64,
    couples: Vec<usize>,
}

/// Minimizes the semantic regularizer over `B` in the box `[0, gamma1]`.
pub fn solve_b(
    u_cat: ArrayView2<f64>,
    u_sup: ArrayView2<f64>,
    u_attr: ArrayView2<f64>,
    taxonomy: &Taxonomy,
    gamma1: f64,
    gamma2: f64,
) -> Result<Array2<f64>> {
    let params = Params {
        w: Array2::zeros((u_cat.nrows(), 0)),
        u_cat: u_cat.to_owned(),
        u_sup: u_sup.to_owned(),
        u_attr: u_attr.to_owned(),
        b: Array2::zeros((u_attr.ncols(), u_cat.ncols() + u_sup.ncols())),
    };
    params.check_shapes()?;
    if params.num_leaves() != taxonomy.num_leaves() || params.num_supers() != taxonomy.num_supers()
    {
        return Err(Error::DimensionMismatch(
            "embedding blocks do not match the taxonomy".into(),
        ));
    }
    if !(gamma1 >= 0.0) || !(gamma2 >= 0.0) {
        return Err(Error::InvalidArgument(
            "gamma1 and gamma2 must be >= 0".into(),
        ));
    }
    let trainable: Vec<bool> = vec![true; taxonomy.len()];
    Ok(solve_b_masked(
        &params, taxonomy, gamma1, gamma2, &trainable,
    ))
}

/// Block-coordinate descent from the current `params.b`, updating only the
/// non-root columns flagged in `trainable`.
pub(crate) fn solve_b_masked(
    params: &Params,
    taxonomy: &Taxonomy,
    gamma1: f64,
    gamma2: f64,
    trainable: &[bool],
) -> Array2<f64> {
    let d = &params.u_attr;
    let gram = d.t().dot(d);
    let n = taxonomy.len();

    let mut descendants = vec![Vec::new(); n];
    for j in 0..n {
        for &a in taxonomy.ancestors_idx(j) {
            descendants[a].push(j);
        }
    }

    let columns: Vec<Column> = (0..n)
        .filter(|&i| trainable[i])
        .filter_map(|i| {
            let p = taxonomy.parent_idx(i)?;
            let diff = &params.concept(i) - &params.concept(p);
            let anc = taxonomy.ancestors_idx(i);
            let sib = taxonomy.siblings_idx(i);
            let desc = &descendants[i];
            let count = anc.len() + 2 * sib.len() + desc.len();
            let couples = anc
                .iter()
                .copied()
                .filter(|&o| taxonomy.parent_idx(o).is_some())
                .chain(sib.iter().copied())
                .chain(sib.iter().copied())
                .chain(desc.iter().copied())
                .collect();
            Some(Column {
                node: i,
                target: d.t().dot(&diff),
                quad_diag_extra: gamma2 * count as f64,
                couples,
            })
        })
        .collect();

    let mut b = params.b.clone();
    super::projection::project_b(&mut b, gamma1, taxonomy);
    if columns.is_empty() {
        return b;
    }
    let a_dim = b.nrows();

    for _ in 0..MAX_SWEEPS {
        let before = b.clone();
        for col in &columns {
            let mut lin = col.target.clone();
            for &o in &col.couples {
                lin.scaled_add(-gamma2, &b.column(o));
            }
            let mut beta = b.column(col.node).to_owned();
            for _ in 0..MAX_COORD_SWEEPS {
                let mut moved = 0.0f64;
                for j in 0..a_dim {
                    let qjj = gram[[j, j]] + col.quad_diag_extra;
                    let mut num = lin[j];
                    for k in 0..a_dim {
                        if k != j {
                            num -= gram[[j, k]] * beta[k];
                        }
                    }
                    let next = if qjj > 1e-300 {
                        (num / qjj).clamp(0.0, gamma1)
                    } else if num > 0.0 {
                        gamma1
                    } else {
                        0.0
                    };
                    moved = moved.max((next - beta[j]).abs());
                    beta[j] = next;
                }
                if moved <= 1e-15 * (1.0 + gamma1) {
                    break;
                }
            }
            b.column_mut(col.node).assign(&beta);
        }
        let change = (&b - &before).iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if change <= OUTER_TOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    b
}

/// Regularizer value at the given `B`, other blocks taken from `params`.
pub(crate) fn reg_at(params: &Params, b: &Array2<f64>, taxonomy: &Taxonomy, gamma2: f64) -> f64 {
    let mut p = params.clone();
    p.b = b.clone();
    reg_terms(&p, taxonomy, gamma2, None)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn single_child() -> Taxonomy {
        Taxonomy::from_edges([("c", "p")]).unwrap()
    }

    #[test]
    fn unconstrained_inside_box() {
        let t = single_child();
        let u_cat = array![[0.5], [0.0]];
        let u_sup = array![[0.0], [0.0]];
        let u_attr = Array2::eye(2);
        let b = solve_b(u_cat.view(), u_sup.view(), u_attr.view(), &t, 1.0, 0.0).unwrap();
        assert!((b[[0, 0]] - 0.5).abs() < 1e-12);
        assert_eq!(b[[1, 0]], 0.0);
        assert_eq!(b.column(1).sum(), 0.0);
    }

    #[test]
    fn clamped_at_gamma1() {
        let t = single_child();
        let u_cat = array![[0.5], [0.0]];
        let u_sup = array![[0.0], [0.0]];
        let b = solve_b(
            u_cat.view(),
            u_sup.view(),
            Array2::eye(2).view(),
            &t,
            0.3,
            0.0,
        )
        .unwrap();
        assert!((b[[0, 0]] - 0.3).abs() < 1e-12);
        assert_eq!(b[[1, 0]], 0.0);
    }

    #[test]
    fn negative_directions_stay_zero() {
        let t = single_child();
        let u_cat = array![[-0.5], [0.2]];
        let u_sup = array![[0.0], [0.0]];
        let b = solve_b(
            u_cat.view(),
            u_sup.view(),
            Array2::eye(2).view(),
            &t,
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(b[[0, 0]], 0.0);
        assert!((b[[1, 0]] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn exclusivity_shrinks() {
        // root child: ||d - beta||^2 + gamma2 ||beta||^2 -> beta = d / (1 + gamma2)
        let t = single_child();
        let u_cat = array![[0.6], [0.0]];
        let u_sup = array![[0.0], [0.0]];
        let b = solve_b(
            u_cat.view(),
            u_sup.view(),
            Array2::eye(2).view(),
            &t,
            1.0,
            1.0,
        )
        .unwrap();
        assert!((b[[0, 0]] - 0.3).abs() < 1e-12);
    }
}
