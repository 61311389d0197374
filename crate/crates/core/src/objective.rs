//! Loss terms, the semantic regularizer, and their subgradients.
//!
//! Similarity between a projected point `z = W x` and a concept embedding is
//! negative squared Euclidean distance, except in the attribute loss which
//! uses the inner product. Hinges `[v]_+` count as active when `v >= 0`; at
//! the kink the active-side gradient is taken.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeTable, Dataset, NodeId, Taxonomy};
use crate::model::{Hyperparams, Params, Regularization};
use crate::{Error, Result};

/// Instances per work unit. Fixed so that the reduction order, and thus the
/// floating-point result, does not depend on the thread count.
const CHUNK: usize = 64;

/// Value of every objective term at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Category large-margin loss summed over instances.
    pub l_c: f64,
    /// Supercategory loss summed over instances.
    pub l_s: f64,
    /// Attribute loss summed over instances.
    pub l_a: f64,
    /// Semantic regularizer (unweighted).
    pub reg: f64,
    /// Frobenius penalties; zero unless in penalty mode.
    pub frob_penalty: f64,
    /// `l_c + mu1 (l_s + l_a) + mu2 reg + frob_penalty`.
    pub total: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, x, y| acc + (x - y) * (x - y))
}

fn check_input(w: ArrayView2<f64>, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != w.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "input has length {} but W has {} columns",
            x.len(),
            w.ncols()
        )));
    }
    Ok(w.dot(&x))
}

fn check_rows(name: &str, m: ArrayView2<f64>, de: usize) -> Result<()> {
    if m.nrows() != de {
        return Err(Error::DimensionMismatch(format!(
            "{name} has {} rows, embedding dimension is {de}",
            m.nrows()
        )));
    }
    Ok(())
}

fn check_leaf(num_leaves: usize, y: NodeId) -> Result<usize> {
    if y.0 >= 1 && y.0 <= num_leaves {
        Ok(y.index())
    } else {
        Err(Error::UnknownNode(format!("{y} is not a leaf category")))
    }
}

/// Read-only view of everything an instance term needs.
struct Terms<'a> {
    params: &'a Params,
    taxonomy: &'a Taxonomy,
    attributes: Option<&'a AttributeTable>,
    sigma: f64,
    mu1: f64,
}

/// Gradient sinks for one instance; `gz` is the gradient w.r.t. `z`.
struct Sink<'g> {
    gz: ndarray::ArrayViewMut1<'g, f64>,
    g: &'g mut Params,
}

fn add_concept(g: &mut Params, i: usize, scale: f64, v: &Array1<f64>) {
    let c = g.u_cat.ncols();
    let mut col = if i < c {
        g.u_cat.column_mut(i)
    } else {
        g.u_sup.column_mut(i - c)
    };
    col.scaled_add(scale, v);
}

impl Terms<'_> {
    fn category(&self, z: ArrayView1<f64>, y: usize, mut sink: Option<&mut Sink>) -> f64 {
        let u = &self.params.u_cat;
        let uy = u.column(y);
        let dy = sq_dist(z, uy);
        let mut loss = 0.0;
        for (c, uc) in u.axis_iter(Axis(1)).enumerate() {
            if c == y {
                continue;
            }
            let v = 1.0 + dy - sq_dist(z, uc);
            if v < 0.0 {
                continue;
            }
            loss += v;
            if let Some(s) = sink.as_deref_mut() {
                // d/dz = 2(u_c - u_y); d/du_y = 2(u_y - z); d/du_c = 2(z - u_c)
                let diff_c = &uc - &uy;
                s.gz.scaled_add(2.0, &diff_c);
                let to_y = &uy - &z;
                add_concept(s.g, y, 2.0, &to_y);
                let to_c = &z - &uc;
                add_concept(s.g, c, 2.0, &to_c);
            }
        }
        loss
    }

    fn supers(&self, z: ArrayView1<f64>, y: usize, mut sink: Option<&mut Sink>) -> f64 {
        let mut loss = 0.0;
        for &s_idx in self.taxonomy.ancestors_idx(y) {
            let us = self.params.concept(s_idx);
            let ds = sq_dist(z, us);
            for &o in self.taxonomy.siblings_idx(s_idx) {
                let uo = self.params.concept(o);
                let v = 1.0 + ds - sq_dist(z, uo);
                if v < 0.0 {
                    continue;
                }
                loss += v;
                if let Some(sk) = sink.as_deref_mut() {
                    let w = 2.0 * self.mu1;
                    let diff = &uo - &us;
                    sk.gz.scaled_add(w, &diff);
                    let to_s = &us - &z;
                    add_concept(sk.g, s_idx, w, &to_s);
                    let to_o = &z - &uo;
                    add_concept(sk.g, o, w, &to_o);
                }
            }
        }
        loss
    }

    fn attrs(&self, z: ArrayView1<f64>, y: usize, mut sink: Option<&mut Sink>) -> f64 {
        let Some(table) = self.attributes else {
            return 0.0;
        };
        let mut loss = 0.0;
        for a in table.present(y) {
            let ua = self.params.u_attr.column(a);
            let v = self.sigma - z.dot(&ua);
            if v < 0.0 {
                continue;
            }
            loss += v;
            if let Some(sk) = sink.as_deref_mut() {
                sk.gz.scaled_add(-self.mu1, &ua);
                sk.g.u_attr.column_mut(a).scaled_add(-self.mu1, &z);
            }
        }
        loss
    }
}

/// Category loss `sum_{c != y} [1 + ||Wx - u_y||^2 - ||Wx - u_c||^2]_+`.
pub fn loss_category(
    w: ArrayView2<f64>,
    u_cat: ArrayView2<f64>,
    x: ArrayView1<f64>,
    y: NodeId,
) -> Result<f64> {
    let z = check_input(w, x)?;
    check_rows("U_cat", u_cat, z.len())?;
    let yi = check_leaf(u_cat.ncols(), y)?;
    let uy = u_cat.column(yi);
    let dy = sq_dist(z.view(), uy);
    Ok(u_cat
        .axis_iter(Axis(1))
        .enumerate()
        .filter(|&(c, _)| c != yi)
        .map(|(_, uc)| (1.0 + dy - sq_dist(z.view(), uc)).max(0.0))
        .sum())
}

/// Supercategory loss: for every ancestor `s` of `y` and every sibling `o` of
/// `s`, `[1 + ||Wx - u_s||^2 - ||Wx - u_o||^2]_+`.
pub fn loss_super(
    w: ArrayView2<f64>,
    u_cat: ArrayView2<f64>,
    u_sup: ArrayView2<f64>,
    taxonomy: &Taxonomy,
    x: ArrayView1<f64>,
    y: NodeId,
) -> Result<f64> {
    let z = check_input(w, x)?;
    check_rows("U_cat", u_cat, z.len())?;
    check_rows("U_sup", u_sup, z.len())?;
    if u_cat.ncols() != taxonomy.num_leaves() || u_sup.ncols() != taxonomy.num_supers() {
        return Err(Error::DimensionMismatch(
            "embedding blocks do not match the taxonomy".into(),
        ));
    }
    let yi = check_leaf(taxonomy.num_leaves(), y)?;
    let concept = |i: usize| {
        if i < u_cat.ncols() {
            u_cat.column(i)
        } else {
            u_sup.column(i - u_cat.ncols())
        }
    };
    let mut loss = 0.0;
    for &s in taxonomy.ancestors_idx(yi) {
        let ds = sq_dist(z.view(), concept(s));
        for &o in taxonomy.siblings_idx(s) {
            loss += (1.0 + ds - sq_dist(z.view(), concept(o))).max(0.0);
        }
    }
    Ok(loss)
}

/// Attribute loss `sum_{a present for y} [sigma - (Wx)^T u_a]_+`.
pub fn loss_attr(
    w: ArrayView2<f64>,
    u_attr: ArrayView2<f64>,
    attributes: &AttributeTable,
    sigma: f64,
    x: ArrayView1<f64>,
    y: NodeId,
) -> Result<f64> {
    let z = check_input(w, x)?;
    check_rows("U_attr", u_attr, z.len())?;
    if u_attr.ncols() != attributes.num_attributes() {
        return Err(Error::DimensionMismatch(format!(
            "U_attr has {} columns for {} attributes",
            u_attr.ncols(),
            attributes.num_attributes()
        )));
    }
    let yi = check_leaf(attributes.num_classes(), y)?;
    Ok(attributes
        .present(yi)
        .map(|a| (sigma - z.dot(&u_attr.column(a))).max(0.0))
        .sum())
}

/// Semantic regularizer over every non-root node `c` with parent `p`:
/// `||u_c - u_p - U_attr beta_c||^2 + gamma2 sum_{o in anc(c) + sib(c)} ||beta_c + beta_o||^2`,
/// with root weights fixed at zero.
pub fn reg_semantic(
    u_cat: ArrayView2<f64>,
    u_sup: ArrayView2<f64>,
    u_attr: ArrayView2<f64>,
    b: ArrayView2<f64>,
    taxonomy: &Taxonomy,
    gamma2: f64,
) -> Result<f64> {
    let params = Params {
        w: Array2::zeros((u_cat.nrows(), 0)),
        u_cat: u_cat.to_owned(),
        u_sup: u_sup.to_owned(),
        u_attr: u_attr.to_owned(),
        b: b.to_owned(),
    };
    params.check_shapes()?;
    if params.num_leaves() != taxonomy.num_leaves() || params.num_supers() != taxonomy.num_supers()
    {
        return Err(Error::DimensionMismatch(
            "embedding blocks do not match the taxonomy".into(),
        ));
    }
    Ok(reg_terms(&params, taxonomy, gamma2, None))
}

/// Regularizer value; with `grad = Some((g, scale))` adds `scale * dR` into `g`.
pub(crate) fn reg_terms(
    params: &Params,
    taxonomy: &Taxonomy,
    gamma2: f64,
    mut grad: Option<(&mut Params, f64)>,
) -> f64 {
    let b = &params.b;
    let ua = &params.u_attr;
    let mut total = 0.0;
    for node in taxonomy.non_root_ids() {
        let i = node.index();
        let p = taxonomy.parent_idx(i).expect("non-root has a parent");
        let beta = b.column(i);
        let r = &params.concept(i) - &params.concept(p) - ua.dot(&beta);
        total += r.dot(&r);
        if let Some((g, scale)) = grad.as_mut() {
            let k = 2.0 * *scale;
            add_concept(g, i, k, &r);
            add_concept(g, p, -k, &r);
            // d/dU_attr = -2 r beta^T
            for (a, &bv) in beta.iter().enumerate() {
                if bv != 0.0 {
                    g.u_attr.column_mut(a).scaled_add(-k * bv, &r);
                }
            }
            let gb = ua.t().dot(&r);
            g.b.column_mut(i).scaled_add(-k, &gb);
        }
        if gamma2 == 0.0 && grad.is_none() {
            continue;
        }
        let others = taxonomy
            .ancestors_idx(i)
            .iter()
            .chain(taxonomy.siblings_idx(i));
        for &o in others {
            let o_is_root = taxonomy.parent_idx(o).is_none();
            let v = if o_is_root {
                beta.to_owned()
            } else {
                &beta + &b.column(o)
            };
            total += gamma2 * v.dot(&v);
            if let Some((g, scale)) = grad.as_mut() {
                let k = 2.0 * *scale * gamma2;
                g.b.column_mut(i).scaled_add(k, &v);
                if !o_is_root {
                    g.b.column_mut(o).scaled_add(k, &v);
                }
            }
        }
    }
    total
}

fn frob_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

struct ChunkOut {
    l_c: f64,
    l_s: f64,
    l_a: f64,
    grad: Option<(Params, Array2<f64>)>,
}

fn check_params(params: &Params, dataset: &Dataset) -> Result<()> {
    params.check_against(
        dataset.taxonomy(),
        dataset.attributes().num_attributes(),
        dataset.dim(),
    )
}

/// Sums the per-instance losses (and optionally their gradients) over the
/// dataset, then adds the regularizer and penalties.
fn evaluate(
    params: &Params,
    dataset: &Dataset,
    hyper: &Hyperparams,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Params>)> {
    check_params(params, dataset)?;
    let de = params.embed_dim();
    let n = dataset.len();
    let x = dataset.features();
    // Z = X W^T, one projected instance per row
    let z_all = x.dot(&params.w.t());
    let terms = Terms {
        params,
        taxonomy: dataset.taxonomy(),
        attributes: Some(dataset.attributes()),
        sigma: hyper.sigma,
        mu1: hyper.mu1,
    };
    let labels = dataset.labels();

    let chunks: Vec<ChunkOut> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|k| {
            let lo = k * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut out = ChunkOut {
                l_c: 0.0,
                l_s: 0.0,
                l_a: 0.0,
                grad: None,
            };
            if with_grad {
                let mut g = Params::zeros(
                    de,
                    0,
                    params.num_leaves(),
                    params.num_supers(),
                    params.num_attributes(),
                );
                let mut gz = Array2::zeros((hi - lo, de));
                for i in lo..hi {
                    let z = z_all.row(i);
                    let y = labels[i].index();
                    let mut sink = Sink {
                        gz: gz.row_mut(i - lo),
                        g: &mut g,
                    };
                    out.l_c += terms.category(z, y, Some(&mut sink));
                    out.l_s += terms.supers(z, y, Some(&mut sink));
                    out.l_a += terms.attrs(z, y, Some(&mut sink));
                }
                out.grad = Some((g, gz));
            } else {
                for i in lo..hi {
                    let z = z_all.row(i);
                    let y = labels[i].index();
                    out.l_c += terms.category(z, y, None);
                    out.l_s += terms.supers(z, y, None);
                    out.l_a += terms.attrs(z, y, None);
                }
            }
            out
        })
        .collect();

    let mut lb = LossBreakdown::default();
    let mut grad = with_grad.then(|| {
        Params::zeros(
            de,
            dataset.dim(),
            params.num_leaves(),
            params.num_supers(),
            params.num_attributes(),
        )
    });
    let mut gz_all = with_grad.then(|| Array2::<f64>::zeros((n, de)));
    for (k, c) in chunks.into_iter().enumerate() {
        lb.l_c += c.l_c;
        lb.l_s += c.l_s;
        lb.l_a += c.l_a;
        if let (Some(g), Some((cg, gz))) = (grad.as_mut(), c.grad) {
            g.u_cat += &cg.u_cat;
            g.u_sup += &cg.u_sup;
            g.u_attr += &cg.u_attr;
            let lo = k * CHUNK;
            gz_all
                .as_mut()
                .unwrap()
                .slice_mut(s![lo..lo + gz.nrows(), ..])
                .assign(&gz);
        }
    }
    if let (Some(g), Some(gz)) = (grad.as_mut(), gz_all.as_ref()) {
        g.w = gz.t().dot(x);
    }

    lb.reg = match grad.as_mut() {
        Some(g) => reg_terms(
            params,
            dataset.taxonomy(),
            hyper.gamma2,
            Some((g, hyper.mu2)),
        ),
        None => reg_terms(params, dataset.taxonomy(), hyper.gamma2, None),
    };

    if hyper.regularization == Regularization::Penalty {
        let lam = hyper.lambda;
        lb.frob_penalty = lam
            * (frob_sq(&params.w)
                + frob_sq(&params.u_cat)
                + frob_sq(&params.u_sup)
                + frob_sq(&params.u_attr));
        if let Some(g) = grad.as_mut() {
            g.w.scaled_add(2.0 * lam, &params.w);
            g.u_cat.scaled_add(2.0 * lam, &params.u_cat);
            g.u_sup.scaled_add(2.0 * lam, &params.u_sup);
            g.u_attr.scaled_add(2.0 * lam, &params.u_attr);
        }
    }
    lb.total = lb.l_c + hyper.mu1 * (lb.l_s + lb.l_a) + hyper.mu2 * lb.reg + lb.frob_penalty;
    Ok((lb, grad))
}

/// Full objective summed over the dataset.
pub fn total_objective(
    params: &Params,
    dataset: &Dataset,
    hyper: &Hyperparams,
) -> Result<LossBreakdown> {
    evaluate(params, dataset, hyper, false).map(|(lb, _)| lb)
}

/// Objective value plus a subgradient with respect to every parameter block,
/// returned in a [`Params`]-shaped container. Root columns of the `B`
/// gradient are zero.
pub fn objective_and_gradient(
    params: &Params,
    dataset: &Dataset,
    hyper: &Hyperparams,
) -> Result<(LossBreakdown, Params)> {
    evaluate(params, dataset, hyper, true).map(|(lb, g)| (lb, g.expect("gradient requested")))
}

/// Subgradient w.r.t. `W` (`d_e x d`).
pub fn grad_w(params: &Params, dataset: &Dataset, hyper: &Hyperparams) -> Result<Array2<f64>> {
    Ok(objective_and_gradient(params, dataset, hyper)?.1.w)
}

/// Subgradients w.r.t. the three embedding blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrad {
    pub u_cat: Array2<f64>,
    pub u_sup: Array2<f64>,
    pub u_attr: Array2<f64>,
}

pub fn grad_u(params: &Params, dataset: &Dataset, hyper: &Hyperparams) -> Result<EmbeddingGrad> {
    let g = objective_and_gradient(params, dataset, hyper)?.1;
    Ok(EmbeddingGrad {
        u_cat: g.u_cat,
        u_sup: g.u_sup,
        u_attr: g.u_attr,
    })
}

/// Subgradient w.r.t. `B` (`A x (C+S)`).
pub fn grad_b(params: &Params, dataset: &Dataset, hyper: &Hyperparams) -> Result<Array2<f64>> {
    Ok(objective_and_gradient(params, dataset, hyper)?.1.b)
}
