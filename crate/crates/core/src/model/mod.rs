//! Trained model container, prediction and semantic descriptions.

mod io;

use std::cmp::Ordering;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{NodeId, Taxonomy};
use crate::{Error, Result};

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};

/// How `lambda` bounds the embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    /// Column norm balls `||w_j||^2 <= lambda`, `||u_k||^2 <= lambda`.
    #[default]
    NormBall,
    /// Frobenius penalties `lambda ||W||_F^2 + lambda ||U||_F^2` added to the
    /// objective (the plain large-margin embedding baseline). Norm balls are
    /// still enforced.
    Penalty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Embedding dimension `d_e`.
    pub embed_dim: usize,
    pub lambda: f64,
    /// Weight of the supercategory and attribute losses.
    pub mu1: f64,
    /// Weight of the semantic regularizer.
    pub mu2: f64,
    /// Upper bound of every reconstruction weight.
    pub gamma1: f64,
    /// Exclusivity weight.
    pub gamma2: f64,
    /// Attribute margin.
    pub sigma: f64,
    pub outer_iters: usize,
    /// Line-searched descent iterations per sub-step.
    pub inner_iters: usize,
    /// Relative objective change that stops the outer loop.
    pub tol: f64,
    pub seed: u64,
    #[serde(default)]
    pub regularization: Regularization,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            embed_dim: 32,
            lambda: 10.0,
            mu1: 1.0,
            mu2: 1.0,
            gamma1: 1.0,
            gamma2: 0.1,
            sigma: 1.0,
            outer_iters: 20,
            inner_iters: 10,
            tol: 1e-5,
            seed: 0,
            regularization: Regularization::NormBall,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.embed_dim == 0 {
            return bad("embedding dimension must be >= 1".into());
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("tol", self.tol),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.lambda <= 0.0 {
            return bad("lambda must be > 0".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        Ok(())
    }

    /// Squared-norm bound for attribute columns.
    pub fn attr_bound(&self) -> f64 {
        self.lambda.min(1.0)
    }
}

/// Raw model parameters.
///
/// `w` is `d_e x d`; `u_cat`, `u_sup`, `u_attr` are `d_e x C`, `d_e x S`,
/// `d_e x A`; `b` is `A x (C+S)` with column `j` holding the reconstruction
/// weights of node `j+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w: Array2<f64>,
    pub u_cat: Array2<f64>,
    pub u_sup: Array2<f64>,
    pub u_attr: Array2<f64>,
    pub b: Array2<f64>,
}

impl Params {
    pub fn zeros(
        embed_dim: usize,
        input_dim: usize,
        leaves: usize,
        supers: usize,
        attrs: usize,
    ) -> Self {
        Params {
            w: Array2::zeros((embed_dim, input_dim)),
            u_cat: Array2::zeros((embed_dim, leaves)),
            u_sup: Array2::zeros((embed_dim, supers)),
            u_attr: Array2::zeros((embed_dim, attrs)),
            b: Array2::zeros((attrs, leaves + supers)),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn num_leaves(&self) -> usize {
        self.u_cat.ncols()
    }

    pub fn num_supers(&self) -> usize {
        self.u_sup.ncols()
    }

    pub fn num_attributes(&self) -> usize {
        self.u_attr.ncols()
    }

    /// Embedding of the node at zero-based taxonomy index `i`.
    pub fn concept(&self, i: usize) -> ArrayView1<'_, f64> {
        let c = self.num_leaves();
        if i < c {
            self.u_cat.column(i)
        } else {
            self.u_sup.column(i - c)
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let de = self.embed_dim();
        let (c, s, a) = (self.num_leaves(), self.num_supers(), self.num_attributes());
        let ok = self.u_cat.nrows() == de
            && self.u_sup.nrows() == de
            && self.u_attr.nrows() == de
            && self.b.dim() == (a, c + s);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "inconsistent parameter shapes: W {:?}, U_cat {:?}, U_sup {:?}, U_attr {:?}, B {:?}",
                self.w.dim(),
                self.u_cat.dim(),
                self.u_sup.dim(),
                self.u_attr.dim(),
                self.b.dim()
            )))
        }
    }

    /// Checks shapes against a taxonomy, attribute count and input dimension.
    pub fn check_against(&self, taxonomy: &Taxonomy, attrs: usize, input_dim: usize) -> Result<()> {
        self.check_shapes()?;
        if self.num_leaves() != taxonomy.num_leaves()
            || self.num_supers() != taxonomy.num_supers()
            || self.num_attributes() != attrs
            || self.input_dim() != input_dim
        {
            return Err(Error::DimensionMismatch(format!(
                "parameters are for C={}, S={}, A={}, d={} but data has C={}, S={}, A={}, d={}",
                self.num_leaves(),
                self.num_supers(),
                self.num_attributes(),
                self.input_dim(),
                taxonomy.num_leaves(),
                taxonomy.num_supers(),
                attrs,
                input_dim
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.w, &self.u_cat, &self.u_sup, &self.u_attr, &self.b]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

fn snap(m: &mut Array2<f64>) {
    m.mapv_inplace(|v| v as f32 as f64);
}

/// Shrinks columns whose squared norm exceeds `bound` after rounding to f32.
/// Columns beyond `slack` (relative) are reported as violations.
fn repair_columns(m: &mut Array2<f64>, bound: f64, what: &str) -> Result<()> {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let mut sq = col.dot(&col);
        if sq <= bound {
            continue;
        }
        if sq > bound * (1.0 + 1e-5) + 1e-12 {
            return Err(Error::Validation(format!(
                "{what} column squared norm {sq} exceeds bound {bound}"
            )));
        }
        let mut shrink = 1.0 - 1e-7;
        while sq > bound {
            let scale = (bound / sq).sqrt() * shrink;
            col.mapv_inplace(|v| (v * scale) as f32 as f64);
            sq = col.dot(&col);
            shrink *= 1.0 - 1e-7;
        }
    }
    Ok(())
}

/// Largest f32-representable value not above `v`.
fn f32_floor(v: f64) -> f64 {
    let f = v as f32;
    if (f as f64) <= v {
        f as f64
    } else {
        f32::from_bits(f.to_bits() - 1) as f64
    }
}

/// A trained unified semantic embedding.
///
/// Parameters are stored as f64 but always hold f32-representable values, so
/// the binary model format round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    params: Params,
    taxonomy: Taxonomy,
    attribute_names: Vec<String>,
    hyper: Hyperparams,
}

impl EmbeddingModel {
    /// Validates and assembles a model. Values are rounded to f32 precision;
    /// rounding-level constraint violations are repaired, anything larger is
    /// an error.
    pub fn new(
        mut params: Params,
        taxonomy: Taxonomy,
        attribute_names: Vec<String>,
        hyper: Hyperparams,
    ) -> Result<Self> {
        hyper.validate()?;
        params.check_against(&taxonomy, attribute_names.len(), params.input_dim())?;
        if params.embed_dim() != hyper.embed_dim {
            return Err(Error::DimensionMismatch(format!(
                "parameters have d_e={} but hyperparameters say {}",
                params.embed_dim(),
                hyper.embed_dim
            )));
        }
        if !params.is_finite() {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
        for m in [
            &mut params.w,
            &mut params.u_cat,
            &mut params.u_sup,
            &mut params.u_attr,
            &mut params.b,
        ] {
            snap(m);
        }
        repair_columns(&mut params.w, hyper.lambda, "W")?;
        repair_columns(&mut params.u_cat, hyper.lambda, "U_cat")?;
        repair_columns(&mut params.u_sup, hyper.lambda, "U_sup")?;
        repair_columns(&mut params.u_attr, hyper.attr_bound(), "U_attr")?;

        let g1 = hyper.gamma1;
        let cap = f32_floor(g1);
        for v in params.b.iter_mut() {
            if *v < 0.0 {
                if *v < -1e-9 {
                    return Err(Error::Validation(format!(
                        "negative reconstruction weight {v}"
                    )));
                }
                *v = 0.0;
            } else if *v > g1 {
                if *v > g1 * (1.0 + 1e-5) + 1e-9 {
                    return Err(Error::Validation(format!(
                        "reconstruction weight {v} exceeds gamma1 {g1}"
                    )));
                }
                *v = cap;
            }
        }
        for root in taxonomy
            .node_ids()
            .filter(|&id| taxonomy.parent(id).unwrap().is_none())
        {
            if params.b.column(root.index()).iter().any(|&v| v != 0.0) {
                return Err(Error::Validation(format!(
                    "root node {} has non-zero reconstruction weights",
                    taxonomy.name(root)?
                )));
            }
        }
        Ok(EmbeddingModel {
            params,
            taxonomy,
            attribute_names,
            hyper,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn into_params(self) -> Params {
        self.params
    }

    /// Projects a feature vector into the embedding space: `z = W x`.
    pub fn embed(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.params.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has length {} but the model expects {}",
                x.len(),
                self.params.input_dim()
            )));
        }
        Ok(self.params.w.dot(&x))
    }

    /// Leaf categories ordered by squared distance between `W x` and their
    /// embeddings, nearest first. Ties go to the smaller id.
    pub fn predict_ranked(&self, x: ArrayView1<f64>) -> Result<Vec<NodeId>> {
        let z = self.embed(x)?;
        Ok(rank_leaves(&self.params.u_cat, z.view()))
    }

    /// Parent name and the attributes with positive reconstruction weight,
    /// strongest first, at most `top_k` of them.
    pub fn describe(&self, node: NodeId, top_k: usize) -> Result<Description> {
        let name = self.taxonomy.name(node)?.to_string();
        let parent = self.taxonomy.parent(node)?.ok_or_else(|| {
            Error::InvalidArgument(format!("{name} is a root and has no decomposition"))
        })?;
        let beta = self.params.b.column(node.index());
        let mut ranked: Vec<(usize, f64)> = beta
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v > 0.0)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        Ok(Description {
            node: name,
            parent: self.taxonomy.name(parent)?.to_string(),
            attributes: ranked
                .into_iter()
                .map(|(a, v)| (self.attribute_names[a].clone(), v))
                .collect(),
        })
    }
}

/// Leaf ranking by squared distance, ties by id.
pub(crate) fn rank_leaves(u_cat: &Array2<f64>, z: ArrayView1<f64>) -> Vec<NodeId> {
    let mut dists: Vec<(usize, f64)> = u_cat
        .axis_iter(Axis(1))
        .map(|u| {
            let diff = &z - &u;
            diff.dot(&diff)
        })
        .enumerate()
        .collect();
    dists.sort_by(|a, b| match a.1.total_cmp(&b.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    dists
        .into_iter()
        .map(|(i, _)| NodeId::from_index(i))
        .collect()
}

/// Human-readable decomposition of a category: its parent plus weighted
/// attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub node: String,
    pub parent: String,
    pub attributes: Vec<(String, f64)>,
}

impl fmt::Display for Description {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: A {}", self.node, self.parent)?;
        if !self.attributes.is_empty() {
            let names: Vec<&str> = self.attributes.iter().map(|(n, _)| n.as_str()).collect();
            write!(f, " that is/has {}", names.join(", "))?;
        }
        Ok(())
    }
}
