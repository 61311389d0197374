//! Planted-model data generator.
//!
//! Every non-root node's embedding is its parent's embedding plus a sparse
//! non-negative combination of attribute embeddings, exactly. Instances are
//! `x = M (u_y + eps)` for a full-column-rank mixing matrix `M`, so the true
//! reconstruction weights are known and recovery can be measured.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{AttributeTable, Dataset, NodeId, Taxonomy};
use crate::linalg::orthonormal_columns;
use crate::solver::sphere_columns;
use crate::{Error, Result};

const MAX_NODES: usize = 100_000;
/// Minimum pairwise squared distance between planted leaf embeddings.
pub const MIN_LEAF_SEPARATION: f64 = 2.0;
const MAX_RESTARTS: usize = 5000;
const MAX_NODE_DRAWS: usize = 500;

/// Complete tree with `branching^depth` leaves. The seed permutes the order of
/// the leaf edges (and thus node ids).
pub fn gen_taxonomy(branching: usize, depth: usize, seed: u64) -> Result<Taxonomy> {
    if branching < 2 || depth < 1 {
        return Err(Error::InvalidArgument(format!(
            "need branching >= 2 and depth >= 1, got {branching}, {depth}"
        )));
    }
    let mut total: usize = 0;
    let mut level = 1usize;
    for _ in 0..=depth {
        total = total
            .checked_add(level)
            .filter(|&t| t <= MAX_NODES)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("taxonomy would exceed {MAX_NODES} nodes"))
            })?;
        level = level.saturating_mul(branching);
    }

    // levels[l] holds node names at depth l; level 0 is the root
    let mut levels: Vec<Vec<String>> = vec![vec!["root".to_string()]];
    for l in 1..=depth {
        let count = levels[l - 1].len() * branching;
        let names = (0..count)
            .map(|i| {
                if l == depth {
                    format!("leaf{i:0w$}", w = digits(count))
                } else {
                    format!("group{l}_{i:0w$}", w = digits(count))
                }
            })
            .collect();
        levels.push(names);
    }
    let parent_name = |l: usize, i: usize| levels[l - 1][i / branching].clone();

    let mut leaf_edges: Vec<(String, String)> = levels[depth]
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), parent_name(depth, i)))
        .collect();
    leaf_edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut edges = leaf_edges;
    for l in (1..depth).rev() {
        for (i, n) in levels[l].iter().enumerate() {
            edges.push((n.clone(), parent_name(l, i)));
        }
    }
    Taxonomy::from_edges(edges)
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub attributes: usize,
    /// Non-zero reconstruction weights per non-root node.
    pub k_star: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub per_class: usize,
    /// Standard deviation of the isotropic embedding-space noise.
    pub noise: f64,
    /// Weights are drawn uniformly from `[gamma1 / 2, gamma1]`.
    pub gamma1: f64,
    /// Norm of each root embedding.
    pub root_norm: f64,
    /// Draw each node's attributes from those its parent and earlier siblings
    /// do not use, whenever at least `k_star` remain.
    pub exclusive: bool,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            attributes: 8,
            k_star: 2,
            input_dim: 32,
            embed_dim: 8,
            per_class: 40,
            noise: 0.1,
            gamma1: 1.0,
            root_norm: 2.0,
            exclusive: true,
            seed: 0,
        }
    }
}

/// Ground truth behind a planted dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub taxonomy: Taxonomy,
    pub attribute_names: Vec<String>,
    /// `d_e x A`, unit columns.
    pub attr_embeddings: Array2<f64>,
    /// `d_e x (C+S)`, one column per node in id order.
    pub node_embeddings: Array2<f64>,
    /// `A x (C+S)`; root columns are zero.
    pub beta: Array2<f64>,
    /// `d x d_e` mixing matrix.
    pub mixing: Array2<f64>,
    pub noise: f64,
    pub gamma1: f64,
}

impl PlantedTruth {
    /// Supercategory embeddings, `d_e x S`.
    pub fn super_embeddings(&self) -> Array2<f64> {
        self.node_embeddings
            .slice(ndarray::s![.., self.taxonomy.num_leaves()..])
            .to_owned()
    }

    pub fn leaf_embeddings(&self) -> Array2<f64> {
        self.node_embeddings
            .slice(ndarray::s![.., ..self.taxonomy.num_leaves()])
            .to_owned()
    }

    /// True attribute support of a node.
    pub fn support(&self, node: NodeId) -> Vec<usize> {
        self.beta
            .column(node.index())
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(a, _)| a)
            .collect()
    }
}

fn topological(taxonomy: &Taxonomy) -> Vec<usize> {
    let mut order: Vec<usize> = (0..taxonomy.len()).collect();
    order.sort_by_key(|&i| (taxonomy.ancestors_idx(i).len(), i));
    order
}

/// Samples a planted dataset over `taxonomy`.
pub fn gen_planted(taxonomy: &Taxonomy, config: &PlantedConfig) -> Result<(Dataset, PlantedTruth)> {
    let PlantedConfig {
        attributes: a_count,
        k_star,
        input_dim: d,
        embed_dim: de,
        per_class,
        noise,
        gamma1,
        root_norm,
        exclusive,
        seed,
    } = *config;
    if a_count == 0 || k_star > a_count || d < de || de == 0 || per_class == 0 {
        return Err(Error::InvalidArgument(format!(
            "inconsistent planted parameters: A={a_count}, k*={k_star}, d={d}, d_e={de}, per_class={per_class}"
        )));
    }
    if !(noise >= 0.0) || !(gamma1 > 0.0) || !(root_norm >= 0.0) {
        return Err(Error::InvalidArgument(
            "noise, root_norm must be >= 0 and gamma1 > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let gauss = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Array2::from_shape_simple_fn((r, c), || rng.sample::<f64, _>(StandardNormal))
    };
    let attr_emb = if a_count <= de {
        orthonormal_columns(&gauss(&mut rng, de, a_count))
    } else {
        sphere_columns(&mut rng, de, a_count, 1.0)
    };
    let mixing = orthonormal_columns(&gauss(&mut rng, d, de));

    let n = taxonomy.len();
    let c = taxonomy.num_leaves();
    let order = topological(taxonomy);
    let mut attempt = 0;
    let (nodes, beta) = loop {
        attempt += 1;
        if attempt > MAX_RESTARTS {
            return Err(Error::InvalidArgument(format!(
                "could not plant leaves {MIN_LEAF_SEPARATION} apart; increase gamma1, k_star or attributes"
            )));
        }
        if let Some(found) = plant_once(
            taxonomy, &order, &attr_emb, k_star, gamma1, root_norm, exclusive, &mut rng,
        ) {
            break found;
        }
    };

    let mut labels = Array2::<u8>::zeros((c, a_count));
    for leaf in 0..c {
        let mut chain = beta.column(leaf).to_owned();
        for &anc in taxonomy.ancestors_idx(leaf) {
            chain += &beta.column(anc);
        }
        for (a, &v) in chain.iter().enumerate() {
            labels[[leaf, a]] = u8::from(v > 0.0);
        }
    }
    let names: Vec<String> = (0..a_count)
        .map(|a| format!("attr{a:0w$}", w = digits(a_count)))
        .collect();
    let table = AttributeTable::new(names.clone(), labels)?;

    let eps = Normal::new(0.0, noise).expect("noise validated");
    let mut x = Array2::<f64>::zeros((c * per_class, d));
    let mut y = Vec::with_capacity(c * per_class);
    for leaf in 0..c {
        for k in 0..per_class {
            let jitter = Array1::from_shape_simple_fn(de, || eps.sample(&mut rng));
            let point = mixing.dot(&(&nodes.column(leaf) + &jitter));
            x.row_mut(leaf * per_class + k)
                .assign(&point.mapv(|v| v as f32 as f64));
            y.push(NodeId::from_index(leaf));
        }
    }
    debug_assert_eq!(nodes.ncols(), n);

    let dataset = Dataset::new(x, y, taxonomy.clone(), table)?;
    let truth = PlantedTruth {
        taxonomy: taxonomy.clone(),
        attribute_names: names,
        attr_embeddings: attr_emb,
        node_embeddings: nodes,
        beta,
        mixing,
        noise,
        gamma1,
    };
    Ok((dataset, truth))
}

/// One attempt at drawing node embeddings. Each leaf is redrawn until it is
/// far enough from the leaves placed before it; `None` means start over.
fn plant_once(
    taxonomy: &Taxonomy,
    order: &[usize],
    attr_emb: &Array2<f64>,
    k_star: usize,
    gamma1: f64,
    root_norm: f64,
    exclusive: bool,
    rng: &mut ChaCha8Rng,
) -> Option<(Array2<f64>, Array2<f64>)> {
    let de = attr_emb.nrows();
    let a_count = attr_emb.ncols();
    let n = taxonomy.len();
    let mut nodes = Array2::<f64>::zeros((de, n));
    let mut beta = Array2::<f64>::zeros((a_count, n));
    let mut placed: Vec<usize> = Vec::new();
    let mut done = vec![false; n];
    for &i in order {
        let Some(p) = taxonomy.parent_idx(i) else {
            let u = sphere_columns(rng, de, 1, root_norm);
            nodes.column_mut(i).assign(&u.column(0));
            continue;
        };
        let is_leaf = i < taxonomy.num_leaves();
        let mut used = vec![false; a_count];
        if exclusive {
            let nearby = std::iter::once(p).chain(
                taxonomy
                    .siblings_idx(i)
                    .iter()
                    .copied()
                    .filter(|&o| done[o]),
            );
            for o in nearby {
                for (a, &v) in beta.column(o).iter().enumerate() {
                    used[a] |= v > 0.0;
                }
            }
        }
        let mut pool: Vec<usize> = (0..a_count).filter(|&a| !used[a]).collect();
        if pool.len() < k_star {
            pool = (0..a_count).collect();
        }
        let mut ok = false;
        for _ in 0..MAX_NODE_DRAWS {
            let mut b = Array1::<f64>::zeros(a_count);
            for &a in pool.choose_multiple(rng, k_star) {
                b[a] = rng.random_range(gamma1 / 2.0..=gamma1);
            }
            let u = &nodes.column(p) + &attr_emb.dot(&b);
            let separated = !is_leaf
                || k_star == 0
                || placed.iter().all(|&j| {
                    let diff = &u - &nodes.column(j);
                    diff.dot(&diff) >= MIN_LEAF_SEPARATION
                });
            if separated {
                nodes.column_mut(i).assign(&u);
                beta.column_mut(i).assign(&b);
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
        done[i] = true;
        if is_leaf {
            placed.push(i);
        }
    }
    Some((nodes, beta))
}

/// Mean over non-root nodes of the F1 between `{a : B[a][c] > threshold}` and
/// the planted support. A node whose predicted and true supports are both
/// empty scores 1.
pub fn support_f1(b: ArrayView2<f64>, truth: &PlantedTruth, threshold: f64) -> Result<f64> {
    if b.dim() != truth.beta.dim() {
        return Err(Error::DimensionMismatch(format!(
            "B is {:?} but the planted weights are {:?}",
            b.dim(),
            truth.beta.dim()
        )));
    }
    let nodes: Vec<NodeId> = truth.taxonomy.non_root_ids().collect();
    if nodes.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for node in &nodes {
        let pred: HashSet<usize> = b
            .column(node.index())
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > threshold)
            .map(|(a, _)| a)
            .collect();
        let actual: HashSet<usize> = truth.support(*node).into_iter().collect();
        total += if pred.is_empty() && actual.is_empty() {
            1.0
        } else {
            2.0 * pred.intersection(&actual).count() as f64 / (pred.len() + actual.len()) as f64
        };
    }
    Ok(total / nodes.len() as f64)
}
