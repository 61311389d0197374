//! Flat hit@k and hierarchical precision@k.
//!
//! Hierarchical precision@k, as defined here: for an instance with true leaf
//! `y`, every level `a` in `{y} + ancestors(y)` except roots has a correct set
//! `C_a` (the leaves under `a`). The level scores
//! `|top_k ∩ C_a| / min(k, |C_a|)`; the instance scores the mean over its
//! levels; the metric is the mean over instances. Roots are skipped because
//! their correct set is every leaf of the tree.

use std::collections::HashSet;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NodeId, Taxonomy};
use crate::model::EmbeddingModel;
use crate::solver::RidgeModel;
use crate::{Error, Result};

/// Anything that ranks leaf categories for a feature vector.
pub trait Ranker {
    fn rank(&self, x: ArrayView1<f64>) -> Result<Vec<NodeId>>;

    /// The taxonomy the ranked ids refer to, when the ranker carries one.
    fn taxonomy(&self) -> Option<&Taxonomy> {
        None
    }
}

impl Ranker for EmbeddingModel {
    fn rank(&self, x: ArrayView1<f64>) -> Result<Vec<NodeId>> {
        self.predict_ranked(x)
    }

    fn taxonomy(&self) -> Option<&Taxonomy> {
        Some(EmbeddingModel::taxonomy(self))
    }
}

impl Ranker for RidgeModel {
    fn rank(&self, x: ArrayView1<f64>) -> Result<Vec<NodeId>> {
        self.predict_ranked(x)
    }
}

/// Full leaf rankings for every instance of `dataset`.
pub fn rankings(ranker: &impl Ranker, dataset: &Dataset) -> Result<Vec<Vec<NodeId>>> {
    let c = dataset.taxonomy().num_leaves();
    if let Some(t) = ranker.taxonomy() {
        let names = |t: &Taxonomy| {
            t.leaf_ids()
                .map(|l| t.name(l).map(str::to_string))
                .collect::<Result<Vec<_>>>()
        };
        if names(t)? != names(dataset.taxonomy())? {
            return Err(Error::Validation(
                "the model's leaf categories differ from the dataset's".into(),
            ));
        }
    }
    dataset
        .features()
        .rows()
        .into_iter()
        .map(|x| {
            let r = ranker.rank(x)?;
            if r.len() != c {
                return Err(Error::DimensionMismatch(format!(
                    "ranker returned {} leaves, dataset has {c}",
                    r.len()
                )));
            }
            Ok(r)
        })
        .collect()
}

fn effective_k(k: usize, num_leaves: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > num_leaves {
        log::warn!("k={k} exceeds the {num_leaves} leaf categories; clamping");
        return Ok(num_leaves);
    }
    Ok(k)
}

/// Fraction of instances whose true leaf is among the first `k` ranked.
pub fn flat_hit_from_rankings(
    rankings: &[Vec<NodeId>],
    labels: &[NodeId],
    k: usize,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let num_leaves = rankings.first().map_or(0, Vec::len);
    let k = effective_k(k, num_leaves)?;
    let hits = rankings
        .iter()
        .zip(labels)
        .filter(|(r, y)| r[..k].contains(y))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn hierarchical_precision_from_rankings(
    rankings: &[Vec<NodeId>],
    labels: &[NodeId],
    taxonomy: &Taxonomy,
    k: usize,
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = effective_k(k, taxonomy.num_leaves())?;
    let mut total = 0.0;
    for (ranked, y) in rankings.iter().zip(labels) {
        let top: HashSet<usize> = ranked[..k].iter().map(|n| n.index()).collect();
        let yi = y.index();
        let levels: Vec<usize> = std::iter::once(yi)
            .chain(taxonomy.ancestors_idx(yi).iter().copied())
            .filter(|&a| taxonomy.parent_idx(a).is_some() || a == yi)
            .collect();
        let score: f64 = levels
            .iter()
            .map(|&a| {
                let correct = taxonomy.leaves_under_idx(a);
                let hit = correct.iter().filter(|l| top.contains(l)).count();
                hit as f64 / k.min(correct.len()) as f64
            })
            .sum();
        total += score / levels.len() as f64;
    }
    Ok(total / labels.len() as f64)
}

pub fn flat_hit_at_k(ranker: &impl Ranker, dataset: &Dataset, k: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    flat_hit_from_rankings(&rankings(ranker, dataset)?, dataset.labels(), k)
}

pub fn hierarchical_precision_at_k(
    ranker: &impl Ranker,
    dataset: &Dataset,
    k: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    hierarchical_precision_from_rankings(
        &rankings(ranker, dataset)?,
        dataset.labels(),
        dataset.taxonomy(),
        k,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub instances: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_test: usize,
    /// `(k, value)` pairs.
    pub flat_hit: Vec<(usize, f64)>,
    pub hierarchical_precision: Vec<(usize, f64)>,
    pub per_class: Vec<ClassAccuracy>,
}

/// Computes every requested metric from a single ranking pass.
pub fn evaluate(
    ranker: &impl Ranker,
    dataset: &Dataset,
    flat_ks: &[usize],
    hp_ks: &[usize],
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ranked = rankings(ranker, dataset)?;
    let labels = dataset.labels();
    let taxonomy = dataset.taxonomy();
    let flat_hit = flat_ks
        .iter()
        .map(|&k| Ok((k, flat_hit_from_rankings(&ranked, labels, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let hierarchical_precision = hp_ks
        .iter()
        .map(|&k| {
            Ok((
                k,
                hierarchical_precision_from_rankings(&ranked, labels, taxonomy, k)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_class = Vec::new();
    for leaf in taxonomy.leaf_ids() {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == leaf).collect();
        if rows.is_empty() {
            continue;
        }
        let correct = rows.iter().filter(|&&i| ranked[i][0] == leaf).count();
        per_class.push(ClassAccuracy {
            class: taxonomy.name(leaf)?.to_string(),
            instances: rows.len(),
            accuracy: correct as f64 / rows.len() as f64,
        });
    }
    Ok(EvalReport {
        n_test: labels.len(),
        flat_hit,
        hierarchical_precision,
        per_class,
    })
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = format!("instances: {}\n", self.n_test);
        out.push_str(&format!("{:<28} {:>8}\n", "metric", "value"));
        for (k, v) in &self.flat_hit {
            out.push_str(&format!(
                "{:<28} {:>7.2}%\n",
                format!("flat hit@{k}"),
                100.0 * v
            ));
        }
        for (k, v) in &self.hierarchical_precision {
            out.push_str(&format!(
                "{:<28} {:>7.2}%\n",
                format!("hierarchical precision@{k}"),
                100.0 * v
            ));
        }
        out.push_str(&format!("\n{:<28} {:>8} {:>9}\n", "class", "n", "accuracy"));
        for c in &self.per_class {
            out.push_str(&format!(
                "{:<28} {:>8} {:>8.2}%\n",
                c.class,
                c.instances,
                100.0 * c.accuracy
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[usize]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn flat_hit_counts() {
        let r = vec![ids(&[1, 2, 3]), ids(&[2, 1, 3]), ids(&[3, 2, 1])];
        let y = ids(&[1, 1, 1]);
        assert!((flat_hit_from_rankings(&r, &y, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((flat_hit_from_rankings(&r, &y, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(flat_hit_from_rankings(&r, &y, 3).unwrap(), 1.0);
        assert_eq!(flat_hit_from_rankings(&r, &y, 10).unwrap(), 1.0);
        assert!(flat_hit_from_rankings(&r, &y, 0).is_err());
        assert!(flat_hit_from_rankings(&[], &[], 1).is_err());
    }

    #[test]
    fn hp_wrong_leaf_right_parent() {
        // leaves 1,2 under p (id 5); 3,4 under q (id 6); p,q under root r (id 7)
        let t = Taxonomy::from_edges([
            ("a", "p"),
            ("b", "p"),
            ("c", "q"),
            ("d", "q"),
            ("p", "r"),
            ("q", "r"),
        ])
        .unwrap();
        let r = vec![ids(&[2, 1, 3, 4])];
        let y = ids(&[1]);
        assert!((hierarchical_precision_from_rankings(&r, &y, &t, 1).unwrap() - 0.5).abs() < 1e-15);
        // perfect prediction, k=2 = sibling group size
        let r = vec![ids(&[1, 2, 3, 4])];
        assert_eq!(
            hierarchical_precision_from_rankings(&r, &y, &t, 1).unwrap(),
            1.0
        );
        // k=2: leaf level 1/min(2,1)=1, parent level 2/2 = 1
        assert_eq!(
            hierarchical_precision_from_rankings(&r, &y, &t, 2).unwrap(),
            1.0
        );
    }
}
