use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttributeTable, NodeId, Taxonomy};
use crate::{Error, Result};

/// Labeled feature vectors bound to a taxonomy and an attribute table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<NodeId>,
    taxonomy: Taxonomy,
    attributes: AttributeTable,
}

impl Dataset {
    /// Validates and assembles a dataset. `features` is `N x d`.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<NodeId>,
        taxonomy: Taxonomy,
        attributes: AttributeTable,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature value at row {}",
                pos / features.ncols().max(1)
            )));
        }
        for (i, &y) in labels.iter().enumerate() {
            if !taxonomy.is_leaf(y) {
                return Err(Error::Validation(format!(
                    "instance {i} is labeled with {y}, which is not a leaf category"
                )));
            }
        }
        if attributes.num_classes() != taxonomy.num_leaves() {
            return Err(Error::DimensionMismatch(format!(
                "attribute table has {} rows for {} leaf categories",
                attributes.num_classes(),
                taxonomy.num_leaves()
            )));
        }
        Ok(Dataset {
            features,
            labels,
            taxonomy,
            attributes,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[NodeId] {
        &self.labels
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn attributes(&self) -> &AttributeTable {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Total concept count `m = C + S + A`.
    pub fn num_concepts(&self) -> usize {
        self.taxonomy.len() + self.attributes.num_attributes()
    }

    /// Dataset restricted to the given instance rows, same taxonomy.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            taxonomy: self.taxonomy.clone(),
            attributes: self.attributes.clone(),
        }
    }

    /// Keeps only instances of the given leaves and re-indexes the taxonomy to
    /// those leaves and their ancestors.
    pub fn restrict_to_leaves(&self, keep: &[NodeId]) -> Result<Dataset> {
        let taxonomy = self.taxonomy.restrict_to_leaves(keep)?;
        let mut remap = HashMap::new();
        for &leaf in keep {
            let name = self.taxonomy.name(leaf)?;
            remap.insert(leaf, taxonomy.id_of(name)?);
        }
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| remap.contains_key(&self.labels[i]))
            .collect();
        let mut label_rows =
            Array2::zeros((taxonomy.num_leaves(), self.attributes.num_attributes()));
        for &old in keep {
            let new = remap[&old];
            label_rows
                .row_mut(new.index())
                .assign(&self.attributes.labels().row(old.index()));
        }
        let attributes = AttributeTable::new(self.attributes.names().to_vec(), label_rows)?;
        Dataset::new(
            self.features.select(Axis(0), &rows),
            rows.iter().map(|&r| remap[&self.labels[r]]).collect(),
            taxonomy,
            attributes,
        )
    }

    /// Random per-class split into `(train, validation, test)` row sets.
    ///
    /// Each class is shuffled independently and takes up to `counts.0` rows
    /// for training, then up to `counts.1` for validation, then up to
    /// `counts.2` for test.
    pub fn split_per_class(
        &self,
        counts: (usize, usize, usize),
        seed: u64,
    ) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.taxonomy.num_leaves()];
        for (i, y) in self.labels.iter().enumerate() {
            by_class[y.index()].push(i);
        }
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for mut rows in by_class {
            rows.shuffle(&mut rng);
            let mut it = rows.into_iter();
            train.extend(it.by_ref().take(counts.0));
            val.extend(it.by_ref().take(counts.1));
            test.extend(it.take(counts.2));
        }
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        (train, val, test)
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn fixture() -> Dataset {
        let t = Taxonomy::from_edges([("a", "r"), ("b", "r")]).unwrap();
        let attrs =
            AttributeTable::new(vec!["x".into(), "y".into()], array![[1u8, 0], [0, 1]]).unwrap();
        Dataset::new(
            array![[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]],
            vec![NodeId(1), NodeId(1), NodeId(2), NodeId(2)],
            t,
            attrs,
        )
        .unwrap()
    }

    #[test]
    fn counts() {
        let d = fixture();
        assert_eq!(d.len(), 4);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.num_concepts(), 2 + 1 + 2);
    }

    #[test]
    fn rejects_super_label() {
        let d = fixture();
        let err = Dataset::new(
            d.features().clone(),
            vec![NodeId(1), NodeId(3), NodeId(2), NodeId(2)],
            d.taxonomy().clone(),
            d.attributes().clone(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_nan() {
        let d = fixture();
        let mut x = d.features().clone();
        x[[2, 1]] = f64::NAN;
        assert!(Dataset::new(
            x,
            d.labels().to_vec(),
            d.taxonomy().clone(),
            d.attributes().clone()
        )
        .is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let d = fixture();
        let a = d.split_per_class((1, 0, 1), 7);
        let b = d.split_per_class((1, 0, 1), 7);
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 2);
        assert_eq!(a.2.len(), 2);
        assert!(a.0.iter().all(|r| !a.2.contains(r)));
    }

    #[test]
    fn restrict_reindexes() {
        let d = fixture();
        let r = d.restrict_to_leaves(&[NodeId(2)]).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.labels(), &[NodeId(1), NodeId(1)]);
        assert_eq!(r.attributes().labels(), &array![[0u8, 1]]);
    }
}
