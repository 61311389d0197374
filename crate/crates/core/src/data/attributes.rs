use std::collections::HashSet;

use ndarray::Array2;

use crate::{Error, Result};

/// Class-level binary attribute labels: one row per leaf category, one column
/// per named attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeTable {
    names: Vec<String>,
    labels: Array2<u8>,
}

impl AttributeTable {
    pub fn new(names: Vec<String>, labels: Array2<u8>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Validation(
                "at least one attribute is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(Error::Validation("empty attribute name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate attribute name {name:?}"
                )));
            }
        }
        if labels.ncols() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "attribute labels have {} columns for {} attribute names",
                labels.ncols(),
                names.len()
            )));
        }
        if let Some(v) = labels.iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!(
                "attribute label {v} outside {{0,1}}"
            )));
        }
        Ok(AttributeTable { names, labels })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `C x A` label matrix.
    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn num_attributes(&self) -> usize {
        self.names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.nrows()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Attribute indices present for the leaf at zero-based row `class`.
    pub fn present(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .row(class)
            .into_iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(a, _)| a)
            .collect::<Vec<_>>()
            .into_iter()
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn rejects_non_binary_labels() {
        let err = AttributeTable::new(vec!["a".into()], array![[2u8]]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(AttributeTable::new(vec![], Array2::zeros((1, 0))).is_err());
        assert!(AttributeTable::new(vec!["a".into(), "a".into()], Array2::zeros((1, 2))).is_err());
    }

    #[test]
    fn present_lists_ones() {
        let t = AttributeTable::new(
            vec!["x".into(), "y".into(), "z".into()],
            array![[1u8, 0, 1], [0, 0, 0]],
        )
        .unwrap();
        assert_eq!(t.present(0).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(t.present(1).count(), 0);
    }
}
