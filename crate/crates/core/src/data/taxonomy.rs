use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Identifier of a taxonomy node.
///
/// Ids are dense and 1-based: leaves take `1..=C`, supercategories take
/// `C+1..=C+S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    /// Zero-based position of the node in `1..=C+S` order.
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(index: usize) -> Self {
        NodeId(index + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf,
    Super,
}

/// A forest of leaf categories and supercategories built from a child/parent
/// edge list.
///
/// Node ids follow order of first appearance in the edge list (scanning the
/// child column before the parent column of each edge), leaves first and
/// supercategories after. The edge list itself is kept so that writing it back
/// out reproduces identical ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyRepr", into = "TaxonomyRepr")]
pub struct Taxonomy {
    names: Vec<String>,
    num_leaves: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    ancestors: Vec<Vec<usize>>,
    siblings: Vec<Vec<usize>>,
    leaves_under: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
    edges: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyRepr {
    edges: Vec<(String, String)>,
}

impl TryFrom<TaxonomyRepr> for Taxonomy {
    type Error = Error;

    fn try_from(repr: TaxonomyRepr) -> Result<Self> {
        Taxonomy::from_edges(repr.edges)
    }
}

impl From<Taxonomy> for TaxonomyRepr {
    fn from(t: Taxonomy) -> Self {
        TaxonomyRepr { edges: t.edges }
    }
}

impl Taxonomy {
    /// Builds a taxonomy from `(child, parent)` name pairs.
    pub fn from_edges<S: Into<String>>(edges: impl IntoIterator<Item = (S, S)>) -> Result<Self> {
        let edges: Vec<(String, String)> = edges
            .into_iter()
            .map(|(c, p)| (c.into(), p.into()))
            .collect();

        let mut order: Vec<String> = Vec::new();
        let mut seen: HashSet<&str> = HashSet::new();
        let mut parent_of: HashMap<&str, &str> = HashMap::new();
        let mut is_parent: HashSet<&str> = HashSet::new();
        for (child, parent) in &edges {
            if child.is_empty() || parent.is_empty() {
                return Err(Error::Taxonomy("empty node name in edge".into()));
            }
            if child == parent {
                return Err(Error::Taxonomy(format!("cycle: {child} is its own parent")));
            }
            if let Some(prev) = parent_of.insert(child.as_str(), parent.as_str()) {
                return Err(Error::Taxonomy(if prev == parent {
                    format!("duplicate edge {child} -> {parent}")
                } else {
                    format!("{child} has two parents ({prev}, {parent})")
                }));
            }
            is_parent.insert(parent.as_str());
            for name in [child, parent] {
                if seen.insert(name.as_str()) {
                    order.push(name.clone());
                }
            }
        }

        // every node with a parent must reach a root
        for start in parent_of.keys() {
            let mut cur = *start;
            let mut steps = 0usize;
            while let Some(&p) = parent_of.get(cur) {
                steps += 1;
                if steps > parent_of.len() {
                    return Err(Error::Taxonomy(format!("cycle through {start}")));
                }
                cur = p;
            }
        }

        let (leaves, supers): (Vec<String>, Vec<String>) = order
            .into_iter()
            .partition(|n| !is_parent.contains(n.as_str()));
        if leaves.is_empty() {
            return Err(Error::Taxonomy("taxonomy has no leaf categories".into()));
        }
        let num_leaves = leaves.len();
        let names: Vec<String> = leaves.into_iter().chain(supers).collect();
        let index: HashMap<String, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();

        let n = names.len();
        let parent: Vec<Option<usize>> = names
            .iter()
            .map(|name| parent_of.get(name.as_str()).map(|p| index[*p]))
            .collect();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        let ancestors: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut chain = Vec::new();
                let mut cur = parent[i];
                while let Some(p) = cur {
                    chain.push(p);
                    cur = parent[p];
                }
                chain
            })
            .collect();
        let siblings: Vec<Vec<usize>> = (0..n)
            .map(|i| match parent[i] {
                Some(p) => children[p].iter().copied().filter(|&j| j != i).collect(),
                None => Vec::new(),
            })
            .collect();
        let mut leaves_under = vec![Vec::new(); n];
        for leaf in 0..num_leaves {
            leaves_under[leaf].push(leaf);
            for &a in &ancestors[leaf] {
                leaves_under[a].push(leaf);
            }
        }

        Ok(Taxonomy {
            names,
            num_leaves,
            parent,
            children,
            ancestors,
            siblings,
            leaves_under,
            index,
            edges,
        })
    }

    /// Number of leaf categories `C`.
    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    /// Number of supercategories `S`.
    pub fn num_supers(&self) -> usize {
        self.names.len() - self.num_leaves
    }

    /// Total node count `C + S`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.len()).map(NodeId::from_index)
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.num_leaves).map(NodeId::from_index)
    }

    /// Nodes that have a parent, in id order.
    pub fn non_root_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.len())
            .filter(|&i| self.parent[i].is_some())
            .map(NodeId::from_index)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 >= 1 && id.0 <= self.len()
    }

    fn check(&self, id: NodeId) -> Result<usize> {
        if self.contains(id) {
            Ok(id.index())
        } else {
            Err(Error::UnknownNode(format!("id {id}")))
        }
    }

    pub fn id_of(&self, name: &str) -> Result<NodeId> {
        self.index
            .get(name)
            .map(|&i| NodeId::from_index(i))
            .ok_or_else(|| Error::UnknownNode(format!("name {name:?}")))
    }

    pub fn name(&self, id: NodeId) -> Result<&str> {
        Ok(&self.names[self.check(id)?])
    }

    pub fn kind(&self, id: NodeId) -> Result<NodeKind> {
        let i = self.check(id)?;
        Ok(if i < self.num_leaves {
            NodeKind::Leaf
        } else {
            NodeKind::Super
        })
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.contains(id) && id.index() < self.num_leaves
    }

    pub fn parent(&self, id: NodeId) -> Result<Option<NodeId>> {
        Ok(self.parent[self.check(id)?].map(NodeId::from_index))
    }

    pub fn is_root(&self, id: NodeId) -> Result<bool> {
        Ok(self.parent(id)?.is_none())
    }

    /// Parent chain from the immediate parent up to the root, `id` excluded.
    pub fn ancestors(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let i = self.check(id)?;
        Ok(self.ancestors[i]
            .iter()
            .map(|&a| NodeId::from_index(a))
            .collect())
    }

    /// Nodes sharing `id`'s parent, `id` excluded, ascending. Empty for roots.
    pub fn siblings(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let i = self.check(id)?;
        Ok(self.siblings[i]
            .iter()
            .map(|&s| NodeId::from_index(s))
            .collect())
    }

    pub fn children(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let i = self.check(id)?;
        Ok(self.children[i]
            .iter()
            .map(|&c| NodeId::from_index(c))
            .collect())
    }

    /// Leaves in the subtree rooted at `id` (a leaf maps to itself).
    pub fn leaves_under(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let i = self.check(id)?;
        Ok(self.leaves_under[i]
            .iter()
            .map(|&l| NodeId::from_index(l))
            .collect())
    }

    // Zero-based accessors for hot loops; callers guarantee bounds.
    pub(crate) fn parent_idx(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub(crate) fn ancestors_idx(&self, i: usize) -> &[usize] {
        &self.ancestors[i]
    }

    pub(crate) fn siblings_idx(&self, i: usize) -> &[usize] {
        &self.siblings[i]
    }

    pub(crate) fn leaves_under_idx(&self, i: usize) -> &[usize] {
        &self.leaves_under[i]
    }

    /// Keeps only the given leaves and their ancestors, preserving edge order.
    pub fn restrict_to_leaves(&self, keep: &[NodeId]) -> Result<Taxonomy> {
        let mut kept: HashSet<usize> = HashSet::new();
        for &leaf in keep {
            let i = self.check(leaf)?;
            if i >= self.num_leaves {
                return Err(Error::InvalidArgument(format!("node {leaf} is not a leaf")));
            }
            kept.insert(i);
            kept.extend(self.ancestors[i].iter().copied());
        }
        let edges = self
            .edges
            .iter()
            .filter(|(child, _)| kept.contains(&self.index[child]))
            .cloned()
            .collect::<Vec<_>>();
        Taxonomy::from_edges(edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level() -> Taxonomy {
        // leaves a,b under p; c under q; p,q under r
        Taxonomy::from_edges([("a", "p"), ("b", "p"), ("c", "q"), ("p", "r"), ("q", "r")]).unwrap()
    }

    #[test]
    fn ids_follow_file_order() {
        let t = two_level();
        assert_eq!(t.num_leaves(), 3);
        assert_eq!(t.num_supers(), 3);
        assert_eq!(t.id_of("a").unwrap(), NodeId(1));
        assert_eq!(t.id_of("c").unwrap(), NodeId(3));
        assert_eq!(t.id_of("p").unwrap(), NodeId(4));
        assert_eq!(t.id_of("q").unwrap(), NodeId(5));
        assert_eq!(t.id_of("r").unwrap(), NodeId(6));
    }

    #[test]
    fn ancestor_chain() {
        let t =
            Taxonomy::from_edges([("x", "mid"), ("y", "mid2"), ("mid", "top"), ("mid2", "top")])
                .unwrap();
        // leaf 1 (x) -> 3 (mid) -> 5 (top)
        assert_eq!(t.ancestors(NodeId(1)).unwrap(), vec![NodeId(3), NodeId(5)]);
        assert!(t.ancestors(NodeId(5)).unwrap().is_empty());
        assert!(matches!(
            t.ancestors(NodeId(99)),
            Err(Error::UnknownNode(_))
        ));
    }

    #[test]
    fn sibling_sets() {
        let t = two_level();
        assert_eq!(t.siblings(NodeId(1)).unwrap(), vec![NodeId(2)]);
        assert!(t.siblings(NodeId(3)).unwrap().is_empty());
        assert!(t.siblings(NodeId(6)).unwrap().is_empty());
        assert!(t.siblings(NodeId(0)).is_err());
    }

    #[test]
    fn cycle_rejected() {
        let err = Taxonomy::from_edges([("a", "b"), ("b", "a")]).unwrap_err();
        assert!(matches!(err, Error::Taxonomy(_)));
        assert!(Taxonomy::from_edges([("x", "a"), ("a", "b"), ("b", "c"), ("c", "a")]).is_err());
        assert!(Taxonomy::from_edges([("a", "a")]).is_err());
    }

    #[test]
    fn two_parents_rejected() {
        assert!(Taxonomy::from_edges([("a", "p"), ("a", "q")]).is_err());
    }

    #[test]
    fn forest_allowed() {
        let t = Taxonomy::from_edges([("a", "p"), ("b", "q")]).unwrap();
        assert!(t.is_root(NodeId(3)).unwrap());
        assert!(t.is_root(NodeId(4)).unwrap());
        assert!(t.siblings(NodeId(1)).unwrap().is_empty());
    }

    #[test]
    fn leaves_under_and_restrict() {
        let t = two_level();
        assert_eq!(
            t.leaves_under(NodeId(6)).unwrap(),
            vec![NodeId(1), NodeId(2), NodeId(3)]
        );
        assert_eq!(
            t.leaves_under(NodeId(4)).unwrap(),
            vec![NodeId(1), NodeId(2)]
        );
        let r = t.restrict_to_leaves(&[NodeId(1), NodeId(3)]).unwrap();
        assert_eq!(r.num_leaves(), 2);
        assert_eq!(r.names(), &["a", "c", "p", "q", "r"]);
    }

    #[test]
    fn serde_round_trip() {
        let t = two_level();
        let json = serde_json::to_string(&t).unwrap();
        let back: Taxonomy = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
    }
}
