//! Undirected attributed graphs, splits, and the operations the attacks and
//! defenses need on them.

mod io;
mod jaccard;
mod normalize;
mod splits;
pub mod synthetic;
mod tri;

use std::collections::BTreeSet;

use autodiff::Matrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, DatasetMeta};
pub use jaccard::{jaccard_purify, jaccard_similarity};
pub use normalize::{normalize_adjacency, NormalizedAdjacency};
pub use splits::{make_splits, Mode, Splits};
pub use tri::{num_pairs, tri_decode, tri_encode};

/// An undirected graph with node features and labels.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted and free of
/// duplicates and self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from an arbitrary edge listing. Pairs are symmetrized
    /// (`(j, i)` becomes `(i, j)`), duplicates merged and self-loops dropped.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidPair(a.min(b), a.max(b), num_nodes));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        if features.rows() != num_nodes {
            return Err(Error::DatasetMismatch(format!(
                "{} feature rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::DatasetMismatch(format!(
                "{} labels for {num_nodes} nodes",
                labels.len()
            )));
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                node,
                label,
                classes: num_classes,
            });
        }
        Ok(Self {
            num_nodes,
            edges: set.into_iter().collect(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).is_ok()
    }

    /// Same nodes, features and labels with a different (already valid) edge
    /// list.
    pub(crate) fn with_sorted_edges(&self, edges: Vec<(usize, usize)>) -> Self {
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        Self {
            num_nodes: self.num_nodes,
            edges,
            features: self.features.clone(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }

    /// Short content hash of the structure, used to tie flip sets to the
    /// graph they were computed against.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes as u64).to_le_bytes());
        for &(i, j) in &self.edges {
            h.update((i as u64).to_le_bytes());
            h.update((j as u64).to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Subgraph induced by `keep` (which must be sorted and distinct),
    /// renumbered `0..keep.len()` in the given order.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<Self> {
        let mut local = vec![usize::MAX; self.num_nodes];
        for (k, &v) in keep.iter().enumerate() {
            if v >= self.num_nodes {
                return Err(Error::IndexOutOfRange {
                    index: v as u64,
                    len: self.num_nodes as u64,
                });
            }
            if local[v] != usize::MAX {
                return Err(Error::InvalidConfig(format!("node {v} repeated in subgraph")));
            }
            local[v] = k;
        }
        let edges = self
            .edges
            .iter()
            .filter_map(|&(i, j)| {
                let (a, b) = (local[i], local[j]);
                (a != usize::MAX && b != usize::MAX).then_some((a.min(b), a.max(b)))
            })
            .collect::<BTreeSet<_>>();
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(keep.len() * d);
        for &v in keep {
            data.extend_from_slice(self.features.row(v));
        }
        Ok(Self {
            num_nodes: keep.len(),
            edges: edges.into_iter().collect(),
            features: Matrix::from_vec(keep.len(), d, data)?,
            labels: keep.iter().map(|&v| self.labels[v]).collect(),
            num_classes: self.num_classes,
        })
    }
}

/// Applies a set of undirected pair toggles. Pairs must be valid `i < j`
/// pairs and distinct.
pub fn apply_flips(g: &Graph, flips: &[(usize, usize)]) -> Result<Graph> {
    let n = g.num_nodes();
    let mut toggles = BTreeSet::new();
    for &(i, j) in flips {
        if !(i < j && j < n) {
            return Err(Error::InvalidPair(i, j, n));
        }
        if !toggles.insert((i, j)) {
            return Err(Error::DuplicatePair(i, j));
        }
    }
    let mut edges: BTreeSet<(usize, usize)> = g.edges().iter().copied().collect();
    for p in toggles {
        if !edges.remove(&p) {
            edges.insert(p);
        }
    }
    Ok(g.with_sorted_edges(edges.into_iter().collect()))
}

/// Budget in undirected flips: `floor(fraction * num_edges)`.
///
/// A tiny slack absorbs representation error so that e.g. `0.29 * 100`
/// gives 29 rather than 28.
pub fn budget_from_fraction(g: &Graph, fraction: f64) -> usize {
    if !(fraction > 0.0) {
        return 0;
    }
    (fraction * g.num_edges() as f64 + 1e-9).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::new(3, [(0, 1), (2, 1)], Matrix::identity(3), vec![0, 1, 0], 2).unwrap()
    }

    #[test]
    fn construction_canonicalizes() {
        let g = Graph::new(4, [(1, 0), (0, 1), (3, 3), (2, 3)], Matrix::zeros(4, 1), vec![0; 4], 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (2, 3)]);
    }

    #[test]
    fn label_out_of_range() {
        let err = Graph::new(2, [], Matrix::zeros(2, 1), vec![0, 3], 2).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { node: 1, label: 3, .. }));
    }

    #[test]
    fn path_flip_gives_triangle() {
        let g = apply_flips(&path3(), &[(0, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn flips_are_involutions() {
        let g = path3();
        let once = apply_flips(&g, &[(0, 1)]).unwrap();
        assert_eq!(once.edges(), &[(1, 2)]);
        assert_eq!(apply_flips(&once, &[(0, 1)]).unwrap(), g);
        assert_eq!(apply_flips(&g, &[]).unwrap(), g);
    }

    #[test]
    fn duplicate_and_invalid_flips_rejected() {
        let g = path3();
        assert!(matches!(
            apply_flips(&g, &[(0, 2), (0, 2)]),
            Err(Error::DuplicatePair(0, 2))
        ));
        assert!(matches!(apply_flips(&g, &[(2, 0)]), Err(Error::InvalidPair(2, 0, 3))));
        assert!(matches!(apply_flips(&g, &[(1, 3)]), Err(Error::InvalidPair(1, 3, 3))));
    }

    #[test]
    fn budget_rounding() {
        let edges: Vec<_> = (0..100).map(|k| (k, k + 1)).collect();
        let g = Graph::new(101, edges, Matrix::zeros(101, 1), vec![0; 101], 1).unwrap();
        assert_eq!(budget_from_fraction(&g, 0.0), 0);
        assert_eq!(budget_from_fraction(&g, 0.05), 5);
        assert_eq!(budget_from_fraction(&g, 0.29), 29);
        assert_eq!(budget_from_fraction(&g, 0.055), 5);
    }

    #[test]
    fn id_depends_on_structure_only() {
        let g = path3();
        let h = apply_flips(&g, &[(0, 2)]).unwrap();
        assert_ne!(g.id(), h.id());
        assert_eq!(g.id(), apply_flips(&h, &[(0, 2)]).unwrap().id());
        assert_eq!(g.id().len(), 16);
    }

    #[test]
    fn induced_subgraph_renumbers() {
        let g = apply_flips(&path3(), &[(0, 2)]).unwrap();
        let s = g.induced_subgraph(&[0, 2]).unwrap();
        assert_eq!(s.num_nodes(), 2);
        assert_eq!(s.edges(), &[(0, 1)]);
        assert_eq!(s.labels(), &[0, 0]);
        assert_eq!(s.features().row(1), &[0.0, 0.0, 1.0]);
    }
}
