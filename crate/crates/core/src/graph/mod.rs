//! Node-attributed undirected graphs in compressed adjacency form.
//!
//! A [`Dataset`] bundles the adjacency, a dense `n × d` feature matrix,
//! optional per-node labels and a train/val/test assignment. It is
//! immutable once built; the transforms in [`crate::smoothness`] return
//! new datasets.

mod io;
mod normalize;
mod split;
mod subgraph;

pub use io::{load_dataset, save_dataset, IdMap, LoadReport, SplitSpec};
pub use normalize::normalize_features;
pub use split::{assign_splits, Split};
pub use subgraph::{khop_subgraph, khop_subgraph_capped, Subgraph};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Counts gathered while turning a raw edge list into adjacency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeReport {
    pub self_loops_skipped: usize,
    pub duplicates_merged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Vec<T>,
    dim: usize,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    splits: Vec<Option<Split>>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from an undirected edge list.
    ///
    /// Reversed and repeated pairs collapse to one edge; self-loops are
    /// dropped and counted. `features` is row-major `num_nodes × dim`.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Vec<T>,
        dim: usize,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        splits: Vec<Option<Split>>,
    ) -> Result<(Self, EdgeReport)> {
        let (offsets, neighbors, report) = build_adjacency(num_nodes, edges)?;
        let ds = Dataset {
            num_nodes,
            offsets,
            neighbors,
            features,
            dim,
            labels,
            num_classes,
            splits,
        };
        ds.validate()?;
        Ok((ds, report))
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        if self.offsets.len() != n + 1 {
            return Err(Error::Validation("offset array length".into()));
        }
        if self.features.len() != n * self.dim {
            return Err(Error::Validation(format!(
                "feature matrix has {} values, expected {}×{}",
                self.features.len(),
                n,
                self.dim
            )));
        }
        if self.labels.len() != n || self.splits.len() != n {
            return Err(Error::Validation(
                "labels and splits must cover every node".into(),
            ));
        }
        for (v, label) in self.labels.iter().enumerate() {
            if let Some(c) = label {
                if *c >= self.num_classes {
                    return Err(Error::Validation(format!(
                        "node {v} has class {c}, but only {} classes exist",
                        self.num_classes
                    )));
                }
            }
        }
        for v in 0..n {
            if self.splits[v].is_some() && self.labels[v].is_none() {
                return Err(Error::Validation(format!(
                    "node {v} is assigned to a split but has no label"
                )));
            }
            let nbrs = self.neighbors(v);
            for w in nbrs.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Validation(format!(
                        "neighbor list of node {v} not strictly sorted"
                    )));
                }
            }
            for &u in nbrs {
                if u == v {
                    return Err(Error::Validation(format!("self-loop at node {v}")));
                }
                if self.neighbors(u).binary_search(&v).is_err() {
                    return Err(Error::Validation(format!("edge {v}->{u} has no reverse entry")));
                }
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Undirected edge count |E|.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|v| self.degree(v)).collect()
    }

    /// CSR offsets, length `num_nodes + 1`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Flat neighbor array of length `2|E|`, aligned with [`Self::offsets`].
    pub fn adjacency(&self) -> &[usize] {
        &self.neighbors
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn feature_row(&self, v: usize) -> &[T] {
        &self.features[v * self.dim..(v + 1) * self.dim]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn splits(&self) -> &[Option<Split>] {
        &self.splits
    }

    /// Node ids assigned to `split`, ascending.
    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes)
            .filter(|&v| self.splits[v] == Some(split))
            .collect()
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Same graph and labels with a replacement feature matrix.
    pub fn with_features(&self, features: Vec<T>, dim: usize) -> Result<Self> {
        if features.len() != self.num_nodes * dim {
            return Err(Error::Validation(format!(
                "replacement features have {} values, expected {}×{dim}",
                features.len(),
                self.num_nodes
            )));
        }
        Ok(Dataset {
            features,
            dim,
            ..self.clone()
        })
    }

    /// Same nodes, features and labels over a replacement edge list.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        let (offsets, neighbors, _) = build_adjacency(self.num_nodes, edges)?;
        Ok(Dataset {
            offsets,
            neighbors,
            ..self.clone()
        })
    }

    pub fn with_splits(&self, splits: Vec<Option<Split>>) -> Result<Self> {
        let ds = Dataset {
            splits,
            ..self.clone()
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Converts features to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            num_nodes: self.num_nodes,
            offsets: self.offsets.clone(),
            neighbors: self.neighbors.clone(),
            features: self.features.iter().map(|x| U::lit(x.as_f64())).collect(),
            dim: self.dim,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            splits: self.splits.clone(),
        }
    }
}

fn build_adjacency(
    num_nodes: usize,
    edges: &[(usize, usize)],
) -> Result<(Vec<usize>, Vec<usize>, EdgeReport)> {
    let mut report = EdgeReport::default();
    let mut directed = Vec::with_capacity(edges.len() * 2);
    for &(u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::Validation(format!(
                "edge ({u}, {v}) references a node outside 0..{num_nodes}"
            )));
        }
        if u == v {
            report.self_loops_skipped += 1;
            continue;
        }
        directed.push((u, v));
        directed.push((v, u));
    }
    directed.sort_unstable();
    let before = directed.len();
    directed.dedup();
    report.duplicates_merged = (before - directed.len()) / 2;

    let mut offsets = vec![0usize; num_nodes + 1];
    for &(u, _) in &directed {
        offsets[u + 1] += 1;
    }
    for i in 0..num_nodes {
        offsets[i + 1] += offsets[i];
    }
    let neighbors = directed.into_iter().map(|(_, v)| v).collect();
    Ok((offsets, neighbors, report))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Fully labeled dataset with every node in the training split.
    pub fn labeled<T: Scalar>(
        n: usize,
        edges: &[(usize, usize)],
        features: &[f64],
        dim: usize,
        labels: &[usize],
    ) -> Dataset<T> {
        let num_classes = labels.iter().max().map_or(1, |m| m + 1);
        Dataset::new(
            n,
            edges,
            features.iter().map(|&x| T::lit(x)).collect(),
            dim,
            labels.iter().map(|&l| Some(l)).collect(),
            num_classes,
            vec![Some(Split::Train); n],
        )
        .unwrap()
        .0
    }

    pub fn path(n: usize) -> Vec<(usize, usize)> {
        (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect()
    }

    pub fn triangle() -> Vec<(usize, usize)> {
        vec![(0, 1), (1, 2), (0, 2)]
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn triangle_degrees_and_edge_count() {
        let ds: Dataset<f64> = labeled(3, &triangle(), &[0.0; 3], 1, &[0, 0, 1]);
        assert_eq!(ds.num_edges(), 3);
        assert_eq!(ds.degrees(), vec![2, 2, 2]);
        assert_eq!(ds.adjacency().len(), 2 * ds.num_edges());
    }

    #[test]
    fn reversed_duplicate_collapses() {
        let (ds, report) = Dataset::<f64>::new(
            2,
            &[(0, 1), (1, 0)],
            vec![0.0, 0.0],
            1,
            vec![None, None],
            1,
            vec![None, None],
        )
        .unwrap();
        assert_eq!(ds.num_edges(), 1);
        assert_eq!(report.duplicates_merged, 1);
    }

    #[test]
    fn self_loops_counted_and_skipped() {
        let (ds, report) = Dataset::<f64>::new(
            2,
            &[(0, 0), (0, 1), (1, 1)],
            vec![0.0, 0.0],
            1,
            vec![None, None],
            1,
            vec![None, None],
        )
        .unwrap();
        assert_eq!(ds.num_edges(), 1);
        assert_eq!(report.self_loops_skipped, 2);
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let err = Dataset::<f64>::new(2, &[(0, 5)], vec![0.0; 2], 1, vec![None; 2], 1, vec![None; 2]);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let err = Dataset::<f64>::new(
            2,
            &[(0, 1)],
            vec![0.0; 2],
            1,
            vec![Some(0), Some(3)],
            2,
            vec![None; 2],
        );
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn edges_listed_once() {
        let ds: Dataset<f64> = labeled(4, &path(4), &[0.0; 4], 1, &[0; 4]);
        let edges: Vec<_> = ds.edges().collect();
        assert_eq!(edges, vec![(0, 1), (1, 2), (2, 3)]);
    }
}
