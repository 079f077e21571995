use std::collections::{HashMap, VecDeque};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::scalar::Scalar;

/// Induced K-hop neighborhood of a center node.
///
/// `nodes[0]` is the center; `adjacency[i]` lists local indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub center: usize,
    pub nodes: Vec<usize>,
    pub adjacency: Vec<Vec<usize>>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Induced edges in global ids, `(u, v)` with `u < v`.
    pub fn global_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            for &j in nbrs {
                let (a, b) = (self.nodes[i], self.nodes[j]);
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// BFS-truncated induced subgraph; nodes in BFS order, ties by ascending id.
pub fn khop_subgraph<T: Scalar>(ds: &Dataset<T>, v: usize, hops: usize) -> Subgraph {
    khop_subgraph_capped(ds, v, hops, usize::MAX)
}

/// Like [`khop_subgraph`], but never returns more than `cap` nodes.
///
/// When a BFS level would overflow the cap, a uniform sample of that
/// level (seeded by the center id) fills the remaining slots and the
/// search stops.
pub fn khop_subgraph_capped<T: Scalar>(ds: &Dataset<T>, v: usize, hops: usize, cap: usize) -> Subgraph {
    let cap = cap.max(1);
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut nodes = vec![v];
    local.insert(v, 0);

    let mut frontier = VecDeque::from([v]);
    for _ in 0..hops {
        let mut level = Vec::new();
        for &u in &frontier {
            for &w in ds.neighbors(u) {
                if let std::collections::hash_map::Entry::Vacant(e) = local.entry(w) {
                    e.insert(usize::MAX);
                    level.push(w);
                }
            }
        }
        if level.is_empty() {
            break;
        }
        let room = cap - nodes.len();
        let truncated = level.len() > room;
        if truncated {
            let mut rng = ChaCha8Rng::seed_from_u64(v as u64);
            let mut keep: Vec<usize> = sample(&mut rng, level.len(), room).into_vec();
            keep.sort_unstable();
            let kept: Vec<usize> = keep.iter().map(|&i| level[i]).collect();
            for w in &level {
                local.remove(w);
            }
            level = kept;
        }
        for &w in &level {
            local.insert(w, nodes.len());
            nodes.push(w);
        }
        if truncated {
            break;
        }
        frontier = level.into();
    }

    let adjacency = nodes
        .iter()
        .map(|&u| {
            ds.neighbors(u)
                .iter()
                .filter_map(|w| local.get(w).copied())
                .filter(|&i| i != usize::MAX)
                .collect()
        })
        .collect();
    Subgraph {
        center: v,
        nodes,
        adjacency,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    #[test]
    fn isolated_node() {
        let ds: Dataset<f64> = labeled(3, &[(1, 2)], &[0.0; 3], 1, &[0; 3]);
        let sg = khop_subgraph(&ds, 0, 2);
        assert_eq!(sg.nodes, vec![0]);
        assert_eq!(sg.num_edges(), 0);
    }

    #[test]
    fn path_two_hops() {
        let ds: Dataset<f64> = labeled(4, &path(4), &[0.0; 4], 1, &[0; 4]);
        let sg = khop_subgraph(&ds, 0, 2);
        assert_eq!(sg.nodes, vec![0, 1, 2]);
        assert_eq!(sg.global_edges(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn triangle_one_hop_is_whole_graph() {
        let ds: Dataset<f64> = labeled(3, &triangle(), &[0.0; 3], 1, &[0; 3]);
        for c in 0..3 {
            let sg = khop_subgraph(&ds, c, 1);
            assert_eq!(sg.len(), 3);
            assert_eq!(sg.num_edges(), 3);
            assert_eq!(sg.nodes[0], c);
        }
    }

    #[test]
    fn bfs_order_ascending_ties() {
        // star center 2 with leaves 4, 0, 3
        let ds: Dataset<f64> = labeled(5, &[(2, 4), (2, 0), (2, 3)], &[0.0; 5], 1, &[0; 5]);
        assert_eq!(khop_subgraph(&ds, 2, 1).nodes, vec![2, 0, 3, 4]);
    }

    #[test]
    fn cap_limits_size() {
        let edges: Vec<_> = (1..50).map(|i| (0, i)).collect();
        let ds: Dataset<f64> = labeled(50, &edges, &[0.0; 50], 1, &[0; 50]);
        let sg = khop_subgraph_capped(&ds, 0, 2, 10);
        assert_eq!(sg.len(), 10);
        assert_eq!(sg.nodes[0], 0);
        assert_eq!(sg.num_edges(), 9);
        assert_eq!(sg, khop_subgraph_capped(&ds, 0, 2, 10));
    }
}
