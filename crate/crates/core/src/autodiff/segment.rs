use std::sync::Arc;

use crate::graph::Dataset;
use crate::scalar::Scalar;

/// Flat edge order grouped by target node.
///
/// Segment `i` holds the entries `offsets[i]..offsets[i+1]`; every entry
/// in it has target `i` and its neighbor as source. Without self-loops
/// the layout coincides with the dataset's CSR adjacency, so the entries
/// line up with the `2|E|` per-neighbor coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentIndex {
    offsets: Vec<usize>,
    sources: Arc<[usize]>,
    targets: Arc<[usize]>,
}

impl SegmentIndex {
    pub fn from_dataset<T: Scalar>(ds: &Dataset<T>, self_loops: bool) -> Self {
        let n = ds.num_nodes();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut sources = Vec::with_capacity(ds.adjacency().len() + if self_loops { n } else { 0 });
        let mut targets = Vec::with_capacity(sources.capacity());
        offsets.push(0);
        for i in 0..n {
            let nbrs = ds.neighbors(i);
            if self_loops {
                let pos = nbrs.partition_point(|&j| j < i);
                sources.extend_from_slice(&nbrs[..pos]);
                sources.push(i);
                sources.extend_from_slice(&nbrs[pos..]);
                targets.extend(std::iter::repeat_n(i, nbrs.len() + 1));
            } else {
                sources.extend_from_slice(nbrs);
                targets.extend(std::iter::repeat_n(i, nbrs.len()));
            }
            offsets.push(sources.len());
        }
        SegmentIndex {
            offsets,
            sources: sources.into(),
            targets: targets.into(),
        }
    }

    /// Builds an index from explicit per-node neighbor lists.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = vec![0];
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        for (i, l) in lists.iter().enumerate() {
            sources.extend_from_slice(l);
            targets.extend(std::iter::repeat_n(i, l.len()));
            offsets.push(sources.len());
        }
        SegmentIndex {
            offsets,
            sources: sources.into(),
            targets: targets.into(),
        }
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_entries(&self) -> usize {
        self.sources.len()
    }

    pub fn segment(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn segment_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn sources(&self) -> &Arc<[usize]> {
        &self.sources
    }

    pub fn targets(&self) -> &Arc<[usize]> {
        &self.targets
    }
}
