//! Feature and label smoothness of a graph, and the two transforms that
//! move them: synchronous feature broadcasting and cross-label edge
//! removal.
//!
//! Feature smoothness is evaluated per dimension: for every node the
//! neighbor differences `Σ_{v'∈N(v)} (x_v − x_{v'})` are summed, squared
//! element-wise, accumulated over nodes in id order, and the resulting
//! vector is reduced with the Manhattan norm before dividing by `|E|·d`.
//! Reading the inner square as a squared Euclidean norm gives the same
//! number.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessReport {
    pub lambda_f: f64,
    pub lambda_l: f64,
    /// Edges whose endpoints are both labeled; λ_l is estimated over these.
    pub labeled_edge_count: usize,
    pub num_edges: usize,
}

impl SmoothnessReport {
    pub fn compute<T: Scalar>(normalized: &Dataset<T>) -> Result<Self> {
        let lambda_f = feature_smoothness(normalized)?.as_f64();
        let ls = label_smoothness(normalized)?;
        Ok(SmoothnessReport {
            lambda_f,
            lambda_l: ls.lambda_l,
            labeled_edge_count: ls.labeled_edges,
            num_edges: normalized.num_edges(),
        })
    }

    /// Attention width for an input of dimension `d_k`.
    pub fn attention_dim(&self, d_k: usize) -> usize {
        attention_dim(d_k, self.lambda_f)
    }

    /// Number of attention coefficients whose order statistic sets the
    /// drop threshold.
    pub fn drop_count(&self) -> usize {
        drop_count(self.num_edges, self.lambda_l)
    }

    /// True when λ_l was estimated from a subset of the edges.
    pub fn is_partial_label_estimate(&self) -> bool {
        self.labeled_edge_count < self.num_edges
    }

    pub fn labeled_edge_coverage(&self) -> f64 {
        if self.num_edges == 0 {
            0.0
        } else {
            self.labeled_edge_count as f64 / self.num_edges as f64
        }
    }
}

/// `max(1, ⌈d_k·√λ_f⌉)`.
///
/// Products within 1e-9 of an integer snap to it, so `50·√1.21` is 55
/// rather than 56.
pub fn attention_dim(d_k: usize, lambda_f: f64) -> usize {
    snapped_ceil(d_k as f64 * lambda_f.max(0.0).sqrt()).max(1)
}

/// `⌈2|E|·λ_l⌉`, clamped to `2|E|`.
pub fn drop_count(num_edges: usize, lambda_l: f64) -> usize {
    let total = 2 * num_edges;
    snapped_ceil(total as f64 * lambda_l.clamp(0.0, 1.0)).min(total)
}

fn snapped_ceil(x: f64) -> usize {
    let nearest = x.round();
    let up = if (x - nearest).abs() < 1e-9 {
        nearest
    } else {
        x.ceil()
    };
    up as usize
}

/// λ_f over features already normalized into `[0, 1]^d`.
pub fn feature_smoothness<T: Scalar>(ds: &Dataset<T>) -> Result<T> {
    if let Some(x) = ds
        .features()
        .iter()
        .find(|x| !(**x >= T::zero() && **x <= T::one()))
    {
        return Err(Error::Numeric(format!(
            "feature value {x} outside [0,1]; normalize features first"
        )));
    }
    feature_smoothness_raw(ds)
}

/// λ_f without the `[0, 1]` range check, for diagnosing raw features.
pub fn feature_smoothness_raw<T: Scalar>(ds: &Dataset<T>) -> Result<T> {
    let m = ds.num_edges();
    let d = ds.dim();
    if m == 0 {
        return Err(Error::Validation(
            "feature smoothness needs at least one edge".into(),
        ));
    }
    if d == 0 {
        return Err(Error::Validation("feature smoothness needs d > 0".into()));
    }
    let mut acc = vec![T::zero(); d];
    let mut diff = vec![T::zero(); d];
    for v in 0..ds.num_nodes() {
        let xv = ds.feature_row(v);
        let deg = T::from_count(ds.degree(v));
        for j in 0..d {
            diff[j] = deg * xv[j];
        }
        for &u in ds.neighbors(v) {
            for (dj, xu) in diff.iter_mut().zip(ds.feature_row(u)) {
                *dj = *dj - *xu;
            }
        }
        for j in 0..d {
            acc[j] = acc[j] + diff[j] * diff[j];
        }
    }
    let l1: T = acc.into_iter().map(|a| a.abs()).sum();
    Ok(l1 / (T::from_count(m) * T::from_count(d)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelSmoothness {
    pub lambda_l: f64,
    pub labeled_edges: usize,
    pub cross_label_edges: usize,
}

/// Fraction of fully-labeled edges joining different classes.
pub fn label_smoothness<T: Scalar>(ds: &Dataset<T>) -> Result<LabelSmoothness> {
    let mut labeled = 0usize;
    let mut cross = 0usize;
    for (u, v) in ds.edges() {
        if let (Some(a), Some(b)) = (ds.label(u), ds.label(v)) {
            labeled += 1;
            if a != b {
                cross += 1;
            }
        }
    }
    if labeled == 0 {
        return Err(Error::Validation(
            "label smoothness needs an edge with both endpoints labeled".into(),
        ));
    }
    Ok(LabelSmoothness {
        lambda_l: cross as f64 / labeled as f64,
        labeled_edges: labeled,
        cross_label_edges: cross,
    })
}

/// `rounds` synchronous steps of `x_v ← (x_v + Σ_{N(v)} x_u) / (1 + |N(v)|)`.
pub fn broadcast_smooth<T: Scalar>(ds: &Dataset<T>, rounds: usize) -> Result<Dataset<T>> {
    let d = ds.dim();
    let mut cur = ds.features().to_vec();
    let mut next = vec![T::zero(); cur.len()];
    for _ in 0..rounds {
        for v in 0..ds.num_nodes() {
            let out = &mut next[v * d..(v + 1) * d];
            out.copy_from_slice(&cur[v * d..(v + 1) * d]);
            for &u in ds.neighbors(v) {
                for (o, x) in out.iter_mut().zip(&cur[u * d..(u + 1) * d]) {
                    *o = *o + *x;
                }
            }
            let denom = T::from_count(1 + ds.degree(v));
            for o in out.iter_mut() {
                *o = *o / denom;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    ds.with_features(cur, d)
}

/// Removes `⌊fraction · #cross⌋` uniformly chosen cross-label edges.
///
/// Only edges whose endpoints are both labeled with different classes
/// are candidates.
pub fn drop_cross_label_edges<T: Scalar>(ds: &Dataset<T>, fraction: f64, seed: u64) -> Result<Dataset<T>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Validation(format!(
            "drop fraction {fraction} outside [0,1]"
        )));
    }
    let edges: Vec<(usize, usize)> = ds.edges().collect();
    let cross: Vec<usize> = edges
        .iter()
        .enumerate()
        .filter(|(_, (u, v))| matches!((ds.label(*u), ds.label(*v)), (Some(a), Some(b)) if a != b))
        .map(|(i, _)| i)
        .collect();
    let k = (fraction * cross.len() as f64).floor() as usize;
    if k == 0 {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut removed = vec![false; edges.len()];
    for i in sample(&mut rng, cross.len(), k) {
        removed[cross[i]] = true;
    }
    let kept: Vec<(usize, usize)> = edges
        .into_iter()
        .zip(removed)
        .filter(|(_, r)| !r)
        .map(|(e, _)| e)
        .collect();
    ds.with_edges(&kept)
}
