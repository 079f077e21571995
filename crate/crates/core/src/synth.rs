//! Stochastic block model graphs with Gaussian block features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{assign_splits, Dataset};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub nodes: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Explicit per-block means (`blocks × feature_dim`). When absent, block
    /// `b` gets `mean_separation` on every dimension `j` with `j % blocks == b`.
    pub block_means: Option<Vec<Vec<f64>>>,
    pub mean_separation: f64,
    pub feature_std: f64,
    /// Probability that a node's label is redrawn uniformly.
    pub label_noise: f64,
    pub split: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            nodes: 100,
            blocks: 2,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 8,
            block_means: None,
            mean_separation: 1.0,
            feature_std: 1.0,
            label_noise: 0.0,
            split: (0.7, 0.1, 0.2),
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.blocks == 0 || self.blocks > self.nodes {
            return Err(Error::Validation(format!(
                "need 1 ≤ blocks ≤ nodes, got {} blocks for {} nodes",
                self.blocks, self.nodes
            )));
        }
        for (name, p) in [
            ("p_in", self.p_in),
            ("p_out", self.p_out),
            ("label_noise", self.label_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} = {p} is not a probability")));
            }
        }
        if self.feature_dim == 0 {
            return Err(Error::Validation("feature_dim must be positive".into()));
        }
        if !(self.feature_std >= 0.0 && self.feature_std.is_finite()) {
            return Err(Error::Validation(
                "feature_std must be finite and non-negative".into(),
            ));
        }
        if let Some(m) = &self.block_means {
            if m.len() != self.blocks || m.iter().any(|row| row.len() != self.feature_dim) {
                return Err(Error::Validation(format!(
                    "block_means must be {} × {}",
                    self.blocks, self.feature_dim
                )));
            }
        }
        Ok(())
    }

    /// Block of node `v`: contiguous, near-equal blocks.
    pub fn block_of(&self, v: usize) -> usize {
        v * self.blocks / self.nodes
    }

    fn means(&self) -> Vec<Vec<f64>> {
        match &self.block_means {
            Some(m) => m.clone(),
            None => (0..self.blocks)
                .map(|b| {
                    (0..self.feature_dim)
                        .map(|j| {
                            if j % self.blocks == b {
                                self.mean_separation
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Expected fraction of cross-block edges for equal block sizes.
    pub fn expected_cross_fraction(&self) -> f64 {
        let b = self.blocks as f64;
        let n = self.nodes as f64;
        let within = b * (n / b) * (n / b - 1.0) / 2.0 * self.p_in;
        let cross = n * n * (b - 1.0) / (2.0 * b) * self.p_out;
        if within + cross == 0.0 {
            0.0
        } else {
            cross / (within + cross)
        }
    }
}

/// Draws a labeled, split dataset; labels are the blocks (after noise).
pub fn generate_sbm<T: Scalar>(cfg: &SbmConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes;
    let mut edges = Vec::new();
    for u in 0..n {
        let bu = cfg.block_of(u);
        for v in u + 1..n {
            let p = if cfg.block_of(v) == bu {
                cfg.p_in
            } else {
                cfg.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let means = cfg.means();
    let noise = Normal::new(0.0, cfg.feature_std).map_err(|e| Error::Validation(e.to_string()))?;
    let mut features = Vec::with_capacity(n * cfg.feature_dim);
    for v in 0..n {
        for &m in &means[cfg.block_of(v)] {
            features.push(T::lit(m + noise.sample(&mut rng)));
        }
    }
    let labels: Vec<Option<usize>> = (0..n)
        .map(|v| {
            if cfg.label_noise > 0.0 && rng.random::<f64>() < cfg.label_noise {
                Some(rng.random_range(0..cfg.blocks))
            } else {
                Some(cfg.block_of(v))
            }
        })
        .collect();
    let splits = assign_splits(&labels, cfg.split, cfg.seed.wrapping_add(1))?;
    let (ds, _) = Dataset::new(n, &edges, features, cfg.feature_dim, labels, cfg.blocks, splits)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Split;
    use crate::smoothness::label_smoothness;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = SbmConfig {
            nodes: 60,
            blocks: 3,
            ..Default::default()
        };
        let a: Dataset<f64> = generate_sbm(&cfg).unwrap();
        let b: Dataset<f64> = generate_sbm(&cfg).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.adjacency(), b.adjacency());
        assert_eq!(a.num_classes(), 3);
        assert_eq!(a.dim(), 8);
        assert_eq!(a.split_nodes(Split::Train).len(), 42);
        assert_eq!(cfg.block_of(59), 2);
    }

    #[test]
    fn cross_fraction_tracks_expectation() {
        let cfg = SbmConfig {
            nodes: 600,
            blocks: 3,
            p_in: 0.02,
            p_out: 0.025,
            ..Default::default()
        };
        let ds: Dataset<f64> = generate_sbm(&cfg).unwrap();
        let ll = label_smoothness(&ds).unwrap().lambda_l;
        assert!((ll - cfg.expected_cross_fraction()).abs() < 0.05, "{ll}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SbmConfig {
            p_in: 1.5,
            ..Default::default()
        };
        assert!(generate_sbm::<f64>(&cfg).is_err());
        let cfg = SbmConfig {
            block_means: Some(vec![vec![0.0; 8]]),
            ..Default::default()
        };
        assert!(generate_sbm::<f64>(&cfg).is_err());
    }
}
