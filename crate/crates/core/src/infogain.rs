//! Information gain from a node's surrounding.
//!
//! The context distribution `C` is estimated from node features and the
//! surrounding distribution `S` from mean-aggregated neighbor features,
//! both weighted by node degree so each PDF carries `2|E|` sample weight.
//! High-dimensional features use per-dimension histograms whose KL values
//! are averaged; a joint histogram over at most three dimensions is kept
//! for small exact cases.
//!
//! The module also carries the noise-power calculus for weighted
//! aggregators: i.i.d. noise of variance `σ²` aggregated with weights
//! `a_j` has variance `σ²·Σa_j²`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 32;
pub const DEFAULT_EPSILON: f64 = 0.5;
const MAX_JOINT_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HistogramMode {
    /// One histogram over `r^k` cells for the listed `k ≤ 3` dimensions;
    /// an empty list means every dimension.
    Joint(Vec<usize>),
    /// One `r`-bin histogram per dimension; divergences are averaged.
    MarginalAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBlock {
    pub context: Vec<f64>,
    pub surrounding: Vec<f64>,
}

impl HistogramBlock {
    fn total(&self) -> f64 {
        self.context.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPair {
    pub bins_per_dim: usize,
    pub mode: HistogramMode,
    /// Dimensions covered, in block order for the marginal mode.
    pub dims_used: Vec<usize>,
    pub blocks: Vec<HistogramBlock>,
    /// `2|E|`.
    pub total_weight: f64,
}

fn bin_of<T: Scalar>(x: T, bins: usize) -> usize {
    let b = (x.as_f64() * bins as f64).floor();
    (b.max(0.0) as usize).min(bins - 1)
}

/// Degree-weighted context and surrounding histograms.
///
/// Features must lie in `[0, 1]`. Isolated nodes carry zero weight.
pub fn build_histograms<T: Scalar>(
    ds: &Dataset<T>,
    bins: usize,
    mode: HistogramMode,
) -> Result<HistogramPair> {
    if bins == 0 {
        return Err(Error::Validation("histograms need at least one bin".into()));
    }
    if ds.features().iter().any(|x| !(*x >= T::zero() && *x <= T::one())) {
        return Err(Error::Numeric(
            "histogram features must be normalized into [0,1]".into(),
        ));
    }
    if ds.num_edges() == 0 {
        return Err(Error::Validation(
            "every node is isolated; nothing to histogram".into(),
        ));
    }
    let d = ds.dim();
    let dims_used: Vec<usize> = match &mode {
        HistogramMode::MarginalAverage => (0..d).collect(),
        HistogramMode::Joint(dims) if dims.is_empty() => (0..d).collect(),
        HistogramMode::Joint(dims) => dims.clone(),
    };
    if let Some(&j) = dims_used.iter().find(|&&j| j >= d) {
        return Err(Error::Validation(format!("dimension {j} out of range 0..{d}")));
    }
    if let HistogramMode::Joint(_) = mode {
        if dims_used.len() > MAX_JOINT_DIMS || dims_used.is_empty() {
            return Err(Error::Validation(format!(
                "joint histograms support 1..={MAX_JOINT_DIMS} dimensions, got {}",
                dims_used.len()
            )));
        }
    }

    let cells = match mode {
        HistogramMode::MarginalAverage => bins,
        HistogramMode::Joint(_) => bins.pow(dims_used.len() as u32),
    };
    let nblocks = match mode {
        HistogramMode::MarginalAverage => dims_used.len(),
        HistogramMode::Joint(_) => 1,
    };
    let mut blocks = vec![
        HistogramBlock {
            context: vec![0.0; cells],
            surrounding: vec![0.0; cells],
        };
        nblocks
    ];

    let mut mean = vec![T::zero(); d];
    for v in 0..ds.num_nodes() {
        let deg = ds.degree(v);
        if deg == 0 {
            continue;
        }
        mean.iter_mut().for_each(|m| *m = T::zero());
        for &u in ds.neighbors(v) {
            for (m, x) in mean.iter_mut().zip(ds.feature_row(u)) {
                *m = *m + *x;
            }
        }
        let inv = T::one() / T::from_count(deg);
        mean.iter_mut().for_each(|m| *m = (*m * inv).min(T::one()));

        let weight = deg as f64;
        let x = ds.feature_row(v);
        match mode {
            HistogramMode::MarginalAverage => {
                for (block, &j) in blocks.iter_mut().zip(&dims_used) {
                    block.context[bin_of(x[j], bins)] += weight;
                    block.surrounding[bin_of(mean[j], bins)] += weight;
                }
            }
            HistogramMode::Joint(_) => {
                let mut c = 0;
                let mut s = 0;
                for &j in dims_used.iter().rev() {
                    c = c * bins + bin_of(x[j], bins);
                    s = s * bins + bin_of(mean[j], bins);
                }
                blocks[0].context[c] += weight;
                blocks[0].surrounding[s] += weight;
            }
        }
    }

    Ok(HistogramPair {
        bins_per_dim: bins,
        mode,
        dims_used,
        blocks,
        total_weight: (2 * ds.num_edges()) as f64,
    })
}

fn kl_block(s: &[f64], c: &[f64], epsilon: f64) -> f64 {
    let cells = s.len() as f64;
    let s_total: f64 = s.iter().sum::<f64>() + cells * epsilon;
    let c_total: f64 = c.iter().sum::<f64>() + cells * epsilon;
    let mut kl = 0.0;
    for (&ws, &wc) in s.iter().zip(c) {
        let ps = (ws + epsilon) / s_total;
        if ps == 0.0 {
            continue;
        }
        let pc = (wc + epsilon) / c_total;
        kl += ps * (ps / pc).log2();
    }
    kl.max(0.0)
}

/// `D_KL(S ‖ C)` in bits with additive smoothing `epsilon ≥ 0` per cell.
///
/// Marginal histograms return the mean over dimensions. With
/// `epsilon = 0` a surrounding cell that the context misses yields
/// infinity.
pub fn kl_divergence(h: &HistogramPair, epsilon: f64) -> f64 {
    let total: f64 = h
        .blocks
        .iter()
        .map(|b| kl_block(&b.surrounding, &b.context, epsilon))
        .sum();
    total / h.blocks.len() as f64
}

/// Second-order approximation `(ln 2 / 4|E|)·Σ Δ_i² / |H_i|_S` with
/// `Δ_i = |H_i|_C − |H_i|_S`, averaged over blocks in marginal mode.
///
/// Cells with `|H_i|_S = 0` and `Δ_i = 0` contribute nothing; a cell with
/// `|H_i|_S = 0` and `Δ_i ≠ 0` makes the result infinite, so callers
/// should pass a smoothed pair (see [`HistogramPair::smoothed`]).
pub fn chi_square_kl_approx(h: &HistogramPair) -> f64 {
    let mut total = 0.0;
    for b in &h.blocks {
        let four_e = 2.0 * b.total();
        let mut acc = 0.0;
        for (&c, &s) in b.context.iter().zip(&b.surrounding) {
            let delta = c - s;
            if delta == 0.0 {
                continue;
            }
            acc += delta * delta / s;
        }
        total += std::f64::consts::LN_2 / four_e * acc;
    }
    total / h.blocks.len() as f64
}

impl HistogramPair {
    /// Copy with `epsilon` added to every cell of both histograms.
    pub fn smoothed(&self, epsilon: f64) -> HistogramPair {
        let mut out = self.clone();
        for b in &mut out.blocks {
            b.context.iter_mut().for_each(|w| *w += epsilon);
            b.surrounding.iter_mut().for_each(|w| *w += epsilon);
        }
        out
    }

    /// Builds a single-block pair from raw counts (both must have equal totals).
    pub fn from_counts(context: Vec<f64>, surrounding: Vec<f64>) -> Result<HistogramPair> {
        let (tc, ts): (f64, f64) = (context.iter().sum(), surrounding.iter().sum());
        if context.len() != surrounding.len()
            || context.iter().chain(&surrounding).any(|w| *w < 0.0)
            || (tc - ts).abs() > 1e-9 * tc.abs().max(1.0)
        {
            return Err(Error::Validation(
                "context and surrounding counts must be nonnegative, same length, same total".into(),
            ));
        }
        Ok(HistogramPair {
            bins_per_dim: context.len(),
            mode: HistogramMode::Joint(vec![0]),
            dims_used: vec![0],
            total_weight: tc,
            blocks: vec![HistogramBlock { context, surrounding }],
        })
    }
}

/// Additive noise model for a weighted aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub sigma2: f64,
    pub coefficients: Vec<f64>,
}

impl NoiseModel {
    pub fn new(sigma2: f64, coefficients: Vec<f64>) -> Result<Self> {
        if sigma2.is_nan() || sigma2 < 0.0 || sigma2.is_infinite() {
            return Err(Error::Validation(format!("noise variance {sigma2} must be ≥ 0")));
        }
        if coefficients.iter().any(|a| !a.is_finite()) {
            return Err(Error::Validation(
                "aggregation coefficients must be finite".into(),
            ));
        }
        Ok(NoiseModel { sigma2, coefficients })
    }

    /// Mean aggregator over `n` neighbors.
    pub fn mean(n: usize, sigma2: f64) -> Result<Self> {
        Self::new(sigma2, vec![1.0 / n as f64; n])
    }

    /// Sum aggregator over `n` neighbors.
    pub fn sum(n: usize, sigma2: f64) -> Result<Self> {
        Self::new(sigma2, vec![1.0; n])
    }
}

/// `σ²·Σ a_j²`.
pub fn aggregated_noise_power(nm: &NoiseModel) -> f64 {
    nm.sigma2 * nm.coefficients.iter().map(|a| a * a).sum::<f64>()
}

pub const MIN_MONTE_CARLO_SAMPLES: usize = 100_000;
const CHUNK: usize = 1 << 16;

/// Sample variance of `Σ a_j·n_j` with `n_j ~ N(0, σ²)` i.i.d.
///
/// Samples are drawn in fixed-size chunks, each from its own ChaCha
/// stream, and merged in chunk order, so the result depends only on
/// `seed` and `samples`.
pub fn monte_carlo_noise_check(nm: &NoiseModel, samples: usize, seed: u64) -> Result<f64> {
    if samples < MIN_MONTE_CARLO_SAMPLES {
        return Err(Error::Validation(format!(
            "Monte-Carlo check needs at least {MIN_MONTE_CARLO_SAMPLES} samples, got {samples}"
        )));
    }
    let normal =
        Normal::new(0.0, nm.sigma2.sqrt()).map_err(|e| Error::Numeric(format!("noise distribution: {e}")))?;

    // Chan et al. pairwise merge of (count, mean, M2)
    let mut count = 0.0f64;
    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    let chunks = samples.div_ceil(CHUNK);
    for chunk in 0..chunks {
        let len = CHUNK.min(samples - chunk * CHUNK);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chunk as u64);
        let (mut n_c, mut mean_c, mut m2_c) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..len {
            let y: f64 = nm.coefficients.iter().map(|a| a * normal.sample(&mut rng)).sum();
            n_c += 1.0;
            let delta = y - mean_c;
            mean_c += delta / n_c;
            m2_c += delta * (y - mean_c);
        }
        let total = count + n_c;
        let delta = mean_c - mean;
        mean += delta * n_c / total;
        m2 += m2_c + delta * delta * count * n_c / total;
        count = total;
    }
    Ok(m2 / (count - 1.0))
}
