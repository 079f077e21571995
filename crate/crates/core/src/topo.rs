//! Local topology features from heat-kernel wavelets on K-hop subgraphs.
//!
//! For every node the induced K-hop subgraph is built, its symmetric
//! normalized Laplacian `L = I − D^{-1/2} A D^{-1/2}` is diagonalized,
//! and the center's column of `Ψ = U·exp(−sΛ)·Uᵀ` is summarized by the
//! empirical characteristic function `φ(t) = mean_j exp(i·t·ψ_j)`
//! sampled at fixed points. The wavelet column lives in the subgraph's
//! own basis, so isomorphic neighborhoods give the same vector.
//!
//! Eigendecomposition runs in `f64`; results are cast to the caller's
//! scalar type.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::{khop_subgraph_capped, Dataset, Subgraph};
use crate::scalar::Scalar;

pub const DEFAULT_TOPO_DIM: usize = 64;
pub const DEFAULT_SUBGRAPH_CAP: usize = 500;
const CACHE_MAGIC: &[u8; 4] = b"TOPO";
const CACHE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TopoConfig {
    pub hops: usize,
    pub scale: f64,
    pub sample_points: Vec<f64>,
    pub subgraph_cap: usize,
}

impl Default for TopoConfig {
    fn default() -> Self {
        TopoConfig {
            hops: 2,
            scale: 1.0,
            sample_points: evenly_spaced(DEFAULT_TOPO_DIM / 2, 20.0),
            subgraph_cap: DEFAULT_SUBGRAPH_CAP,
        }
    }
}

impl TopoConfig {
    pub fn dim(&self) -> usize {
        2 * self.sample_points.len()
    }

    fn check(&self) -> Result<()> {
        if self.hops == 0 || self.scale.is_nan() || self.scale <= 0.0 || self.sample_points.is_empty() {
            return Err(Error::Config(
                "topology features need hops ≥ 1, scale > 0 and at least one sample point".into(),
            ));
        }
        Ok(())
    }
}

/// `count` points `max/count, 2·max/count, …, max`.
pub fn evenly_spaced(count: usize, max: f64) -> Vec<f64> {
    (1..=count).map(|i| max * i as f64 / count as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopoFeatureMatrix<T> {
    pub dim: usize,
    pub vectors: Vec<T>,
    pub scale: f64,
    pub hops: usize,
    pub sample_points: Vec<f64>,
}

impl<T: Scalar> TopoFeatureMatrix<T> {
    pub fn num_nodes(&self) -> usize {
        self.vectors.len() / self.dim.max(1)
    }

    pub fn row(&self, v: usize) -> &[T] {
        &self.vectors[v * self.dim..(v + 1) * self.dim]
    }

    /// Binary dump: magic, version, n, dim, s, K, then row-major `f64`s.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(34 + self.vectors.len() * 8);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.num_nodes() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u64).to_le_bytes());
        buf.extend_from_slice(&self.scale.to_le_bytes());
        buf.extend_from_slice(&(self.hops as u32).to_le_bytes());
        buf.extend_from_slice(&(self.sample_points.len() as u32).to_le_bytes());
        for t in &self.sample_points {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        for x in &self.vectors {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes);
        let bad = |m: &str| Error::Validation(format!("{}: {m}", path.display()));
        if r.take(4).ok_or_else(|| bad("truncated"))? != CACHE_MAGIC {
            return Err(bad("not a topology cache"));
        }
        if r.u16().ok_or_else(|| bad("truncated"))? != CACHE_VERSION {
            return Err(bad("unsupported cache version"));
        }
        let n = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let dim = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let scale = r.f64().ok_or_else(|| bad("truncated"))?;
        let hops = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let np = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let sample_points = (0..np)
            .map(|_| r.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated"))?;
        let vectors = (0..n * dim)
            .map(|_| r.f64().map(T::lit))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated"))?;
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(TopoFeatureMatrix {
            dim,
            vectors,
            scale,
            hops,
            sample_points,
        })
    }

    pub fn matches(&self, n: usize, cfg: &TopoConfig) -> bool {
        self.num_nodes() == n
            && self.dim == cfg.dim()
            && self.scale == cfg.scale
            && self.hops == cfg.hops
            && self.sample_points == cfg.sample_points
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes }
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.bytes.len() < n {
            return None;
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Some(head)
    }

    pub(crate) fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

fn normalized_laplacian(sg: &Subgraph) -> DMatrix<f64> {
    let m = sg.len();
    let deg: Vec<f64> = sg.adjacency.iter().map(|a| a.len() as f64).collect();
    let mut lap = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        if deg[i] > 0.0 {
            lap[(i, i)] = 1.0;
        }
        for &j in &sg.adjacency[i] {
            lap[(i, j)] = -1.0 / (deg[i] * deg[j]).sqrt();
        }
    }
    lap
}

/// `U·diag(exp(−s·λ))·Uᵀ` for the subgraph's normalized Laplacian.
pub fn heat_wavelet(sg: &Subgraph, scale: f64) -> Result<DMatrix<f64>> {
    if sg.is_empty() || scale.is_nan() || scale <= 0.0 {
        return Err(Error::Validation(
            "heat wavelet needs a non-empty subgraph and scale > 0".into(),
        ));
    }
    let eig = SymmetricEigen::new(normalized_laplacian(sg));
    let u = &eig.eigenvectors;
    let decay = eig.eigenvalues.map(|l| (-scale * l).exp());
    let scaled = u * DMatrix::from_diagonal(&decay);
    Ok(scaled * u.transpose())
}

/// Interleaved `(Re φ(t), Im φ(t))` over `sample_points` for the center
/// column of the heat wavelet.
pub fn wavelet_signature(psi_column: &[f64], sample_points: &[f64]) -> Vec<f64> {
    let m = psi_column.len() as f64;
    let mut out = Vec::with_capacity(2 * sample_points.len());
    for &t in sample_points {
        let (mut re, mut im) = (0.0, 0.0);
        for &p in psi_column {
            let (s, c) = (t * p).sin_cos();
            re += c;
            im += s;
        }
        out.push(re / m);
        out.push(im / m);
    }
    out
}

pub fn node_topo_feature<T: Scalar>(ds: &Dataset<T>, v: usize, cfg: &TopoConfig) -> Result<Vec<T>> {
    cfg.check()?;
    let sg = khop_subgraph_capped(ds, v, cfg.hops, cfg.subgraph_cap);
    let psi = heat_wavelet(&sg, cfg.scale)?;
    let column: Vec<f64> = psi.column(0).iter().copied().collect();
    Ok(wavelet_signature(&column, &cfg.sample_points)
        .into_iter()
        .map(T::lit)
        .collect())
}

/// Topology features for every node, rows in node-id order.
pub fn all_topo_features<T: Scalar>(ds: &Dataset<T>, cfg: &TopoConfig) -> Result<TopoFeatureMatrix<T>> {
    cfg.check()?;
    let mut vectors = Vec::with_capacity(ds.num_nodes() * cfg.dim());
    for v in 0..ds.num_nodes() {
        vectors.extend(node_topo_feature(ds, v, cfg)?);
    }
    Ok(TopoFeatureMatrix {
        dim: cfg.dim(),
        vectors,
        scale: cfg.scale,
        hops: cfg.hops,
        sample_points: cfg.sample_points.clone(),
    })
}

/// Loads `cache` when it matches `ds` and `cfg`, otherwise computes and
/// writes it.
pub fn cached_topo_features<T: Scalar>(
    ds: &Dataset<T>,
    cfg: &TopoConfig,
    cache: &Path,
) -> Result<TopoFeatureMatrix<T>> {
    if cache.exists() {
        if let Ok(m) = TopoFeatureMatrix::<T>::load(cache) {
            if m.matches(ds.num_nodes(), cfg) {
                return Ok(m);
            }
        }
        log::info!("{}: stale topology cache, recomputing", cache.display());
    }
    let m = all_topo_features(ds, cfg)?;
    m.save(cache)?;
    Ok(m)
}
