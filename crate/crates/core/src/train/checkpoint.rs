use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::scalar::Scalar;
use crate::topo::ByteReader;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSGN";
pub const CHECKPOINT_VERSION: u16 = 1;

/// First eight bytes of the SHA-256 of the spec's canonical text.
pub fn spec_hash(spec: &ModelSpec) -> u64 {
    let digest = Sha256::digest(spec.canonical().as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Layout: magic, version u16, spec hash u64, parameter count u32, then per
/// parameter: name length u32, UTF-8 name, rank u32, dims u64 each,
/// row-major little-endian `f64` values.
pub fn save_checkpoint<T: Scalar>(path: &Path, spec: &ModelSpec, params: &ParamStore<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(18 + params.num_scalars() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&spec_hash(spec).to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in t.data() {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written for `spec`; nothing is returned unless the
/// whole file parses.
pub fn load_checkpoint<T: Scalar>(path: &Path, spec: &ModelSpec) -> Result<ParamStore<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let truncated = || bad("truncated file");
    let mut r = ByteReader::new(&bytes);
    if r.take(4).ok_or_else(truncated)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u16().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hash = r.u64().ok_or_else(truncated)?;
    if hash != spec_hash(spec) {
        return Err(bad(&format!(
            "spec hash {hash:016x} does not match the {} spec ({:016x})",
            spec.family,
            spec_hash(spec)
        )));
    }
    let count = r.u32().ok_or_else(truncated)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
            .map_err(|_| bad("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32().ok_or_else(truncated)? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("parameter shape overflows"))?;
        if numel > bytes.len() / 8 {
            return Err(truncated());
        }
        let data = (0..numel)
            .map(|_| r.f64().map(T::lit))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        store.add(name, Tensor::new(shape, data)?);
    }
    if !r.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(store)
}
