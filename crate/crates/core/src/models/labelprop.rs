use crate::error::{Error, Result};
use crate::graph::{Dataset, Split};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelPropagation {
    pub predictions: Vec<usize>,
    /// Per-node class distribution after the last iteration.
    pub distributions: Vec<Vec<f64>>,
    /// Nodes no train label reached; their distribution is uniform.
    pub unreachable: Vec<bool>,
    pub iterations: usize,
}

/// Propagates one-hot train labels with `F ← D⁻¹AF`, clamping train rows
/// after every step. Stops after `max_iters` or once no entry moves by
/// `tolerance` or more. Ties go to the lowest class id.
pub fn label_propagation<T: Scalar>(
    ds: &Dataset<T>,
    max_iters: usize,
    tolerance: f64,
) -> Result<LabelPropagation> {
    let n = ds.num_nodes();
    let c = ds.num_classes();
    let train: Vec<Option<usize>> = (0..n)
        .map(|v| match ds.splits()[v] {
            Some(Split::Train) => ds.label(v),
            _ => None,
        })
        .collect();
    if train.iter().all(Option::is_none) {
        return Err(Error::Validation(
            "label propagation needs a labeled train node".into(),
        ));
    }
    let clamp = |f: &mut [f64]| {
        for (v, l) in train.iter().enumerate() {
            if let Some(k) = l {
                f[v * c..(v + 1) * c].fill(0.0);
                f[v * c + k] = 1.0;
            }
        }
    };
    let mut f = vec![0.0; n * c];
    clamp(&mut f);
    let mut next = vec![0.0; n * c];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for v in 0..n {
            let out = &mut next[v * c..(v + 1) * c];
            out.fill(0.0);
            let nb = ds.neighbors(v);
            if nb.is_empty() {
                out.copy_from_slice(&f[v * c..(v + 1) * c]);
                continue;
            }
            for &u in nb {
                for (o, x) in out.iter_mut().zip(&f[u * c..(u + 1) * c]) {
                    *o += x;
                }
            }
            let inv = 1.0 / nb.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        clamp(&mut next);
        let delta = f
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut f, &mut next);
        if delta < tolerance {
            break;
        }
    }
    let mut unreachable = vec![false; n];
    let mut distributions = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    for v in 0..n {
        let mut row = f[v * c..(v + 1) * c].to_vec();
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            unreachable[v] = true;
            row.fill(1.0 / c as f64);
        }
        let mut best = 0;
        for k in 1..c {
            if row[k] > row[best] {
                best = k;
            }
        }
        predictions.push(best);
        distributions.push(row);
    }
    Ok(LabelPropagation {
        predictions,
        distributions,
        unreachable,
        iterations,
    })
}
