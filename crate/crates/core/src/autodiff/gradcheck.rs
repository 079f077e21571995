use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{ComputeGraph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Check every coordinate up to this many parameters, subsample above.
    pub full_limit: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
            full_limit: 1000,
            subsample: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients of `fragment` with central differences.
///
/// `fragment` receives the graph and one variable per stored parameter
/// (in store order) and must return a scalar loss. It has to be
/// deterministic, so dropout belongs outside of it.
pub fn gradient_check<T, F>(
    store: &ParamStore<T>,
    fragment: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut ComputeGraph<T>, &[Var]) -> Result<Var>,
{
    let mut g = ComputeGraph::new();
    let vars = g.params_all(store);
    let loss = fragment(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic = g.param_grads();

    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for id in store.ids() {
        for k in 0..store.value(id).numel() {
            coords.push((id, k));
        }
    }
    if coords.len() > opts.full_limit {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let picked = sample(&mut rng, coords.len(), opts.subsample.min(coords.len()));
        let mut idx: Vec<usize> = picked.into_iter().collect();
        idx.sort_unstable();
        coords = idx.into_iter().map(|i| coords[i]).collect();
    }

    let eval = |s: &ParamStore<T>| -> Result<f64> {
        let mut g = ComputeGraph::new();
        let vars = g.params_all(s);
        let l = fragment(&mut g, &vars)?;
        if !g.value(l).is_scalar() {
            return Err(Error::Autodiff(
                "gradient check fragment must return a scalar".into(),
            ));
        }
        Ok(g.value(l).item().as_f64())
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates_checked: coords.len(),
        worst: None,
    };
    for &(id, k) in &coords {
        let orig = store.value(id).data()[k];
        let (hi, lo) = (orig + T::lit(opts.step), orig - T::lit(opts.step));
        probe.value_mut(id).data_mut()[k] = hi;
        let up = eval(&probe)?;
        probe.value_mut(id).data_mut()[k] = lo;
        let down = eval(&probe)?;
        probe.value_mut(id).data_mut()[k] = orig;
        // Divide by the representable width, not the nominal 2h.
        let numeric = (up - down) / (hi - lo).as_f64();
        let a = analytic[id.index()].1.data()[k].as_f64();
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((store.name(id).to_string(), k));
        }
    }
    Ok(report)
}
