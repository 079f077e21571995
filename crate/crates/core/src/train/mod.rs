//! Full-batch training with Adam, early stopping on validation F1, and
//! parameter checkpoints.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, spec_hash, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::autodiff::{Adam, AdamConfig, ComputeGraph, Var};
use crate::error::{Error, Result};
use crate::graph::{normalize_features, Dataset, Split};
use crate::models::{label_propagation, GraphInputs, Mode, Model, ModelContext, ModelFamily, ModelSpec};
use crate::scalar::Scalar;
use crate::smoothness::feature_smoothness;
use crate::topo::TopoFeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Feature dropout; also copied into the model spec at train time.
    pub dropout: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Minibatch size for the feature-only families; graph models train full batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 0.0,
            dropout: 0.0,
            patience: 100,
            max_epochs: 2000,
            seed: 0,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.patience == 0 {
            return Err(Error::Validation("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Validation("max_epochs must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Validation("weight decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Validation("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-dataset hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub dropout: f64,
    pub weight_decay: f64,
    pub hidden: usize,
}

pub const PRESETS: [Preset; 6] = [
    Preset {
        name: "cora",
        dropout: 0.2,
        weight_decay: 0.01,
        hidden: 8,
    },
    Preset {
        name: "citeseer",
        dropout: 0.2,
        weight_decay: 0.01,
        hidden: 8,
    },
    Preset {
        name: "pubmed",
        dropout: 0.3,
        weight_decay: 0.0,
        hidden: 16,
    },
    Preset {
        name: "amazon",
        dropout: 0.3,
        weight_decay: 0.0,
        hidden: 32,
    },
    Preset {
        name: "bgp-small",
        dropout: 0.3,
        weight_decay: 0.0,
        hidden: 32,
    },
    Preset {
        name: "bgp-full",
        dropout: 0.3,
        weight_decay: 0.0,
        hidden: 32,
    },
];

impl Preset {
    pub fn find(name: &str) -> Result<Preset> {
        let key = name.trim().to_ascii_lowercase();
        let key = if key == "bgp" {
            "bgp-small".to_string()
        } else {
            key
        };
        PRESETS
            .iter()
            .copied()
            .find(|p| p.name == key)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))
    }

    /// Writes the preset into a spec and config; attention dropout follows dropout.
    pub fn apply(&self, spec: &mut ModelSpec, cfg: &mut TrainConfig) {
        spec.hidden_dims = vec![self.hidden; spec.rounds];
        spec.dropout = self.dropout;
        spec.attention_dropout = self.dropout;
        cfg.dropout = self.dropout;
        cfg.weight_decay = self.weight_decay;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_f1: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub family: ModelFamily,
    pub seed: u64,
    pub best_val_f1: f64,
    pub best_epoch: usize,
    pub test_f1: f64,
    pub train_f1: f64,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
    pub lambda_f: f64,
    /// λ_l as the model saw it: estimated from train-train edges only.
    pub lambda_l: f64,
    pub predictions: Vec<usize>,
}

/// Micro-averaged F1 over `mask`; for single-label data this is accuracy.
pub fn f1_micro(pred: &[usize], truth: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Validation("F1 over an empty node set".into()));
    }
    let mut correct = 0usize;
    for &v in mask {
        let t = truth
            .get(v)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Validation(format!("node {v} in the evaluation mask has no label")))?;
        if pred.get(v) == Some(&t) {
            correct += 1;
        }
    }
    Ok(correct as f64 / mask.len() as f64)
}

/// λ_l over edges whose endpoints are both train nodes; 0 when none exist.
pub fn train_label_smoothness<T: Scalar>(ds: &Dataset<T>) -> f64 {
    let is_train = |v: usize| ds.splits()[v] == Some(Split::Train);
    let (mut total, mut cross) = (0usize, 0usize);
    for (u, v) in ds.edges() {
        if is_train(u) && is_train(v) {
            if let (Some(a), Some(b)) = (ds.label(u), ds.label(v)) {
                total += 1;
                cross += usize::from(a != b);
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        cross as f64 / total as f64
    }
}

/// Smoothness context a model is built with.
pub fn model_context<T: Scalar>(ds: &Dataset<T>, topo_dim: usize) -> Result<ModelContext> {
    let lambda_f = feature_smoothness(&normalize_features(ds)?)?.as_f64();
    Ok(ModelContext {
        lambda_f,
        lambda_l: train_label_smoothness(ds),
        num_edges: ds.num_edges(),
        topo_dim,
    })
}

/// Cross-entropy on `targets` plus `weight_decay · ½‖θ‖²`.
pub fn training_loss<T: Scalar>(
    g: &mut ComputeGraph<T>,
    logits: Var,
    targets: &[(usize, usize)],
    params: &[Var],
    weight_decay: f64,
) -> Result<Var> {
    let ce = g.softmax_cross_entropy(logits, targets)?;
    if weight_decay == 0.0 {
        return Ok(ce);
    }
    let pen = g.l2_penalty(params, T::lit(weight_decay));
    g.add(ce, pen)
}

fn labeled_split<T: Scalar>(ds: &Dataset<T>, split: Split) -> Vec<usize> {
    ds.split_nodes(split)
        .into_iter()
        .filter(|&v| ds.label(v).is_some())
        .collect()
}

/// Trains `spec` on `ds` and returns the result with the best-validation model.
pub fn train<T: Scalar>(
    ds: &Dataset<T>,
    topo: Option<&TopoFeatureMatrix<T>>,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(RunResult, Model<T>)> {
    cfg.validate()?;
    let mut spec = spec.clone();
    spec.dropout = cfg.dropout;
    spec.validate()?;
    let train_nodes = labeled_split(ds, Split::Train);
    let val_nodes = labeled_split(ds, Split::Val);
    let test_nodes = labeled_split(ds, Split::Test);
    if train_nodes.len() < ds.num_classes() {
        return Err(Error::Validation(format!(
            "{} labeled train nodes for {} classes",
            train_nodes.len(),
            ds.num_classes()
        )));
    }
    if val_nodes.is_empty() || test_nodes.is_empty() {
        return Err(Error::Validation(
            "validation and test splits must be nonempty".into(),
        ));
    }
    let topo = if spec.use_topo_features { topo } else { None };
    if spec.use_topo_features && spec.family == ModelFamily::Csgnn && topo.is_none() {
        return Err(Error::Validation(
            "spec enables topology features but none were supplied".into(),
        ));
    }
    let inputs = GraphInputs::new(ds, topo)?;
    let ctx = model_context(ds, inputs.topo_dim())?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(spec.clone(), ds.dim(), ds.num_classes(), ctx, &mut init_rng)?;
    let truth = ds.labels();

    if spec.family == ModelFamily::Labelprop {
        let lp = label_propagation(ds, spec.label_prop_iters, spec.label_prop_tolerance)?;
        let val = f1_micro(&lp.predictions, truth, &val_nodes)?;
        let result = RunResult {
            family: spec.family,
            seed: cfg.seed,
            best_val_f1: val,
            best_epoch: lp.iterations,
            test_f1: f1_micro(&lp.predictions, truth, &test_nodes)?,
            train_f1: f1_micro(&lp.predictions, truth, &train_nodes)?,
            epochs_run: lp.iterations,
            history: Vec::new(),
            lambda_f: ctx.lambda_f,
            lambda_l: ctx.lambda_l,
            predictions: lp.predictions,
        };
        return Ok((result, model));
    }

    let targets: Vec<(usize, usize)> = train_nodes.iter().map(|&v| (v, truth[v].unwrap())).collect();
    let batches = match cfg.batch_size {
        Some(b) if !spec.family.uses_graph() && b < targets.len() => Some(b),
        _ => None,
    };
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut history = Vec::new();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params = model.params().clone();
    let mut stale = 0;
    let mut order = targets.clone();
    for epoch in 1..=cfg.max_epochs {
        let chunks: Vec<Vec<(usize, usize)>> = match batches {
            Some(b) => {
                order.shuffle(&mut drop_rng);
                order.chunks(b).map(<[_]>::to_vec).collect()
            }
            None => vec![targets.clone()],
        };
        let mut epoch_loss = 0.0;
        for chunk in &chunks {
            let mut g = ComputeGraph::new();
            let vars = g.params_all(model.params());
            let f = model.forward_with(&mut g, &vars, &inputs, Mode::Train(&mut drop_rng))?;
            let loss = training_loss(&mut g, f.logits, chunk, &vars, cfg.weight_decay)?;
            let lv = g.value(loss).item().as_f64();
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("training loss is {lv}"),
                });
            }
            epoch_loss += lv * chunk.len() as f64;
            g.backward(loss)?;
            adam.step(model.params_mut(), &g.param_grads())
                .map_err(|e| match e {
                    Error::Numeric(detail) => Error::Divergence { epoch, detail },
                    other => other,
                })?;
        }
        let pred = model.predict(&inputs)?;
        let val = f1_micro(&pred, truth, &val_nodes)?;
        history.push(EpochStats {
            train_loss: epoch_loss / targets.len() as f64,
            train_f1: f1_micro(&pred, truth, &train_nodes)?,
            val_f1: val,
        });
        if val > best_val {
            best_val = val;
            best_epoch = epoch;
            best_params = model.params().clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.params_mut().assign_from(&best_params)?;
    let pred = model.predict(&inputs)?;
    let result = RunResult {
        family: spec.family,
        seed: cfg.seed,
        best_val_f1: best_val,
        best_epoch,
        test_f1: f1_micro(&pred, truth, &test_nodes)?,
        train_f1: f1_micro(&pred, truth, &train_nodes)?,
        epochs_run: history.len(),
        history,
        lambda_f: ctx.lambda_f,
        lambda_l: ctx.lambda_l,
        predictions: pred,
    };
    Ok((result, model))
}

#[cfg(test)]
mod tests;
