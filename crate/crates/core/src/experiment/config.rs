use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{load_dataset, Dataset, SplitSpec};
use crate::infogain::{DEFAULT_BINS, DEFAULT_EPSILON};
use crate::models::{ModelFamily, ModelSpec};
use crate::synth::{generate_sbm, SbmConfig};
use crate::topo::{evenly_spaced, TopoConfig, DEFAULT_SUBGRAPH_CAP, DEFAULT_TOPO_DIM};
use crate::train::{Preset, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Metrics,
    Train,
    SweepBroadcast,
    SweepEdgedrop,
    Verify,
    GenSbm,
}

/// Where the graph comes from: text files or the built-in SBM generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// Split file; when absent, labeled nodes are split by `split_ratios`.
    pub splits: Option<PathBuf>,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
    pub num_classes: Option<usize>,
    pub sbm: Option<SbmConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "dataset".into(),
            edges: None,
            features: None,
            labels: None,
            splits: None,
            split_ratios: (0.7, 0.1, 0.2),
            split_seed: 0,
            num_classes: None,
            sbm: None,
        }
    }
}

impl DatasetConfig {
    fn files(&self) -> Option<(&Path, &Path, &Path)> {
        Some((
            self.edges.as_deref()?,
            self.features.as_deref()?,
            self.labels.as_deref()?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.sbm, self.files()) {
            (Some(sbm), None) if self.edges.is_none() && self.features.is_none() && self.labels.is_none() => {
                sbm.validate()
            }
            (None, Some(_)) => {
                for p in [&self.edges, &self.features, &self.labels, &self.splits]
                    .into_iter()
                    .flatten()
                {
                    if !p.exists() {
                        return Err(Error::io(
                            p,
                            std::io::Error::new(std::io::ErrorKind::NotFound, "file does not exist"),
                        ));
                    }
                }
                Ok(())
            }
            (Some(_), _) => Err(Error::Config(
                "[dataset] takes either an sbm table or edge/feature/label files, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "[dataset] needs edges, features and labels paths (or an sbm table)".into(),
            )),
        }
    }

    pub fn load(&self) -> Result<Dataset<f64>> {
        self.validate()?;
        if let Some(sbm) = &self.sbm {
            return generate_sbm(sbm);
        }
        let (e, f, l) = self.files().expect("validated");
        let split = match &self.splits {
            Some(p) => SplitSpec::File(p.clone()),
            None => SplitSpec::Ratios {
                train: self.split_ratios.0,
                val: self.split_ratios.1,
                test: self.split_ratios.2,
                seed: self.split_seed,
            },
        };
        let (ds, report) = load_dataset(e, f, l, &split, self.num_classes)?;
        if report.duplicates_merged > 0 {
            log::info!(
                "{}: merged {} duplicate edge(s)",
                e.display(),
                report.duplicates_merged
            );
        }
        Ok(ds)
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.edges,
            &mut self.features,
            &mut self.labels,
            &mut self.splits,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub rounds: Vec<usize>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub models: Vec<ModelFamily>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rounds: (0..=8).map(|k| 1 << k).collect(),
            fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            seeds: vec![0, 1, 2, 3, 4],
            models: vec![
                ModelFamily::Csgnn,
                ModelFamily::Gcn,
                ModelFamily::Gat,
                ModelFamily::Mlp,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub bins: usize,
    pub epsilon: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bins: DEFAULT_BINS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub samples: usize,
    /// Relative tolerance of the Monte-Carlo noise checks.
    pub tolerance: f64,
    pub neighbors: usize,
    pub coefficients: Vec<f64>,
    pub seed: u64,
    pub rounds: Vec<usize>,
    pub spearman_threshold: f64,
    pub sbm: SbmConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            samples: 1_000_000,
            tolerance: 0.05,
            neighbors: 4,
            coefficients: vec![0.5, 0.3, 0.2],
            seed: 0,
            rounds: vec![0, 1, 2, 4, 8, 16, 32, 64],
            spearman_threshold: 0.9,
            sbm: verification_sbm(),
        }
    }
}

/// 2000 nodes in four blocks with distinct block means.
pub fn verification_sbm() -> SbmConfig {
    SbmConfig {
        nodes: 2000,
        blocks: 4,
        p_in: 0.01,
        p_out: 0.001,
        feature_dim: 8,
        mean_separation: 1.0,
        feature_std: 1.0,
        seed: 0,
        ..Default::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopoSettings {
    pub hops: usize,
    pub scale: f64,
    /// Characteristic-function sample points; the feature width is twice this.
    pub sample_count: usize,
    pub max_t: f64,
    pub subgraph_cap: usize,
    pub cache: Option<PathBuf>,
}

impl Default for TopoSettings {
    fn default() -> Self {
        TopoSettings {
            hops: 2,
            scale: 1.0,
            sample_count: DEFAULT_TOPO_DIM / 2,
            max_t: 20.0,
            subgraph_cap: DEFAULT_SUBGRAPH_CAP,
            cache: None,
        }
    }
}

impl TopoSettings {
    pub fn to_config(&self) -> TopoConfig {
        TopoConfig {
            hops: self.hops,
            scale: self.scale,
            sample_points: evenly_spaced(self.sample_count, self.max_t),
            subgraph_cap: self.subgraph_cap,
        }
    }
}

/// One experiment: dataset, model, training and per-command settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Option<ExperimentKind>,
    pub experiment_id: String,
    /// Per-dataset hyperparameters; keys set explicitly in the file win.
    pub preset: Option<String>,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub metrics: MetricsConfig,
    pub verify: VerifyConfig,
    pub topo: TopoSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kind: None,
            experiment_id: "run".into(),
            preset: None,
            output_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            metrics: MetricsConfig::default(),
            verify: VerifyConfig::default(),
            topo: TopoSettings::default(),
        }
    }
}

fn has_key(raw: &toml::Table, section: &str, key: &str) -> bool {
    raw.get(section)
        .and_then(|s| s.as_table())
        .is_some_and(|t| t.contains_key(key))
}

impl RunConfig {
    /// Parses TOML text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut cfg: RunConfig = raw
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(name) = cfg.preset.clone() {
            let p = Preset::find(&name)?;
            if !has_key(&raw, "model", "hidden_dims") {
                cfg.model.hidden_dims = vec![p.hidden; cfg.model.rounds];
            }
            if !has_key(&raw, "model", "attention_dropout") {
                cfg.model.attention_dropout = p.dropout;
            }
            if !has_key(&raw, "train", "dropout") {
                cfg.train.dropout = p.dropout;
            }
            if !has_key(&raw, "train", "weight_decay") {
                cfg.train.weight_decay = p.weight_decay;
            }
        }
        cfg.model.dropout = cfg.train.dropout;
        cfg.dataset.resolve(base);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(c) = &mut cfg.topo.cache {
            if c.is_relative() {
                *c = base.join(&*c);
            }
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if kind != ExperimentKind::Verify {
            self.dataset.validate()?;
        }
        if kind == ExperimentKind::GenSbm && self.dataset.sbm.is_none() {
            return Err(Error::Config("gen-sbm needs a [dataset.sbm] table".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        let sweeping = matches!(
            kind,
            ExperimentKind::SweepBroadcast | ExperimentKind::SweepEdgedrop
        );
        if sweeping && (self.sweep.seeds.is_empty() || self.sweep.models.is_empty()) {
            return Err(Error::Validation(
                "sweeps need at least one seed and one model".into(),
            ));
        }
        if kind == ExperimentKind::SweepBroadcast && self.sweep.rounds.is_empty() {
            return Err(Error::Validation(
                "broadcast sweep needs a nonempty rounds list".into(),
            ));
        }
        if kind == ExperimentKind::SweepEdgedrop {
            if self.sweep.fractions.is_empty() {
                return Err(Error::Validation(
                    "edge-drop sweep needs a nonempty fractions list".into(),
                ));
            }
            if let Some(f) = self.sweep.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
                return Err(Error::Validation(format!("drop fraction {f} outside [0,1]")));
            }
        }
        if kind == ExperimentKind::Verify {
            self.verify.sbm.validate()?;
            if self.verify.rounds.len() < 2 {
                return Err(Error::Validation(
                    "verify needs at least two broadcast rounds".into(),
                ));
            }
        }
        if self.metrics.bins == 0 {
            return Err(Error::Validation("metrics.bins must be positive".into()));
        }
        Ok(())
    }

    /// Spec for `family` using this config's shared settings.
    pub fn spec_for(&self, family: ModelFamily) -> ModelSpec {
        ModelSpec {
            family,
            ..self.model.clone()
        }
    }
}
