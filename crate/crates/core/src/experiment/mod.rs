//! Experiment runner behind the command-line front end.

mod config;
mod results;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{
    verification_sbm, DatasetConfig, ExperimentKind, MetricsConfig, RunConfig, SweepConfig, TopoSettings,
    VerifyConfig,
};
pub use results::{
    append_results, append_rows, read_results, read_rows, write_rows, MetricsRow, PlotRow, ResultRow,
    METRICS_SCHEMA, METRICS_VERSION, PLOT_SCHEMA, PLOT_VERSION, RESULTS_SCHEMA, RESULTS_VERSION,
};

use crate::error::{Error, Result};
use crate::graph::{normalize_features, save_dataset, Dataset};
use crate::infogain::{
    aggregated_noise_power, build_histograms, chi_square_kl_approx, kl_divergence, monte_carlo_noise_check,
    HistogramMode, NoiseModel,
};
use crate::models::ModelFamily;
use crate::smoothness::{
    broadcast_smooth, drop_cross_label_edges, feature_smoothness, label_smoothness, SmoothnessReport,
};
use crate::stats;
use crate::synth::generate_sbm;
use crate::topo::{all_topo_features, cached_topo_features, TopoFeatureMatrix};
use crate::train::{save_checkpoint, train, RunResult, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_LOAD: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;
pub const EXIT_INTERNAL: i32 = 1;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Checkpoint(_) | Error::Results(_) => EXIT_LOAD,
        Error::Validation(_) | Error::Config(_) | Error::Numeric(_) => EXIT_VALIDATION,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Shape { .. } | Error::Autodiff(_) => EXIT_INTERNAL,
    }
}

/// λ_f and KL on min-max normalized features, λ_l on labeled edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphMetrics {
    pub lambda_f: f64,
    /// NaN when no edge has both endpoints labeled.
    pub lambda_l: f64,
    pub kl: f64,
}

pub fn graph_metrics(ds: &Dataset<f64>, bins: usize, epsilon: f64) -> Result<GraphMetrics> {
    let norm = normalize_features(ds)?;
    let hist = build_histograms(&norm, bins, HistogramMode::MarginalAverage)?;
    Ok(GraphMetrics {
        lambda_f: feature_smoothness(&norm)?,
        lambda_l: label_smoothness(ds).map_or(f64::NAN, |l| l.lambda_l),
        kl: kl_divergence(&hist, epsilon),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset: String,
    pub nodes: usize,
    pub smoothness: SmoothnessReport,
    pub kl: f64,
    pub chi_square: f64,
    /// Aggregated noise power at σ² = 1, averaged over non-isolated nodes.
    pub noise_power_mean: f64,
    pub noise_power_sum: f64,
}

impl MetricsReport {
    pub fn compute(name: &str, ds: &Dataset<f64>, cfg: &MetricsConfig) -> Result<Self> {
        let norm = normalize_features(ds)?;
        let smoothness = SmoothnessReport::compute(&norm)?;
        let hist = build_histograms(&norm, cfg.bins, HistogramMode::MarginalAverage)?;
        let (mut mean_acc, mut sum_acc, mut count) = (0.0, 0.0, 0usize);
        for v in 0..ds.num_nodes() {
            let deg = ds.degree(v);
            if deg > 0 {
                mean_acc += aggregated_noise_power(&NoiseModel::mean(deg, 1.0)?);
                sum_acc += aggregated_noise_power(&NoiseModel::sum(deg, 1.0)?);
                count += 1;
            }
        }
        Ok(MetricsReport {
            dataset: name.to_string(),
            nodes: ds.num_nodes(),
            smoothness,
            kl: kl_divergence(&hist, cfg.epsilon),
            chi_square: chi_square_kl_approx(&hist.smoothed(cfg.epsilon)),
            noise_power_mean: mean_acc / count as f64,
            noise_power_sum: sum_acc / count as f64,
        })
    }

    pub fn row(&self) -> MetricsRow {
        MetricsRow {
            dataset: self.dataset.clone(),
            nodes: self.nodes,
            edges: self.smoothness.num_edges,
            lambda_f: self.smoothness.lambda_f,
            lambda_l: self.smoothness.lambda_l,
            labeled_edge_coverage: self.smoothness.labeled_edge_coverage(),
            kl: self.kl,
            chi_square: self.chi_square,
            noise_power_mean: self.noise_power_mean,
            noise_power_sum: self.noise_power_sum,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.smoothness;
        writeln!(f, "dataset = {}", self.dataset)?;
        writeln!(f, "nodes = {}", self.nodes)?;
        writeln!(f, "edges = {}", s.num_edges)?;
        writeln!(f, "lambda_f = {}", s.lambda_f)?;
        writeln!(f, "lambda_l = {}", s.lambda_l)?;
        writeln!(f, "labeled_edge_coverage = {}", s.labeled_edge_coverage())?;
        if s.is_partial_label_estimate() {
            writeln!(f, "lambda_l_partial = true")?;
        }
        writeln!(f, "kl_marginal_average = {}", self.kl)?;
        writeln!(f, "chi_square_approx = {}", self.chi_square)?;
        writeln!(f, "noise_power_mean = {}", self.noise_power_mean)?;
        write!(f, "noise_power_sum = {}", self.noise_power_sum)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load(cfg: &RunConfig, kind: ExperimentKind) -> Result<Dataset<f64>> {
    cfg.validate(kind)?;
    cfg.dataset.load()
}

pub fn cmd_metrics(cfg: &RunConfig) -> Result<MetricsReport> {
    let ds = load(cfg, ExperimentKind::Metrics)?;
    let report = MetricsReport::compute(&cfg.dataset.name, &ds, &cfg.metrics)?;
    ensure_dir(&cfg.output_dir)?;
    append_rows(
        &cfg.output_dir.join("metrics.csv"),
        METRICS_SCHEMA,
        METRICS_VERSION,
        &[report.row()],
    )?;
    Ok(report)
}

fn topo_features(
    cfg: &RunConfig,
    ds: &Dataset<f64>,
    families: &[ModelFamily],
    use_cache: bool,
) -> Result<Option<TopoFeatureMatrix<f64>>> {
    if !cfg.model.use_topo_features || !families.contains(&ModelFamily::Csgnn) {
        return Ok(None);
    }
    let tc = cfg.topo.to_config();
    match (&cfg.topo.cache, use_cache) {
        (Some(path), true) => cached_topo_features(ds, &tc, path).map(Some),
        _ => all_topo_features(ds, &tc).map(Some),
    }
}

fn train_one(
    cfg: &RunConfig,
    ds: &Dataset<f64>,
    topo: Option<&TopoFeatureMatrix<f64>>,
    family: ModelFamily,
    seed: u64,
) -> Result<(RunResult, crate::models::Model<f64>)> {
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let topo = if family == ModelFamily::Csgnn { topo } else { None };
    train(ds, topo, &cfg.spec_for(family), &tc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub row: ResultRow,
    pub result: RunResult,
    pub checkpoint: PathBuf,
}

/// Trains each family at `seed` (default: the config's seed), appends
/// rows to `results.csv` and writes one checkpoint per run.
pub fn cmd_train(cfg: &RunConfig, families: &[ModelFamily], seed: Option<u64>) -> Result<Vec<TrainOutcome>> {
    let ds = load(cfg, ExperimentKind::Train)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    let metrics = graph_metrics(&ds, cfg.metrics.bins, cfg.metrics.epsilon)?;
    let topo = topo_features(cfg, &ds, families, true)?;
    let ckpt_dir = cfg.output_dir.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    let mut out = Vec::new();
    for &family in families {
        let start = Instant::now();
        let (result, model) = train_one(cfg, &ds, topo.as_ref(), family, seed)?;
        let checkpoint = ckpt_dir.join(format!("{}-{}-seed{seed}.ckpt", cfg.experiment_id, family.name()));
        save_checkpoint(&checkpoint, model.spec(), model.params())?;
        let row = ResultRow {
            experiment_id: cfg.experiment_id.clone(),
            dataset: cfg.dataset.name.clone(),
            model: family.name().to_string(),
            seed,
            sweep_param: String::new(),
            sweep_value: None,
            lambda_f: metrics.lambda_f,
            lambda_l: metrics.lambda_l,
            kl: metrics.kl,
            test_f1: result.test_f1,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "{family} seed {seed}: test F1 {:.4} after {} epochs",
            result.test_f1,
            result.epochs_run
        );
        out.push(TrainOutcome {
            row,
            result,
            checkpoint,
        });
    }
    let rows: Vec<ResultRow> = out.iter().map(|o| o.row.clone()).collect();
    append_results(&cfg.output_dir.join("results.csv"), &rows)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub family: ModelFamily,
    /// Test F1 per seed, in seed order.
    pub f1s: Vec<f64>,
    pub mean_f1: f64,
    pub std_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    /// Metrics averaged over the replicates at this point.
    pub lambda_f: f64,
    pub lambda_l: f64,
    pub kl: f64,
    pub models: Vec<ModelSummary>,
}

impl SweepPoint {
    pub fn summary(&self, family: ModelFamily) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.family == family)
    }

    /// Mean of the per-model mean F1 over `families`.
    pub fn mean_f1(&self, families: &[ModelFamily]) -> f64 {
        let xs: Vec<f64> = families
            .iter()
            .filter_map(|&f| self.summary(f).map(|m| m.mean_f1))
            .collect();
        stats::mean(&xs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub param: String,
    pub points: Vec<SweepPoint>,
    pub rows: Vec<ResultRow>,
}

impl SweepReport {
    pub fn plot_rows(&self) -> Vec<PlotRow> {
        self.points
            .iter()
            .flat_map(|p| {
                p.models.iter().map(move |m| PlotRow {
                    sweep_param: self.param.clone(),
                    sweep_value: p.value,
                    lambda_f: p.lambda_f,
                    lambda_l: p.lambda_l,
                    kl: p.kl,
                    model: m.family.name().to_string(),
                    mean_f1: m.mean_f1,
                    std_f1: m.std_f1,
                    runs: m.f1s.len(),
                })
            })
            .collect()
    }
}

struct SweepRunner<'a> {
    cfg: &'a RunConfig,
    param: &'static str,
    points: Vec<SweepPoint>,
    rows: Vec<ResultRow>,
}

impl<'a> SweepRunner<'a> {
    fn new(cfg: &'a RunConfig, param: &'static str) -> Self {
        SweepRunner {
            cfg,
            param,
            points: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Trains every model and seed at one sweep point; `variant(seed)`
    /// supplies the graph for each replicate.
    fn point(
        &mut self,
        value: f64,
        mut variant: impl FnMut(u64) -> Result<(Dataset<f64>, Option<TopoFeatureMatrix<f64>>)>,
    ) -> Result<()> {
        let cfg = self.cfg;
        let seeds = &cfg.sweep.seeds;
        let mut f1s = vec![Vec::with_capacity(seeds.len()); cfg.sweep.models.len()];
        let mut gm = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let (ds, topo) = variant(seed)?;
            let m = graph_metrics(&ds, cfg.metrics.bins, cfg.metrics.epsilon)?;
            gm.push(m);
            for (k, &family) in cfg.sweep.models.iter().enumerate() {
                let start = Instant::now();
                let (result, _) = train_one(cfg, &ds, topo.as_ref(), family, seed)?;
                f1s[k].push(result.test_f1);
                self.rows.push(ResultRow {
                    experiment_id: cfg.experiment_id.clone(),
                    dataset: cfg.dataset.name.clone(),
                    model: family.name().to_string(),
                    seed,
                    sweep_param: self.param.to_string(),
                    sweep_value: Some(value),
                    lambda_f: m.lambda_f,
                    lambda_l: m.lambda_l,
                    kl: m.kl,
                    test_f1: result.test_f1,
                    wall_time_s: start.elapsed().as_secs_f64(),
                });
            }
        }
        let avg = |f: fn(&GraphMetrics) -> f64| stats::mean(&gm.iter().map(f).collect::<Vec<_>>());
        let models = cfg
            .sweep
            .models
            .iter()
            .zip(f1s)
            .map(|(&family, f1s)| ModelSummary {
                family,
                mean_f1: stats::mean(&f1s),
                std_f1: stats::std_dev(&f1s),
                f1s,
            })
            .collect();
        log::info!("{} = {value}: done", self.param);
        self.points.push(SweepPoint {
            value,
            lambda_f: avg(|m| m.lambda_f),
            lambda_l: avg(|m| m.lambda_l),
            kl: avg(|m| m.kl),
            models,
        });
        Ok(())
    }

    fn finish(self) -> SweepReport {
        SweepReport {
            param: self.param.to_string(),
            points: self.points,
            rows: self.rows,
        }
    }
}

/// Trains the configured models on `ds` after each number of broadcast rounds.
pub fn broadcast_sweep(cfg: &RunConfig, ds: &Dataset<f64>, rounds: &[usize]) -> Result<SweepReport> {
    let topo = topo_features(cfg, ds, &cfg.sweep.models, true)?;
    let mut runner = SweepRunner::new(cfg, "rounds");
    for &r in rounds {
        let smoothed = broadcast_smooth(ds, r)?;
        runner.point(r as f64, |_| Ok((smoothed.clone(), topo.clone())))?;
    }
    Ok(runner.finish())
}

fn drop_seed(seed: u64, point: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(point as u64)
}

/// Trains the configured models after removing each fraction of the
/// cross-label edges; every replicate draws its own removal.
pub fn edgedrop_sweep(cfg: &RunConfig, ds: &Dataset<f64>, fractions: &[f64]) -> Result<SweepReport> {
    let mut runner = SweepRunner::new(cfg, "fraction");
    for (i, &frac) in fractions.iter().enumerate() {
        runner.point(frac, |seed| {
            let dropped = drop_cross_label_edges(ds, frac, drop_seed(seed, i))?;
            let topo = topo_features(cfg, &dropped, &cfg.sweep.models, false)?;
            Ok((dropped, topo))
        })?;
    }
    Ok(runner.finish())
}

fn emit_sweep(cfg: &RunConfig, report: &SweepReport, plot_name: &str) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    append_results(&cfg.output_dir.join("results.csv"), &report.rows)?;
    write_rows(
        &cfg.output_dir.join(plot_name),
        PLOT_SCHEMA,
        PLOT_VERSION,
        &report.plot_rows(),
    )
}

pub fn cmd_sweep_broadcast(cfg: &RunConfig) -> Result<SweepReport> {
    let ds = load(cfg, ExperimentKind::SweepBroadcast)?;
    let report = broadcast_sweep(cfg, &ds, &cfg.sweep.rounds)?;
    emit_sweep(cfg, &report, "plot-broadcast.csv")?;
    Ok(report)
}

pub fn cmd_sweep_edgedrop(cfg: &RunConfig) -> Result<SweepReport> {
    let ds = load(cfg, ExperimentKind::SweepEdgedrop)?;
    let report = edgedrop_sweep(cfg, &ds, &cfg.sweep.fractions)?;
    emit_sweep(cfg, &report, "plot-edgedrop.csv")?;
    Ok(report)
}

/// λ_f and KL after each number of broadcast rounds.
pub fn broadcast_metrics(
    ds: &Dataset<f64>,
    rounds: &[usize],
    bins: usize,
    epsilon: f64,
) -> Result<Vec<(usize, GraphMetrics)>> {
    rounds
        .iter()
        .map(|&r| Ok((r, graph_metrics(&broadcast_smooth(ds, r)?, bins, epsilon)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: String,
    pub pass: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {}: measured {} (threshold {})",
            self.name, self.measured, self.threshold
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn noise_check(name: &str, nm: &NoiseModel, vc: &VerifyConfig) -> Result<Check> {
    let expected = aggregated_noise_power(nm);
    let measured = monte_carlo_noise_check(nm, vc.samples, vc.seed)?;
    Ok(Check {
        name: format!("noise power, {name}"),
        measured,
        threshold: format!("{expected} ± {}%", vc.tolerance * 100.0),
        pass: ((measured - expected) / expected).abs() <= vc.tolerance,
    })
}

/// Spearman correlation of λ_f and KL over a broadcast sweep of `ds`.
pub fn smoothness_kl_correlation(
    ds: &Dataset<f64>,
    rounds: &[usize],
    bins: usize,
    epsilon: f64,
) -> Result<f64> {
    let sweep = broadcast_metrics(ds, rounds, bins, epsilon)?;
    let lf: Vec<f64> = sweep.iter().map(|(_, m)| m.lambda_f).collect();
    let kl: Vec<f64> = sweep.iter().map(|(_, m)| m.kl).collect();
    Ok(stats::spearman(&lf, &kl))
}

/// Monte-Carlo noise checks and the λ_f–KL correlation sweep.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    cfg.validate(ExperimentKind::Verify)?;
    let vc = &cfg.verify;
    let n = vc.neighbors;
    let mut checks = vec![
        noise_check(&format!("mean of {n}"), &NoiseModel::mean(n, 1.0)?, vc)?,
        noise_check(&format!("sum of {n}"), &NoiseModel::sum(n, 1.0)?, vc)?,
        noise_check(
            &format!("weights {:?}", vc.coefficients),
            &NoiseModel::new(1.0, vc.coefficients.clone())?,
            vc,
        )?,
    ];

    let ds = generate_sbm::<f64>(&vc.sbm)?;
    let flat = ds.with_features(vec![0.5; ds.features().len()], ds.dim())?;
    let m = graph_metrics(&flat, cfg.metrics.bins, cfg.metrics.epsilon)?;
    checks.push(Check {
        name: "constant features give zero lambda_f".into(),
        measured: m.lambda_f,
        threshold: "= 0".into(),
        pass: m.lambda_f == 0.0,
    });
    checks.push(Check {
        name: "constant features give zero KL".into(),
        measured: m.kl,
        threshold: "≤ 1e-12".into(),
        pass: m.kl.abs() <= 1e-12,
    });

    let rho = smoothness_kl_correlation(&ds, &vc.rounds, cfg.metrics.bins, cfg.metrics.epsilon)?;
    checks.push(Check {
        name: format!("Spearman(lambda_f, KL) over broadcast rounds {:?}", vc.rounds),
        measured: rho,
        threshold: format!("> {}", vc.spearman_threshold),
        pass: rho > vc.spearman_threshold,
    });
    Ok(VerifyReport { checks })
}

/// Writes the configured SBM as dataset text files into the output directory.
pub fn cmd_gen_sbm(cfg: &RunConfig) -> Result<[PathBuf; 4]> {
    cfg.validate(ExperimentKind::GenSbm)?;
    let ds = cfg.dataset.load()?;
    ensure_dir(&cfg.output_dir)?;
    let paths = ["edges.txt", "features.txt", "labels.txt", "splits.txt"].map(|f| cfg.output_dir.join(f));
    save_dataset(&ds, &paths[0], &paths[1], &paths[2], Some(&paths[3]))?;
    Ok(paths)
}

#[cfg(test)]
mod tests;
