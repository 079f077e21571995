use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smoothgnn::experiment::{self, ExperimentKind, RunConfig, EXIT_VERIFY};
use smoothgnn::models::ModelFamily;
use smoothgnn::{Error, Result};

/// Smoothness metrics, noise and information-gain checks, and GNN experiments on attributed graphs.
#[derive(Parser)]
#[command(name = "smoothgnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print λ_f, λ_l, KL and noise powers for the configured dataset.
    Metrics(Common),
    /// Train one model (or every family) and append a results row.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train every model family in turn.
        #[arg(long)]
        all_models: bool,
    },
    /// Train across broadcast-smoothing rounds.
    SweepBroadcast(Common),
    /// Train after removing growing fractions of cross-label edges.
    SweepEdgedrop(Common),
    /// Run the Monte-Carlo noise checks and the λ_f/KL correlation sweep.
    Verify(Common),
    /// Write the configured SBM as dataset files.
    GenSbm(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Model family; for sweeps, replaces the model list.
    #[arg(long)]
    model: Option<ModelFamily>,
    /// Training seed; for sweeps, replaces the seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(m) = self.model {
            cfg.model.family = m;
            cfg.sweep.models = vec![m];
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
            cfg.sweep.seeds = vec![s];
        }
        Ok(cfg)
    }
}

fn print_sweep(report: &experiment::SweepReport) {
    println!("{}\tmodel\tlambda_f\tlambda_l\tkl\tmean_f1\tstd_f1", report.param);
    for r in report.plot_rows() {
        println!(
            "{}\t{}\t{:.6}\t{:.4}\t{:.6}\t{:.4}\t{:.4}",
            r.sweep_value, r.model, r.lambda_f, r.lambda_l, r.kl, r.mean_f1, r.std_f1
        );
    }
}

fn check_kind(cfg: &RunConfig, kind: ExperimentKind) {
    if let Some(k) = cfg.kind {
        if k != kind {
            log::warn!("config declares kind {k:?} but {kind:?} was requested");
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Metrics(c) => {
            let cfg = c.load()?;
            check_kind(&cfg, ExperimentKind::Metrics);
            println!("{}", experiment::cmd_metrics(&cfg)?);
        }
        Command::Train { common, all_models } => {
            let cfg = common.load()?;
            check_kind(&cfg, ExperimentKind::Train);
            let families = if all_models {
                ModelFamily::ALL.to_vec()
            } else {
                vec![cfg.model.family]
            };
            for o in experiment::cmd_train(&cfg, &families, None)? {
                println!(
                    "{}\tseed {}\ttest_f1 {:.4}\tval_f1 {:.4}\tepochs {}\t{}",
                    o.row.model,
                    o.row.seed,
                    o.row.test_f1,
                    o.result.best_val_f1,
                    o.result.epochs_run,
                    o.checkpoint.display()
                );
            }
        }
        Command::SweepBroadcast(c) => {
            let cfg = c.load()?;
            check_kind(&cfg, ExperimentKind::SweepBroadcast);
            print_sweep(&experiment::cmd_sweep_broadcast(&cfg)?);
        }
        Command::SweepEdgedrop(c) => {
            let cfg = c.load()?;
            check_kind(&cfg, ExperimentKind::SweepEdgedrop);
            print_sweep(&experiment::cmd_sweep_edgedrop(&cfg)?);
        }
        Command::Verify(c) => {
            let cfg = c.load()?;
            check_kind(&cfg, ExperimentKind::Verify);
            let report = experiment::cmd_verify(&cfg)?;
            for check in &report.checks {
                println!("{check}");
            }
            return Ok(report.passed());
        }
        Command::GenSbm(c) => {
            let cfg = c.load()?;
            check_kind(&cfg, ExperimentKind::GenSbm);
            for p in experiment::cmd_gen_sbm(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = experiment::exit_code(&e);
            if let Error::Divergence { .. } = e {
                eprintln!("hint: lower the learning rate or check the feature scale");
            }
            ExitCode::from(code as u8)
        }
    }
}
