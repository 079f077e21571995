use std::fs;
use std::path::Path;

use approx::assert_relative_eq;

use super::*;
use crate::synth::SbmConfig;

fn toy_config(dir: &Path) -> RunConfig {
    let text = r#"
        experiment_id = "toy"
        output_dir = "out"

        [dataset]
        name = "toy-sbm"
        [dataset.sbm]
        nodes = 100
        blocks = 2
        p_in = 0.1
        p_out = 0.01
        feature_dim = 4
        mean_separation = 1.5
        seed = 4

        [model]
        hidden_dims = [8, 8]

        [train]
        max_epochs = 60
        patience = 20

        [sweep]
        seeds = [0, 1]
        models = ["gcn", "mlp"]
    "#;
    RunConfig::parse(text, dir).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn preset_fills_only_missing_keys() {
    let text = r#"
        preset = "cora"
        [train]
        weight_decay = 0.5
        [dataset.sbm]
        nodes = 50
    "#;
    let cfg = RunConfig::parse(text, Path::new("/base")).unwrap();
    assert_eq!(cfg.model.hidden_dims, vec![8, 8]);
    assert_eq!(cfg.train.dropout, 0.2);
    assert_eq!(cfg.model.attention_dropout, 0.2);
    assert_eq!(cfg.train.weight_decay, 0.5);
    assert_eq!(cfg.output_dir, Path::new("/base/out"));
    assert_eq!(cfg.dataset.sbm.as_ref().unwrap().nodes, 50);
}

#[test]
fn config_rejects_unknown_keys_and_bad_sweeps() {
    assert!(matches!(
        RunConfig::parse("[model]\nwidth = 3\n", Path::new(".")),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        RunConfig::parse("[sweep]\nmodels = [\"transformer\"]\n", Path::new(".")),
        Err(Error::Config(_))
    ));
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.sweep.seeds.clear();
    assert!(cfg.validate(ExperimentKind::SweepBroadcast).is_err());
    assert!(cfg.validate(ExperimentKind::Train).is_ok());
    let mut cfg = toy_config(dir.path());
    cfg.sweep.fractions = vec![0.5, 1.5];
    assert!(matches!(
        cfg.validate(ExperimentKind::SweepEdgedrop),
        Err(Error::Validation(_))
    ));
    let cfg = RunConfig::default();
    assert!(matches!(
        cfg.validate(ExperimentKind::Metrics),
        Err(Error::Config(_))
    ));
}

#[test]
fn triangle_metrics_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "e.txt", "0 1\n1 2\n0 2\n");
    write(d, "f.txt", "3 1\n0\n1\n0\n");
    write(d, "l.txt", "0 0\n1 0\n2 1\n");
    write(d, "s.txt", "0 train\n1 val\n2 test\n");
    let text = r#"
        [dataset]
        name = "triangle"
        edges = "e.txt"
        features = "f.txt"
        labels = "l.txt"
        splits = "s.txt"
    "#;
    let cfg = RunConfig::parse(text, d).unwrap();
    let report = cmd_metrics(&cfg).unwrap();
    assert_relative_eq!(report.smoothness.lambda_l, 2.0 / 3.0);
    assert_relative_eq!(report.noise_power_mean, 0.5);
    assert_relative_eq!(report.noise_power_sum, 2.0);
    let shown = report.to_string();
    assert!(shown.contains("lambda_l = 0.6666666666666666"), "{shown}");
    let rows: Vec<MetricsRow> =
        read_rows(&d.join("out/metrics.csv"), METRICS_SCHEMA, METRICS_VERSION).unwrap();
    assert_eq!(rows, vec![report.row()]);

    fs::remove_file(d.join("l.txt")).unwrap();
    let err = cmd_metrics(&cfg).unwrap_err();
    assert_eq!(exit_code(&err), EXIT_LOAD);
    assert!(err.to_string().contains("l.txt"), "{err}");
}

#[test]
fn results_table_is_versioned() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let row = ResultRow {
        experiment_id: "e".into(),
        dataset: "d".into(),
        model: "gcn".into(),
        seed: 3,
        sweep_param: String::new(),
        sweep_value: None,
        lambda_f: 0.1,
        lambda_l: 1.0 / 3.0,
        kl: 0.25,
        test_f1: 0.8,
        wall_time_s: 1.5,
    };
    let swept = ResultRow {
        sweep_param: "rounds".into(),
        sweep_value: Some(4.0),
        ..row.clone()
    };
    append_results(&path, std::slice::from_ref(&row)).unwrap();
    append_results(&path, std::slice::from_ref(&swept)).unwrap();
    assert_eq!(read_results(&path).unwrap(), vec![row.clone(), swept]);

    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen(" v1", " v2", 1)).unwrap();
    assert!(matches!(read_results(&path), Err(Error::Results(_))));
    assert!(matches!(append_results(&path, &[row]), Err(Error::Results(_))));
}

#[test]
fn train_all_models_writes_rows_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let out = cmd_train(&cfg, &ModelFamily::ALL, Some(1)).unwrap();
    assert_eq!(out.len(), 8);
    for o in &out {
        assert!(o.checkpoint.exists());
        assert!((0.0..=1.0).contains(&o.row.test_f1));
        assert_eq!(o.row.seed, 1);
    }
    let again = cmd_train(&cfg, &ModelFamily::ALL, Some(1)).unwrap();
    let rows = read_results(&cfg.output_dir.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 16);
    for (a, b) in out.iter().zip(&again) {
        assert_eq!(a.row.payload(), b.row.payload());
    }
    assert_eq!(rows[0].payload(), rows[8].payload());
}

#[test]
fn broadcast_sweep_zero_rounds_matches_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.sweep.rounds = vec![0, 1, 4, 16];
    let report = cmd_sweep_broadcast(&cfg).unwrap();
    assert_eq!(report.points.len(), 4);
    assert_eq!(report.rows.len(), 4 * 2 * 2);
    for w in report.points.windows(2) {
        assert!(
            w[1].lambda_f <= w[0].lambda_f,
            "{} then {}",
            w[0].lambda_f,
            w[1].lambda_f
        );
    }
    let trained = cmd_train(&cfg, &[ModelFamily::Gcn], Some(1)).unwrap();
    let swept = report.points[0].summary(ModelFamily::Gcn).unwrap();
    assert_eq!(swept.f1s[1], trained[0].result.test_f1);

    let plot: Vec<PlotRow> = read_rows(
        &cfg.output_dir.join("plot-broadcast.csv"),
        PLOT_SCHEMA,
        PLOT_VERSION,
    )
    .unwrap();
    assert_eq!(plot, report.plot_rows());
    assert_eq!(plot.len(), 8);
}

#[test]
fn edgedrop_sweep_lowers_label_smoothness() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(dir.path());
    cfg.dataset.sbm = Some(SbmConfig {
        p_out: 0.08,
        ..cfg.dataset.sbm.clone().unwrap()
    });
    cfg.sweep.fractions = vec![0.0, 0.5, 1.0];
    let report = cmd_sweep_edgedrop(&cfg).unwrap();
    let ll: Vec<f64> = report.points.iter().map(|p| p.lambda_l).collect();
    assert!(ll[0] > ll[1] && ll[1] > ll[2] && ll[2] == 0.0, "{ll:?}");
    let mlp: Vec<&ModelSummary> = report
        .points
        .iter()
        .map(|p| p.summary(ModelFamily::Mlp).unwrap())
        .collect();
    assert!(mlp.iter().all(|m| m.f1s == mlp[0].f1s));

    let baseline = cmd_train(&cfg, &[ModelFamily::Gcn], Some(0)).unwrap();
    assert_eq!(
        report.points[0].summary(ModelFamily::Gcn).unwrap().f1s[0],
        baseline[0].result.test_f1
    );
}

#[test]
fn verify_passes_on_default_checks() {
    let mut cfg = RunConfig::default();
    cfg.verify.samples = 200_000;
    cfg.verify.tolerance = 0.05;
    cfg.verify.sbm = SbmConfig {
        nodes: 400,
        p_in: 0.05,
        p_out: 0.005,
        blocks: 4,
        ..cfg.verify.sbm.clone()
    };
    let report = cmd_verify(&cfg).unwrap();
    for c in &report.checks {
        assert!(c.pass, "{c}");
    }
    assert_eq!(report.checks.len(), 6);

    cfg.verify.spearman_threshold = 1.5;
    assert!(!cmd_verify(&cfg).unwrap().passed());
}

#[test]
fn gen_sbm_files_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let paths = cmd_gen_sbm(&cfg).unwrap();
    let original = cfg.dataset.load().unwrap();
    let mut files = DatasetConfig {
        name: "reloaded".into(),
        edges: Some(paths[0].clone()),
        features: Some(paths[1].clone()),
        labels: Some(paths[2].clone()),
        splits: Some(paths[3].clone()),
        num_classes: Some(2),
        ..Default::default()
    };
    let reloaded = files.load().unwrap();
    assert_eq!(reloaded.adjacency(), original.adjacency());
    assert_eq!(reloaded.features(), original.features());
    assert_eq!(reloaded.labels(), original.labels());
    assert_eq!(reloaded.splits(), original.splits());
    files.sbm = Some(SbmConfig::default());
    assert!(files.load().is_err());
}

#[test]
fn exit_codes_follow_error_kind() {
    assert_eq!(exit_code(&Error::Validation("x".into())), EXIT_VALIDATION);
    assert_eq!(exit_code(&Error::Config("x".into())), EXIT_VALIDATION);
    assert_eq!(
        exit_code(&Error::Divergence {
            epoch: 3,
            detail: "nan".into()
        }),
        EXIT_DIVERGENCE
    );
    assert_eq!(exit_code(&Error::Checkpoint("x".into())), EXIT_LOAD);
}
