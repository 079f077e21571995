use approx::assert_relative_eq;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::Dataset;
use crate::models::ModelFamily;
use crate::synth::{generate_sbm, SbmConfig};

fn toy_sbm() -> Dataset<f64> {
    generate_sbm(&SbmConfig {
        nodes: 100,
        blocks: 2,
        p_in: 0.1,
        p_out: 0.005,
        feature_dim: 4,
        mean_separation: 2.0,
        feature_std: 0.15,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        max_epochs: 300,
        patience: 50,
        seed: 1,
        ..Default::default()
    }
}

#[test]
fn f1_hand_counts() {
    let truth = [Some(0), Some(1), Some(2), Some(1)];
    assert_eq!(f1_micro(&[0, 1, 2, 1], &truth, &[0, 1, 2, 3]).unwrap(), 1.0);
    assert_eq!(f1_micro(&[0, 1, 2, 0], &truth, &[0, 1, 2, 3]).unwrap(), 0.75);
    assert_eq!(f1_micro(&[1, 0, 0, 0], &truth, &[0, 1, 2, 3]).unwrap(), 0.0);
    assert!(f1_micro(&[0], &truth, &[]).is_err());
    assert!(f1_micro(&[0, 0], &[Some(0), None], &[1]).is_err());
}

#[test]
fn every_family_overfits_toy_sbm() {
    let ds = toy_sbm();
    for family in ModelFamily::ALL {
        let spec = ModelSpec::new(family).with_hidden(8);
        let cfg = TrainConfig {
            lr: 0.05,
            max_epochs: 400,
            patience: 400,
            ..quick_cfg()
        };
        let (res, _) = train(&ds, None, &spec, &cfg).unwrap();
        let last = res.history.last().map_or(res.train_f1, |h| h.train_f1);
        assert_eq!(last, 1.0, "{family}");
    }
}

#[test]
fn patience_one_stops_at_second_epoch() {
    let ds = toy_sbm();
    let cfg = TrainConfig {
        lr: 1e-300,
        patience: 1,
        ..quick_cfg()
    };
    let (res, _) = train(&ds, None, &ModelSpec::new(ModelFamily::Gcn), &cfg).unwrap();
    assert_eq!(res.history[0].val_f1, res.history[1].val_f1);
    assert_eq!(res.epochs_run, 2);
    assert_eq!(res.best_epoch, 1);
}

#[test]
fn same_seed_same_result() {
    let ds = toy_sbm();
    let spec = ModelSpec {
        attention_dropout: 0.3,
        ..ModelSpec::new(ModelFamily::Csgnn).with_hidden(8)
    };
    let cfg = TrainConfig {
        dropout: 0.3,
        max_epochs: 40,
        ..quick_cfg()
    };
    let (a, _) = train(&ds, None, &spec, &cfg).unwrap();
    let (b, _) = train(&ds, None, &spec, &cfg).unwrap();
    assert_eq!(a, b);
    let (c, _) = train(&ds, None, &spec, &TrainConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn checkpoint_round_trip() {
    let ds = toy_sbm();
    let spec = ModelSpec::new(ModelFamily::Gat).with_hidden(8);
    let cfg = TrainConfig {
        max_epochs: 30,
        ..quick_cfg()
    };
    let (res, model) = train(&ds, None, &spec, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gat.ckpt");
    save_checkpoint(&path, model.spec(), model.params()).unwrap();

    let loaded = load_checkpoint::<f64>(&path, model.spec()).unwrap();
    assert_eq!(&loaded, model.params());
    let ctx = *model.context();
    let mut fresh = Model::<f64>::new(model.spec().clone(), ds.dim(), 2, ctx, &mut rng(99)).unwrap();
    fresh.params_mut().assign_from(&loaded).unwrap();
    let inputs = GraphInputs::new(&ds, None).unwrap();
    let pred = fresh.predict(&inputs).unwrap();
    let test = ds.split_nodes(Split::Test);
    assert_eq!(f1_micro(&pred, ds.labels(), &test).unwrap(), res.test_f1);

    let csgnn = ModelSpec::new(ModelFamily::Csgnn).with_hidden(8);
    match load_checkpoint::<f64>(&path, &csgnn) {
        Err(Error::Checkpoint(m)) => assert!(m.contains("spec hash"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(
        load_checkpoint::<f64>(&cut, model.spec()),
        Err(Error::Checkpoint(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&cut, &bad).unwrap();
    assert!(matches!(
        load_checkpoint::<f64>(&cut, model.spec()),
        Err(Error::Checkpoint(_))
    ));
}

#[test]
fn test_nodes_get_exactly_zero_gradient() {
    let ds = toy_sbm();
    let inputs = GraphInputs::new(&ds, None).unwrap();
    let ctx = model_context(&ds, 0).unwrap();
    for family in [ModelFamily::Csgnn, ModelFamily::Gcn, ModelFamily::Mlp] {
        let model = Model::<f64>::new(ModelSpec::new(family), ds.dim(), 2, ctx, &mut rng(0)).unwrap();
        let mut g = ComputeGraph::new();
        let vars = g.params_all(model.params());
        let f = model
            .forward_with::<ChaCha8Rng>(&mut g, &vars, &inputs, Mode::Eval)
            .unwrap();
        let targets: Vec<_> = ds
            .split_nodes(Split::Train)
            .into_iter()
            .map(|v| (v, ds.label(v).unwrap()))
            .collect();
        let loss = training_loss(&mut g, f.logits, &targets, &vars, 0.01).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(f.logits).unwrap();
        for v in ds.split_nodes(Split::Test) {
            assert!(grad.row(v).iter().all(|&x| x == 0.0), "{family} node {v}");
        }
    }
}

#[test]
fn logistic_loss_never_rises_over_fifty_epochs() {
    let ds = generate_sbm::<f64>(&SbmConfig {
        nodes: 200,
        blocks: 3,
        feature_dim: 6,
        feature_std: 1.0,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        max_epochs: 400,
        patience: 400,
        ..quick_cfg()
    };
    let (res, _) = train(&ds, None, &ModelSpec::new(ModelFamily::Logistic), &cfg).unwrap();
    let loss: Vec<f64> = res.history.iter().map(|h| h.train_loss).collect();
    for t in 0..loss.len() - 50 {
        assert!(
            loss[t + 50] <= loss[t],
            "epoch {t}: {} -> {}",
            loss[t],
            loss[t + 50]
        );
    }
}

#[test]
fn divergence_is_reported() {
    let ds = generate_sbm::<f64>(&SbmConfig {
        label_noise: 0.3,
        feature_dim: 4,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let huge: Vec<f64> = ds.features().iter().map(|x| x * 1e300).collect();
    let ds = ds.with_features(huge, ds.dim()).unwrap();
    let cfg = TrainConfig {
        lr: 1e10,
        ..quick_cfg()
    };
    let err = train(&ds, None, &ModelSpec::new(ModelFamily::Logistic), &cfg).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
}

#[test]
fn rejects_too_few_train_nodes() {
    let ds = toy_sbm();
    let splits = (0..ds.num_nodes())
        .map(|v| Some(if v == 0 { Split::Train } else { Split::Test }))
        .collect();
    let ds = ds.with_splits(splits).unwrap();
    assert!(matches!(
        train(&ds, None, &ModelSpec::new(ModelFamily::Mlp), &quick_cfg()),
        Err(Error::Validation(_))
    ));
}

#[test]
fn minibatch_only_for_feature_models() {
    let ds = toy_sbm();
    let cfg = TrainConfig {
        batch_size: Some(16),
        max_epochs: 60,
        ..quick_cfg()
    };
    let (res, _) = train(&ds, None, &ModelSpec::new(ModelFamily::Mlp).with_hidden(8), &cfg).unwrap();
    assert_eq!(res.train_f1, 1.0);
}

#[test]
fn presets_follow_dataset_settings() {
    let p = Preset::find("Cora").unwrap();
    assert_eq!((p.dropout, p.weight_decay, p.hidden), (0.2, 0.01, 8));
    assert_eq!(Preset::find("pubmed").unwrap().hidden, 16);
    assert_eq!(Preset::find("bgp").unwrap().hidden, 32);
    assert!(Preset::find("reddit").is_err());
    let mut spec = ModelSpec::new(ModelFamily::Csgnn);
    let mut cfg = TrainConfig::default();
    Preset::find("amazon").unwrap().apply(&mut spec, &mut cfg);
    assert_eq!(spec.hidden_dims, vec![32, 32]);
    assert_relative_eq!(spec.attention_dropout, 0.3);
    assert_relative_eq!(cfg.dropout, 0.3);
    assert_eq!(cfg.weight_decay, 0.0);
}

#[test]
fn train_label_smoothness_uses_train_edges_only() {
    use crate::graph::fixtures::labeled;
    let ds: Dataset<f64> = labeled(4, &[(0, 1), (1, 2), (2, 3)], &[0.0; 4], 1, &[0, 1, 1, 0]);
    let splits = vec![
        Some(Split::Train),
        Some(Split::Train),
        Some(Split::Train),
        Some(Split::Test),
    ];
    let ds = ds.with_splits(splits).unwrap();
    assert_relative_eq!(train_label_smoothness(&ds), 0.5);
}
