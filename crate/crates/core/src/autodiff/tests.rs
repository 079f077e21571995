use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            // keep away from the relu/elu kink
            if v.abs() < 1e-3 {
                v.signum() * 1e-3 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn random_segments(rng: &mut ChaCha8Rng, nodes: usize, entries: usize) -> SegmentIndex {
    let mut lists = vec![Vec::new(); nodes];
    for _ in 0..entries {
        let t = rng.random_range(0..nodes);
        lists[t].push(rng.random_range(0..nodes));
    }
    SegmentIndex::from_lists(&lists)
}

fn check(store: &ParamStore<f64>, f: impl Fn(&mut ComputeGraph<f64>, &[Var]) -> crate::Result<Var>) -> f64 {
    gradient_check(store, f, GradCheckOptions::default())
        .unwrap()
        .max_rel_error
}

#[test]
fn segment_softmax_uniform() {
    let seg = Arc::new(SegmentIndex::from_lists(&[vec![0, 1, 2]]));
    let mut g = ComputeGraph::<f64>::new();
    let x = g.constant(Tensor::column(vec![0.7, 0.7, 0.7]));
    let y = g.segment_softmax(x, &seg).unwrap();
    for &v in g.value(y).data() {
        assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
    }
}

#[test]
fn segment_softmax_hand_values() {
    let seg = Arc::new(SegmentIndex::from_lists(&[vec![0, 1]]));
    let mut g = ComputeGraph::<f64>::new();
    let x = g.constant(Tensor::column(vec![0.0, 3f64.ln()]));
    let y = g.segment_softmax(x, &seg).unwrap();
    assert_relative_eq!(g.value(y).data()[0], 0.25, epsilon = 1e-12);
    assert_relative_eq!(g.value(y).data()[1], 0.75, epsilon = 1e-12);
}

#[test]
fn dropout_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = ComputeGraph::<f64>::new();
    let x = g.constant(Tensor::column(vec![1.0, 2.0, 3.0]));
    assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
    assert!(matches!(g.dropout(x, 1.0, &mut rng), Err(Error::Validation(_))));
}

#[test]
fn dropout_seeded_and_scaled() {
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = ComputeGraph::<f64>::new();
        let x = g.constant(Tensor::full(&[50, 4], 1.0));
        let y = g.dropout(x, 0.5, &mut rng).unwrap();
        g.value(y).data().to_vec()
    };
    let a = run(3);
    assert_eq!(a, run(3));
    assert_ne!(a, run(4));
    assert!(a.iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn linear_sum_gradient_is_broadcast_input() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add(
        "w",
        Tensor::from_f64(&[3, 2], &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap(),
    );
    let mut g = ComputeGraph::new();
    let wv = g.param(&store, w);
    let x = g.constant(Tensor::from_f64(&[1, 2], &[2.0, -7.0]).unwrap());
    let y = g.linear(x, wv).unwrap();
    let loss = g.sum_all(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(wv).unwrap().data(), &[2.0, -7.0, 2.0, -7.0, 2.0, -7.0]);
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_errors() {
    let mut g = ComputeGraph::<f64>::new();
    let x = g.variable(Tensor::column(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::Autodiff(_))));
    let s = g.sum_all(x);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Autodiff(_))));
    g.reset_grads();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn gradients_accumulate_over_reuse() {
    let mut g = ComputeGraph::<f64>::new();
    let x = g.variable(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    g.backward(z).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 7.0);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = ComputeGraph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { op, detail }) => {
            assert_eq!(op, "matmul");
            assert!(detail.contains("[2,3]"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, c).is_err());
    assert!(g.concat_cols(a, c).is_err());
    let seg = Arc::new(SegmentIndex::from_lists(&[vec![0]]));
    assert!(g.segment_softmax(a, &seg).is_err());
}

#[test]
fn cross_entropy_ignores_unlisted_rows() {
    let mut g = ComputeGraph::<f64>::new();
    let x = g.variable(Tensor::from_f64(&[3, 2], &[0.1, 0.9, 2.0, -1.0, 0.3, 0.3]).unwrap());
    let l = g.softmax_cross_entropy(x, &[(0, 1), (2, 0)]).unwrap();
    // mean of -ln softmax: row0 class1, row2 class0
    let r0 = -(0.9f64.exp() / (0.1f64.exp() + 0.9f64.exp())).ln();
    let r2 = 2f64.ln();
    assert_relative_eq!(g.value(l).item(), (r0 + r2) / 2.0, epsilon = 1e-12);
    g.backward(l).unwrap();
    let gx = g.grad(x).unwrap();
    assert_eq!(&gx.data()[2..4], &[0.0, 0.0]);
}

#[test]
fn l2_penalty_is_half_squared_norm() {
    let mut g = ComputeGraph::<f64>::new();
    let w = g.variable(Tensor::column(vec![1.0, -2.0]));
    let p = g.l2_penalty(&[w], 0.01);
    assert_relative_eq!(g.value(p).item(), 0.025, epsilon = 1e-15);
    g.backward(p).unwrap();
    assert_eq!(g.grad(w).unwrap().data(), &[0.01, -0.02]);
}

#[test]
fn segment_max_and_empty_segment() {
    let seg = Arc::new(SegmentIndex::from_lists(&[vec![0, 1], vec![]]));
    let mut g = ComputeGraph::<f64>::new();
    let x = g.variable(Tensor::from_f64(&[2, 2], &[3.0, -1.0, 5.0, -4.0]).unwrap());
    let y = g.segment_max(x, &seg).unwrap();
    assert_eq!(g.value(y).data(), &[5.0, -1.0, 0.0, 0.0]);
    let s = g.sum_all(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn gradcheck_identity_is_exact() {
    let mut store = ParamStore::<f64>::new();
    store.add("w", Tensor::scalar(0.37));
    let err = check(&store, |_, p| Ok(p[0]));
    assert_eq!(err, 0.0);
}

#[test]
fn gradcheck_matmul_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    store.add("x", rand_tensor(&mut rng, &[5, 4]));
    store.add("w", rand_tensor(&mut rng, &[4, 3]));
    let err = check(&store, |g, p| {
        let y = g.matmul(p[0], p[1])?;
        let r = g.relu(y);
        let sq = g.mul(r, r)?;
        Ok(g.sum_all(sq))
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradcheck_segment_softmax_20_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seg = Arc::new(random_segments(&mut rng, 6, 20));
    let mut store = ParamStore::<f64>::new();
    store.add("logits", rand_tensor(&mut rng, &[20, 1]));
    let weights = g_const(&mut rng, 20);
    let err = check(&store, |g, p| {
        let a = g.segment_softmax(p[0], &seg)?;
        let w = g.constant(weights.clone());
        let aw = g.mul(a, w)?;
        let sq = g.mul(aw, aw)?;
        Ok(g.sum_all(sq))
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn segment_normalize_values_and_gradient() {
    let seg = Arc::new(SegmentIndex::from_lists(&[vec![0, 1, 2], vec![3], vec![]]));
    let mut g = ComputeGraph::<f64>::new();
    let x = g.constant(Tensor::column(vec![0.25, 0.0, 0.75, 0.0]));
    let y = g.segment_normalize(x, &seg).unwrap();
    assert_eq!(g.value(y).data(), &[0.25, 0.0, 0.75, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seg = Arc::new(random_segments(&mut rng, 4, 12));
    let mut store = ParamStore::<f64>::new();
    let pos: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..1.0)).collect();
    store.add("x", Tensor::column(pos));
    let w = g_const(&mut rng, 12);
    let err = check(&store, |g, p| {
        let y = g.segment_normalize(p[0], &seg)?;
        let c = g.constant(w.clone());
        let yw = g.mul(y, c)?;
        Ok(g.sum_all(yw))
    });
    assert!(err < 1e-4, "{err}");
}

fn g_const(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    rand_tensor(rng, &[n, 1])
}

#[test]
fn gradcheck_every_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let seg = Arc::new(random_segments(&mut rng, 5, 20));
    let src = seg.sources().clone();
    let mut store = ParamStore::<f64>::new();
    store.add("h", rand_tensor(&mut rng, &[5, 3]));
    store.add("w", rand_tensor(&mut rng, &[4, 3]));
    store.add("b", rand_tensor(&mut rng, &[1, 4]));
    store.add("e", rand_tensor(&mut rng, &[20, 1]));
    store.add("m", rand_tensor(&mut rng, &[3, 2]));
    let err = check(&store, |g, p| {
        let (h, w, b, e, m) = (p[0], p[1], p[2], p[3], p[4]);
        let lin = g.linear(h, w)?;
        let lin = g.add_bias(lin, b)?;
        let el = g.elu(lin, 1.0);
        let lk = g.leaky_relu(lin, 0.2);
        let cat = g.concat_cols(el, lk)?;
        let sm = g.segment_softmax(e, &seg)?;
        let agg = g.weighted_neighbor_sum(sm, h, &seg)?;
        let gath = g.row_gather(h, src.clone())?;
        let ssum = g.segment_sum(gath, &seg)?;
        let smax = g.segment_max(gath, &seg)?;
        let mixed = g.sub(ssum, smax)?;
        let mixed = g.add(mixed, agg)?;
        let mm = g.matmul(mixed, m)?;
        let ex = g.exp(mm);
        let ex = g.scale(ex, 0.3);
        let dots = g.row_dot(agg, h)?;
        let logits = g.concat_cols(cat, ex)?;
        let logits = g.concat_cols(logits, dots)?;
        let ce = g.softmax_cross_entropy(logits, &[(0, 1), (2, 4), (3, 8), (4, 0)])?;
        let pen = g.l2_penalty(&[w, m], 0.05);
        g.add(ce, pen)
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn gradcheck_subsamples_large_fragments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    store.add("w", rand_tensor(&mut rng, &[40, 30]));
    let rep = gradient_check(
        &store,
        |g, p| {
            let e = g.exp(p[0]);
            Ok(g.sum_all(e))
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(rep.coordinates_checked, 100);
    assert!(rep.max_rel_error < 1e-6);
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::column(vec![0.3, -0.7]));
    let mut opt = Adam::new(AdamConfig::default());
    for _ in 0..10 {
        opt.step(&mut store, &[(w, Tensor::zeros(&[2, 1]))]).unwrap();
    }
    assert_eq!(store.value(w).data(), &[0.3, -0.7]);
}

#[test]
fn adam_first_step() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::scalar(1.0));
    let mut opt = Adam::new(AdamConfig::default());
    opt.step(&mut store, &[(w, Tensor::scalar(1.0))]).unwrap();
    assert_relative_eq!(store.value(w).item(), 1.0 - 0.01, epsilon = 1e-8);
}

#[test]
fn adam_quadratic_bowl() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::scalar(1.0));
    let mut opt = Adam::new(AdamConfig::default());
    let mut reached = None;
    for step in 1..=500 {
        let mut g = ComputeGraph::new();
        let wv = g.param(&store, w);
        let sq = g.mul(wv, wv).unwrap();
        g.backward(sq).unwrap();
        opt.step(&mut store, &g.param_grads()).unwrap();
        if store.value(w).item().abs() < 1e-3 && reached.is_none() {
            reached = Some(step);
        }
    }
    assert!(reached.is_some(), "final w = {}", store.value(w).item());
}

#[test]
fn adam_rejects_nonfinite() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("layer0.w", Tensor::scalar(1.0));
    let mut opt = Adam::new(AdamConfig::default());
    match opt.step(&mut store, &[(w, Tensor::scalar(f64::NAN))]) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("layer0.w")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn works_in_single_precision() {
    let mut store = ParamStore::<f32>::new();
    store.add("w", Tensor::from_f64(&[2, 2], &[0.5, -0.3, 0.2, 0.9]).unwrap());
    let rep = gradient_check(
        &store,
        |g, p| {
            let e = g.elu(p[0], 1.0);
            let s = g.mul(e, e)?;
            Ok(g.sum_all(s))
        },
        GradCheckOptions {
            step: 1e-2,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-2, "{}", rep.max_rel_error);
}

proptest! {
    #[test]
    fn segment_softmax_normalizes(
        logits in proptest::collection::vec(-30.0f64..30.0, 1..40),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = logits.len();
        let mut lists = vec![Vec::new(); 4];
        for e in 0..n {
            lists[rng.random_range(0..4)].push(e);
        }
        let seg = Arc::new(SegmentIndex::from_lists(&lists));
        let mut g = ComputeGraph::<f64>::new();
        let x = g.constant(Tensor::column(logits));
        let y = g.segment_softmax(x, &seg).unwrap();
        let v = g.value(y).data();
        for i in 0..seg.num_segments() {
            let r = seg.segment(i);
            if r.is_empty() { continue; }
            let s: f64 = v[r.clone()].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(v[r].iter().all(|&a| a >= 0.0));
        }
    }
}
