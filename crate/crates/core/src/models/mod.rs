//! CS-GNN and the baseline families.

mod labelprop;
pub mod layers;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use labelprop::{label_propagation, LabelPropagation};
pub use layers::Activation;

use crate::autodiff::{ComputeGraph, ParamId, ParamStore, SegmentIndex, Tensor, Var, ELU_ALPHA, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::graph::Dataset;
use crate::scalar::Scalar;
use crate::smoothness::{attention_dim, drop_count};
use crate::topo::TopoFeatureMatrix;
use layers::{GatParams, SageAggregator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Csgnn,
    Gcn,
    SageMean,
    SageMaxpool,
    Gat,
    Mlp,
    Logistic,
    Labelprop,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 8] = [
        ModelFamily::Csgnn,
        ModelFamily::Gcn,
        ModelFamily::SageMean,
        ModelFamily::SageMaxpool,
        ModelFamily::Gat,
        ModelFamily::Mlp,
        ModelFamily::Logistic,
        ModelFamily::Labelprop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Csgnn => "csgnn",
            ModelFamily::Gcn => "gcn",
            ModelFamily::SageMean => "sage-mean",
            ModelFamily::SageMaxpool => "sage-maxpool",
            ModelFamily::Gat => "gat",
            ModelFamily::Mlp => "mlp",
            ModelFamily::Logistic => "logistic",
            ModelFamily::Labelprop => "labelprop",
        }
    }

    /// Families that message-pass over the graph.
    pub fn uses_graph(self) -> bool {
        !matches!(self, ModelFamily::Mlp | ModelFamily::Logistic)
    }

    pub fn is_trainable(self) -> bool {
        self != ModelFamily::Labelprop
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.name() == s || (s == "gat-lite" && *f == ModelFamily::Gat))
            .ok_or_else(|| Error::Config(format!("unknown model family {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub rounds: usize,
    /// Output width of each round; one entry per round.
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
    pub attention_dropout: f64,
    pub use_topo_features: bool,
    pub residual: bool,
    pub heads: usize,
    pub elu_alpha: f64,
    pub leaky_slope: f64,
    /// Zero the low-attention coefficients (CS-GNN).
    pub drop_low_attention: bool,
    /// Rescale the surviving coefficients to sum to one per node.
    pub renormalize_dropped: bool,
    pub label_prop_iters: usize,
    pub label_prop_tolerance: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            family: ModelFamily::Csgnn,
            rounds: 2,
            hidden_dims: vec![16, 16],
            dropout: 0.0,
            attention_dropout: 0.0,
            use_topo_features: false,
            residual: true,
            heads: 1,
            elu_alpha: ELU_ALPHA,
            leaky_slope: LEAKY_SLOPE,
            drop_low_attention: true,
            renormalize_dropped: false,
            label_prop_iters: 1000,
            label_prop_tolerance: 1e-6,
        }
    }
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        ModelSpec {
            family,
            ..Default::default()
        }
    }

    /// Same width for every round.
    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden_dims = vec![hidden; self.rounds];
        self
    }

    pub fn with_rounds(mut self, rounds: usize) -> Self {
        let h = self.hidden_dims.last().copied().unwrap_or(16);
        self.rounds = rounds;
        self.hidden_dims = vec![h; rounds];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.family;
        if f.uses_graph() && f != ModelFamily::Labelprop && self.rounds == 0 {
            return Err(Error::Validation(format!("{f} needs at least one round")));
        }
        if f != ModelFamily::Logistic && f != ModelFamily::Labelprop {
            if self.hidden_dims.len() != self.rounds {
                return Err(Error::Validation(format!(
                    "hidden_dims has {} entries for {} rounds",
                    self.hidden_dims.len(),
                    self.rounds
                )));
            }
            if self.hidden_dims.contains(&0) {
                return Err(Error::Validation("hidden dims must be positive".into()));
            }
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("attention_dropout", self.attention_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        if self.heads != 1 {
            return Err(Error::Validation(format!(
                "only single-head attention is implemented, got heads = {}",
                self.heads
            )));
        }
        Ok(())
    }

    /// Canonical text used for the checkpoint spec hash.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }
}

/// Data-dependent quantities fixed when a model is built.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelContext {
    pub lambda_f: f64,
    pub lambda_l: f64,
    pub num_edges: usize,
    pub topo_dim: usize,
}

impl ModelContext {
    pub fn drop_count(&self) -> usize {
        drop_count(self.num_edges, self.lambda_l)
    }
}

/// Graph-side constants shared by every forward pass on one dataset.
#[derive(Debug, Clone)]
pub struct GraphInputs<T> {
    pub features: Tensor<T>,
    pub topo: Option<Tensor<T>>,
    pub seg: Arc<SegmentIndex>,
    pub seg_self: Arc<SegmentIndex>,
    pub gcn_coef: Tensor<T>,
    pub mean_coef: Tensor<T>,
}

impl<T: Scalar> GraphInputs<T> {
    pub fn new(ds: &Dataset<T>, topo: Option<&TopoFeatureMatrix<T>>) -> Result<Self> {
        let seg = Arc::new(SegmentIndex::from_dataset(ds, false));
        let seg_self = Arc::new(SegmentIndex::from_dataset(ds, true));
        let features = Tensor::matrix(ds.num_nodes(), ds.dim(), ds.features().to_vec())?;
        let topo = match topo {
            Some(m) => {
                if m.num_nodes() != ds.num_nodes() {
                    return Err(Error::Validation(format!(
                        "topology features cover {} nodes, dataset has {}",
                        m.num_nodes(),
                        ds.num_nodes()
                    )));
                }
                Some(Tensor::matrix(ds.num_nodes(), m.dim, m.vectors.clone())?)
            }
            None => None,
        };
        Ok(GraphInputs {
            features,
            topo,
            gcn_coef: Tensor::column(layers::gcn_coefficients(&seg_self)),
            mean_coef: Tensor::column(layers::mean_coefficients(&seg)),
            seg,
            seg_self,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn topo_dim(&self) -> usize {
        self.topo.as_ref().map_or(0, Tensor::cols)
    }
}

#[derive(Debug, Clone)]
struct CsRound {
    w_p: ParamId,
    w_q: ParamId,
    w_l: ParamId,
    attn_dim: usize,
}

#[derive(Debug, Clone)]
struct Dense {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone)]
enum Layers {
    Csgnn {
        rounds: Vec<CsRound>,
        out: ParamId,
    },
    Gcn {
        rounds: Vec<Dense>,
        out: Dense,
    },
    Sage {
        rounds: Vec<(Dense, Option<Dense>)>,
        out: Dense,
    },
    Gat {
        rounds: Vec<(Dense, ParamId, ParamId)>,
        out: Dense,
    },
    Mlp {
        hidden: Vec<Dense>,
        out: Dense,
    },
    LabelProp,
}

/// Forward-pass mode; training mode carries the dropout stream.
pub enum Mode<'a, R> {
    Train(&'a mut R),
    Eval,
}

/// What a forward pass recorded.
pub struct Forward {
    pub logits: Var,
    /// Attention coefficients of each round (after any dropping), when the family has them.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    ctx: ModelContext,
    in_dim: usize,
    num_classes: usize,
    params: ParamStore<T>,
    layers: Layers,
}

impl<T: Scalar> Model<T> {
    pub fn new<R: Rng>(
        spec: ModelSpec,
        in_dim: usize,
        num_classes: usize,
        ctx: ModelContext,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let mut ps = ParamStore::new();
        let topo_dim = if spec.use_topo_features { ctx.topo_dim } else { 0 };
        let dense = |ps: &mut ParamStore<T>, name: &str, out: usize, inp: usize, rng: &mut R| Dense {
            w: ps.add_glorot(format!("{name}.w"), out, inp, rng),
            b: Some(ps.add_zeros(format!("{name}.b"), &[1, out])),
        };
        let layers = match spec.family {
            ModelFamily::Csgnn => {
                let mut rounds = Vec::new();
                let mut d = in_dim;
                for (k, &out) in spec.hidden_dims.iter().enumerate() {
                    let attn = attention_dim(d, ctx.lambda_f);
                    rounds.push(CsRound {
                        w_p: ps.add_glorot(format!("round{k}.w_p"), attn, d + topo_dim, rng),
                        w_q: ps.add_glorot(format!("round{k}.w_q"), attn, d, rng),
                        w_l: ps.add_glorot(format!("round{k}.w_l"), out, 2 * d, rng),
                        attn_dim: attn,
                    });
                    d = out;
                }
                let out = ps.add_glorot("out.w", num_classes, d + topo_dim, rng);
                Layers::Csgnn { rounds, out }
            }
            ModelFamily::Gcn => {
                let mut rounds = Vec::new();
                let mut d = in_dim;
                for (k, &out) in spec.hidden_dims.iter().enumerate() {
                    rounds.push(dense(&mut ps, &format!("round{k}"), out, d, rng));
                    d = out;
                }
                let out = dense(&mut ps, "out", num_classes, d, rng);
                Layers::Gcn { rounds, out }
            }
            ModelFamily::SageMean | ModelFamily::SageMaxpool => {
                let maxpool = spec.family == ModelFamily::SageMaxpool;
                let mut rounds = Vec::new();
                let mut d = in_dim;
                for (k, &out) in spec.hidden_dims.iter().enumerate() {
                    let pool = maxpool.then(|| dense(&mut ps, &format!("round{k}.pool"), d, d, rng));
                    rounds.push((dense(&mut ps, &format!("round{k}"), out, 2 * d, rng), pool));
                    d = out;
                }
                let out = dense(&mut ps, "out", num_classes, d, rng);
                Layers::Sage { rounds, out }
            }
            ModelFamily::Gat => {
                let mut rounds = Vec::new();
                let mut d = in_dim;
                for (k, &out) in spec.hidden_dims.iter().enumerate() {
                    let lin = dense(&mut ps, &format!("round{k}"), out, d, rng);
                    let a_dst = ps.add_glorot(format!("round{k}.a_dst"), 1, out, rng);
                    let a_src = ps.add_glorot(format!("round{k}.a_src"), 1, out, rng);
                    rounds.push((lin, a_dst, a_src));
                    d = out;
                }
                let out = dense(&mut ps, "out", num_classes, d, rng);
                Layers::Gat { rounds, out }
            }
            ModelFamily::Mlp => {
                let mut hidden = Vec::new();
                let mut d = in_dim;
                for (k, &out) in spec.hidden_dims.iter().enumerate() {
                    hidden.push(dense(&mut ps, &format!("hidden{k}"), out, d, rng));
                    d = out;
                }
                let out = dense(&mut ps, "out", num_classes, d, rng);
                Layers::Mlp { hidden, out }
            }
            ModelFamily::Logistic => Layers::Mlp {
                hidden: Vec::new(),
                out: dense(&mut ps, "out", num_classes, in_dim, rng),
            },
            ModelFamily::Labelprop => Layers::LabelProp,
        };
        Ok(Model {
            spec,
            ctx,
            in_dim,
            num_classes,
            params: ps,
            layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn context(&self) -> &ModelContext {
        &self.ctx
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Attention width of every CS-GNN round.
    pub fn attention_dims(&self) -> Vec<usize> {
        match &self.layers {
            Layers::Csgnn { rounds, .. } => rounds.iter().map(|r| r.attn_dim).collect(),
            _ => Vec::new(),
        }
    }

    /// Records the forward pass with parameters taken from the store.
    pub fn forward<R: Rng>(
        &self,
        g: &mut ComputeGraph<T>,
        inputs: &GraphInputs<T>,
        mode: Mode<'_, R>,
    ) -> Result<Forward> {
        let vars = g.params_all(&self.params);
        self.forward_with(g, &vars, inputs, mode)
    }

    /// Forward pass with explicit parameter variables (in store order).
    pub fn forward_with<R: Rng>(
        &self,
        g: &mut ComputeGraph<T>,
        vars: &[Var],
        inputs: &GraphInputs<T>,
        mode: Mode<'_, R>,
    ) -> Result<Forward> {
        if inputs.features.cols() != self.in_dim {
            return Err(Error::shape(
                "forward",
                format!(
                    "model expects {} input features, got {}",
                    self.in_dim,
                    inputs.features.cols()
                ),
            ));
        }
        let mut rng = match mode {
            Mode::Train(r) => Some(r),
            Mode::Eval => None,
        };
        let s = &self.spec;
        let v = |id: ParamId| vars[id.index()];
        let dv = |d: &Dense| (vars[d.w.index()], d.b.map(|b| vars[b.index()]));
        let x = g.constant(inputs.features.clone());
        let mut attention = Vec::new();
        let logits = match &self.layers {
            Layers::Csgnn { rounds, out } => {
                let t = if s.use_topo_features {
                    let t = inputs.topo.clone().ok_or_else(|| {
                        Error::Validation("model expects topology features but none were supplied".into())
                    })?;
                    Some(g.constant(t))
                } else {
                    None
                };
                let r = if s.drop_low_attention {
                    self.ctx.drop_count()
                } else {
                    0
                };
                let mut h = x;
                for round in rounds {
                    h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                    let a = layers::csgnn_attention(
                        g,
                        h,
                        t,
                        v(round.w_p),
                        v(round.w_q),
                        &inputs.seg,
                        s.elu_alpha,
                    )?;
                    let mut a = layers::drop_low_attention(g, a, r)?;
                    if s.renormalize_dropped && r > 0 {
                        a = g.segment_normalize(a, &inputs.seg)?;
                    }
                    a = maybe_dropout(g, a, s.attention_dropout, &mut rng)?;
                    attention.push(a);
                    h = layers::csgnn_layer(
                        g,
                        h,
                        a,
                        v(round.w_l),
                        &inputs.seg,
                        Activation::Relu,
                        s.residual,
                    )?;
                }
                let h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                let z = match t {
                    Some(t) => g.concat_cols(h, t)?,
                    None => h,
                };
                g.linear(z, v(*out))?
            }
            Layers::Gcn { rounds, out } => {
                let coef = g.constant(inputs.gcn_coef.clone());
                let mut h = x;
                for d in rounds {
                    h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                    let (w, b) = dv(d);
                    let next = layers::gcn_layer(g, h, w, b, coef, &inputs.seg_self, Activation::Relu)?;
                    h = residual(g, next, h, s.residual)?;
                }
                let h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                let (w, b) = dv(out);
                layers::dense(g, h, w, b)?
            }
            Layers::Sage { rounds, out } => {
                let coef = g.constant(inputs.mean_coef.clone());
                let mut h = x;
                for (d, pool) in rounds {
                    h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                    let agg = match pool {
                        Some(p) => {
                            let (w_pool, b_pool) = dv(p);
                            SageAggregator::MaxPool { w_pool, b_pool }
                        }
                        None => SageAggregator::Mean { coef },
                    };
                    let (w, b) = dv(d);
                    let next = layers::sage_layer(g, h, w, b, &agg, &inputs.seg, Activation::Relu)?;
                    h = residual(g, next, h, s.residual)?;
                }
                let h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                let (w, b) = dv(out);
                layers::dense(g, h, w, b)?
            }
            Layers::Gat { rounds, out } => {
                let mut h = x;
                for (d, a_dst, a_src) in rounds {
                    h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                    let (w, b) = dv(d);
                    let p = GatParams {
                        w,
                        a_dst: v(*a_dst),
                        a_src: v(*a_src),
                        b,
                    };
                    let (next, a) = layers::gat_lite_layer(
                        g,
                        h,
                        &p,
                        &inputs.seg_self,
                        s.leaky_slope,
                        s.attention_dropout,
                        rng.as_deref_mut(),
                        Activation::Elu(s.elu_alpha),
                    )?;
                    attention.push(a);
                    h = residual(g, next, h, s.residual)?;
                }
                let h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                let (w, b) = dv(out);
                layers::dense(g, h, w, b)?
            }
            Layers::Mlp { hidden, out } => {
                let mut h = x;
                for d in hidden {
                    h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                    let (w, b) = dv(d);
                    let z = layers::dense(g, h, w, b)?;
                    h = g.relu(z);
                }
                let h = maybe_dropout(g, h, s.dropout, &mut rng)?;
                let (w, b) = dv(out);
                layers::dense(g, h, w, b)?
            }
            Layers::LabelProp => {
                return Err(Error::Validation(
                    "label propagation has no differentiable forward pass".into(),
                ))
            }
        };
        Ok(Forward { logits, attention })
    }

    /// Class scores in evaluation mode.
    pub fn predict_scores(&self, inputs: &GraphInputs<T>) -> Result<Tensor<T>> {
        let mut g = ComputeGraph::new();
        let f = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, inputs, Mode::Eval)?;
        Ok(g.value(f.logits).clone())
    }

    /// Argmax predictions; ties go to the lowest class id.
    pub fn predict(&self, inputs: &GraphInputs<T>) -> Result<Vec<usize>> {
        Ok(self.predict_scores(inputs)?.argmax_rows())
    }
}

fn residual<T: Scalar>(g: &mut ComputeGraph<T>, out: Var, h: Var, enabled: bool) -> Result<Var> {
    if enabled && g.shape(out) == g.shape(h) {
        g.add(out, h)
    } else {
        Ok(out)
    }
}

fn maybe_dropout<T: Scalar, R: Rng>(
    g: &mut ComputeGraph<T>,
    x: Var,
    p: f64,
    rng: &mut Option<&mut R>,
) -> Result<Var> {
    match rng.as_deref_mut() {
        Some(r) => g.dropout(x, p, r),
        None => Ok(x),
    }
}
