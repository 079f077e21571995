use std::sync::Arc;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::segment::SegmentIndex;
use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`ComputeGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    ConcatCols(Var, Var),
    Relu(Var),
    Elu(Var, T),
    LeakyRelu(Var, T),
    Exp(Var),
    Dropout(Var, Vec<T>),
    Mask(Var, Vec<T>),
    RowGather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<SegmentIndex>),
    SegmentSoftmax(Var, Arc<SegmentIndex>),
    SegmentMax(Var, Vec<usize>),
    SegmentNormalize(Var, Arc<SegmentIndex>, Vec<T>),
    WeightedNeighborSum(Var, Var, Arc<SegmentIndex>),
    RowDot(Var, Var),
    SumAll(Var),
    SoftmaxXent(Var, Vec<(usize, usize)>, Vec<T>),
    L2Penalty(Vec<Var>, T),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Clone)]
pub struct ComputeGraph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for ComputeGraph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ComputeGraph<T> {
    pub fn new() -> Self {
        ComputeGraph {
            nodes: Vec::new(),
            params: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a leaf that receives a gradient but is not a registered parameter.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records a parameter from the store and registers it for gradient export.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params.push((id, v));
        v
    }

    /// Records every parameter of the store in order.
    pub fn params_all(&mut self, store: &ParamStore<T>) -> Vec<Var> {
        store.ids().map(|id| self.param(store, id)).collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// `a[n,k] · b[k,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims2(a, "matmul")?;
        let (k2, m) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n},{k}] x [{k2},{m}]")));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::MatMul(a, b), rg))
    }

    /// `x[n,k] · w[m,k]ᵀ`; weights are stored `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, k) = self.dims2(x, "linear")?;
        let (m, k2) = self.dims2(w, "linear")?;
        if k != k2 {
            return Err(Error::shape(
                "linear",
                format!("input [{n},{k}] with weight [{m},{k2}]"),
            ));
        }
        let data = matmul_nt_raw(self.value(x).data(), self.value(w).data(), n, k, m);
        let rg = self.rg(&[x, w]);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Linear(x, w), rg))
    }

    fn zip(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var> {
        self.same_shape(a, b, op)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, rec, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[m]` or `[1,m]` bias to every row of `x[n,m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.dims2(x, "add_bias")?;
        if self.value(b).numel() != m {
            return Err(Error::shape(
                "add_bias",
                format!("[{n},{m}] with bias {:?}", self.shape(b)),
            ));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(m.max(1)) {
            for (o, &bv) in row.iter_mut().zip(&bias) {
                *o = *o + bv;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// `[n,a] ‖ [n,b] → [n,a+b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca) = self.dims2(a, "concat")?;
        let (n2, cb) = self.dims2(b, "concat")?;
        if n != n2 {
            return Err(Error::shape("concat", format!("[{n},{ca}] with [{n2},{cb}]")));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(&va.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&vb.data()[i * cb..(i + 1) * cb]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![n, ca + cb], data)?, Op::ConcatCols(a, b), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn elu(&mut self, x: Var, alpha: T) -> Var {
        self.unary(
            x,
            |v| {
                if v > T::zero() {
                    v
                } else {
                    alpha * (v.exp() - T::one())
                }
            },
            Op::Elu(x, alpha),
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`. `p = 0` returns `x` unchanged.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Validation(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o = *o * m;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout(x, mask), rg))
    }

    /// Multiplies by a fixed elementwise mask.
    pub fn mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::shape(
                "mask",
                format!("{:?} with {} mask values", self.shape(x), mask.len()),
            ));
        }
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o = *o * m;
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Mask(x, mask), rg))
    }

    /// Selects rows `idx` of `x[n,d]`, giving `[idx.len(), d]`.
    pub fn row_gather(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (n, d) = self.dims2(x, "row_gather")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape(
                "row_gather",
                format!("row {bad} out of range for [{n},{d}]"),
            ));
        }
        let v = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            data.extend_from_slice(&v.data()[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[x]);
        let t = Tensor::new(vec![idx.len(), d], data)?;
        Ok(self.push(t, Op::RowGather(x, idx), rg))
    }

    fn check_entries(&self, x: Var, seg: &SegmentIndex, op: &'static str) -> Result<(usize, usize)> {
        let (e, d) = self.dims2(x, op)?;
        if e != seg.num_entries() {
            return Err(Error::shape(
                op,
                format!("[{e},{d}] against {} segment entries", seg.num_entries()),
            ));
        }
        Ok((e, d))
    }

    /// Sums entry rows `[E,d]` into their target segments, giving `[n,d]`.
    pub fn segment_sum(&mut self, x: Var, seg: &Arc<SegmentIndex>) -> Result<Var> {
        let (_, d) = self.check_entries(x, seg, "segment_sum")?;
        let n = seg.num_segments();
        let v = self.value(x).data();
        let mut out = vec![T::zero(); n * d];
        for i in 0..n {
            for e in seg.segment(i) {
                for c in 0..d {
                    out[i * d + c] = out[i * d + c] + v[e * d + c];
                }
            }
        }
        let rg = self.rg(&[x]);
        let t = Tensor::new(vec![n, d], out)?;
        Ok(self.push(t, Op::SegmentSum(x, seg.clone()), rg))
    }

    /// Column-wise softmax of `[E,c]` logits within each segment.
    pub fn segment_softmax(&mut self, x: Var, seg: &Arc<SegmentIndex>) -> Result<Var> {
        let (e, d) = self.check_entries(x, seg, "segment_softmax")?;
        let v = self.value(x).data();
        let mut out = vec![T::zero(); e * d];
        for i in 0..seg.num_segments() {
            let r = seg.segment(i);
            if r.is_empty() {
                continue;
            }
            for c in 0..d {
                let mut mx = T::neg_infinity();
                for k in r.clone() {
                    mx = mx.max(v[k * d + c]);
                }
                let mut z = T::zero();
                for k in r.clone() {
                    let ex = (v[k * d + c] - mx).exp();
                    out[k * d + c] = ex;
                    z = z + ex;
                }
                for k in r.clone() {
                    out[k * d + c] = out[k * d + c] / z;
                }
            }
        }
        let rg = self.rg(&[x]);
        let t = Tensor::new(vec![e, d], out)?;
        Ok(self.push(t, Op::SegmentSoftmax(x, seg.clone()), rg))
    }

    /// Elementwise max of entry rows per segment; empty segments give zeros.
    pub fn segment_max(&mut self, x: Var, seg: &Arc<SegmentIndex>) -> Result<Var> {
        let (_, d) = self.check_entries(x, seg, "segment_max")?;
        let n = seg.num_segments();
        let v = self.value(x).data();
        let mut out = vec![T::zero(); n * d];
        let mut arg = vec![usize::MAX; n * d];
        for i in 0..n {
            for e in seg.segment(i) {
                for c in 0..d {
                    let slot = i * d + c;
                    if arg[slot] == usize::MAX || v[e * d + c] > out[slot] {
                        out[slot] = v[e * d + c];
                        arg[slot] = e;
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        let t = Tensor::new(vec![n, d], out)?;
        Ok(self.push(t, Op::SegmentMax(x, arg), rg))
    }

    /// Divides `[E,1]` entries by their segment sum; zero-sum segments stay zero.
    pub fn segment_normalize(&mut self, x: Var, seg: &Arc<SegmentIndex>) -> Result<Var> {
        let (e, d) = self.check_entries(x, seg, "segment_normalize")?;
        if d != 1 {
            return Err(Error::shape(
                "segment_normalize",
                format!("expected [E,1], got [{e},{d}]"),
            ));
        }
        let v = self.value(x).data();
        let mut out = vec![T::zero(); e];
        let mut sums = vec![T::zero(); seg.num_segments()];
        for (i, s) in sums.iter_mut().enumerate() {
            *s = seg.segment(i).map(|k| v[k]).sum();
            if *s != T::zero() {
                for k in seg.segment(i) {
                    out[k] = v[k] / *s;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::column(out),
            Op::SegmentNormalize(x, seg.clone(), sums),
            rg,
        ))
    }

    /// `out_i = Σ_{e ∈ seg(i)} coef_e · h_{src(e)}` for `coef[E,1]`, `h[n,d]`.
    pub fn weighted_neighbor_sum(&mut self, coef: Var, h: Var, seg: &Arc<SegmentIndex>) -> Result<Var> {
        let (_, cc) = self.check_entries(coef, seg, "weighted_neighbor_sum")?;
        if cc != 1 {
            return Err(Error::shape(
                "weighted_neighbor_sum",
                format!("coefficients must be [E,1], got {:?}", self.shape(coef)),
            ));
        }
        let (n, d) = self.dims2(h, "weighted_neighbor_sum")?;
        let out_n = seg.num_segments();
        if seg.sources().iter().any(|&s| s >= n) {
            return Err(Error::shape(
                "weighted_neighbor_sum",
                format!("segment sources exceed {n} rows of h"),
            ));
        }
        let a = self.value(coef).data();
        let hv = self.value(h).data();
        let src = seg.sources();
        let mut out = vec![T::zero(); out_n * d];
        for i in 0..out_n {
            let orow = &mut out[i * d..(i + 1) * d];
            for e in seg.segment(i) {
                let w = a[e];
                if w == T::zero() {
                    continue;
                }
                let hrow = &hv[src[e] * d..(src[e] + 1) * d];
                for (o, &x) in orow.iter_mut().zip(hrow) {
                    *o = *o + w * x;
                }
            }
        }
        let rg = self.rg(&[coef, h]);
        let t = Tensor::new(vec![out_n, d], out)?;
        Ok(self.push(t, Op::WeightedNeighborSum(coef, h, seg.clone()), rg))
    }

    /// Row-wise dot product of two `[n,d]` matrices, giving `[n,1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "row_dot")?;
        let (n, d) = self.dims2(a, "row_dot")?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = (0..n)
            .map(|i| {
                let mut acc = T::zero();
                for c in 0..d {
                    acc = acc + va[i * d + c] * vb[i * d + c];
                }
                acc
            })
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::column(out), Op::RowDot(a, b), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Mean softmax cross-entropy over `targets = [(row, class)]`.
    ///
    /// Rows not listed contribute neither loss nor gradient.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Result<Var> {
        let (n, c) = self.dims2(logits, "softmax_cross_entropy")?;
        if targets.is_empty() {
            return Err(Error::Validation(
                "cross-entropy needs at least one target".into(),
            ));
        }
        if let Some(&(r, k)) = targets.iter().find(|&&(r, k)| r >= n || k >= c) {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("target ({r}, {k}) outside logits [{n},{c}]"),
            ));
        }
        let v = self.value(logits).data();
        let mut probs = vec![T::zero(); targets.len() * c];
        let mut loss = T::zero();
        for (t, &(r, k)) in targets.iter().enumerate() {
            let row = &v[r * c..(r + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - mx).exp()).sum();
            let lz = z.ln() + mx;
            for j in 0..c {
                probs[t * c + j] = (row[j] - lz).exp();
            }
            loss = loss + (lz - row[k]);
        }
        loss = loss / T::from_count(targets.len());
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent(logits, targets.to_vec(), probs),
            rg,
        ))
    }

    /// `weight · ½ Σ w²` over the given variables.
    pub fn l2_penalty(&mut self, vars: &[Var], weight: T) -> Var {
        let half = T::lit(0.5);
        let mut s = T::zero();
        for v in vars {
            for &x in self.value(*v).data() {
                s = s + x * x;
            }
        }
        let rg = self.rg(vars);
        self.push(
            Tensor::scalar(weight * half * s),
            Op::L2Penalty(vars.to_vec(), weight),
            rg,
        )
    }

    /// Reverse sweep from a scalar loss. Call [`reset_grads`](Self::reset_grads)
    /// before a second backward on the same tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff(
                "backward already ran on this graph; reset gradients first".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Gradient of the last backward with respect to `v`, if it reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every registered parameter; zeros where unreached.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
            .iter()
            .map(|&(id, v)| {
                let g = self
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v)));
                (id, g)
            })
            .collect()
    }

    fn acc(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_data(&mut self, v: Var, data: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let shape = self.shape(v).to_vec();
        // Shapes are fixed by the forward pass, so this cannot fail.
        let t = Tensor::new(shape, data).expect("gradient shape");
        self.acc(v, t);
    }

    fn propagate(&mut self, idx: usize, g: &Tensor<T>) {
        let op = self.nodes[idx].op.clone();
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.value(a).dims2("matmul").unwrap();
                let m = self.value(b).cols();
                if self.nodes[a.0].requires_grad {
                    let ga = matmul_nt_raw(gd, self.value(b).data(), n, m, k);
                    self.acc_data(a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = matmul_tn_raw(self.value(a).data(), gd, n, k, m);
                    self.acc_data(b, gb);
                }
            }
            Op::Linear(x, w) => {
                let (n, k) = self.value(x).dims2("linear").unwrap();
                let m = self.value(w).rows();
                if self.nodes[x.0].requires_grad {
                    let gx = matmul_raw(gd, self.value(w).data(), n, m, k);
                    self.acc_data(x, gx);
                }
                if self.nodes[w.0].requires_grad {
                    let gw = matmul_tn_raw(gd, self.value(x).data(), n, m, k);
                    self.acc_data(w, gw);
                }
            }
            Op::Add(a, b) => {
                self.acc(a, g.clone());
                self.acc(b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(a, g.clone());
                self.acc(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = gd
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(&x, &y)| x * y)
                    .collect();
                let gb = gd
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&x, &y)| x * y)
                    .collect();
                self.acc_data(a, ga);
                self.acc_data(b, gb);
            }
            Op::AddBias(x, b) => {
                self.acc(x, g.clone());
                let m = self.value(b).numel();
                let mut gb = vec![T::zero(); m];
                for row in gd.chunks(m.max(1)) {
                    for (o, &v) in gb.iter_mut().zip(row) {
                        *o = *o + v;
                    }
                }
                self.acc_data(b, gb);
            }
            Op::Scale(x, c) => self.acc(x, g.map(|v| v * c)),
            Op::ConcatCols(a, b) => {
                let (n, ca) = self.value(a).dims2("concat").unwrap();
                let cb = self.value(b).cols();
                let w = ca + cb;
                let mut ga = Vec::with_capacity(n * ca);
                let mut gb = Vec::with_capacity(n * cb);
                for i in 0..n {
                    ga.extend_from_slice(&gd[i * w..i * w + ca]);
                    gb.extend_from_slice(&gd[i * w + ca..(i + 1) * w]);
                }
                self.acc_data(a, ga);
                self.acc_data(b, gb);
            }
            Op::Relu(x) => {
                let gx = self.local(x, gd, |v, _| if v > T::zero() { T::one() } else { T::zero() });
                self.acc_data(x, gx);
            }
            Op::Elu(x, alpha) => {
                let gx = self.local(
                    x,
                    gd,
                    |v, _| if v > T::zero() { T::one() } else { alpha * v.exp() },
                );
                self.acc_data(x, gx);
            }
            Op::LeakyRelu(x, s) => {
                let gx = self.local(x, gd, |v, _| if v > T::zero() { T::one() } else { s });
                self.acc_data(x, gx);
            }
            Op::Exp(x) => {
                let out = self.nodes[idx].value.data().to_vec();
                let gx = gd.iter().zip(&out).map(|(&a, &b)| a * b).collect();
                self.acc_data(x, gx);
            }
            Op::Dropout(x, mask) | Op::Mask(x, mask) => {
                let gx = gd.iter().zip(&mask).map(|(&a, &b)| a * b).collect();
                self.acc_data(x, gx);
            }
            Op::RowGather(x, ids) => {
                let d = self.value(x).cols();
                let mut gx = vec![T::zero(); self.value(x).numel()];
                for (r, &i) in ids.iter().enumerate() {
                    for c in 0..d {
                        gx[i * d + c] = gx[i * d + c] + gd[r * d + c];
                    }
                }
                self.acc_data(x, gx);
            }
            Op::SegmentSum(x, seg) => {
                let d = self.value(x).cols();
                let tgt = seg.targets();
                let mut gx = Vec::with_capacity(self.value(x).numel());
                for &t in tgt.iter() {
                    gx.extend_from_slice(&gd[t * d..(t + 1) * d]);
                }
                self.acc_data(x, gx);
            }
            Op::SegmentSoftmax(x, seg) => {
                let d = self.value(x).cols();
                let y = self.nodes[idx].value.data();
                let mut gx = vec![T::zero(); y.len()];
                for i in 0..seg.num_segments() {
                    let r = seg.segment(i);
                    for c in 0..d {
                        let mut dot = T::zero();
                        for k in r.clone() {
                            dot = dot + y[k * d + c] * gd[k * d + c];
                        }
                        for k in r.clone() {
                            gx[k * d + c] = y[k * d + c] * (gd[k * d + c] - dot);
                        }
                    }
                }
                self.acc_data(x, gx);
            }
            Op::SegmentMax(x, arg) => {
                let d = self.value(x).cols();
                let mut gx = vec![T::zero(); self.value(x).numel()];
                for (slot, &e) in arg.iter().enumerate() {
                    if e != usize::MAX {
                        let c = slot % d;
                        gx[e * d + c] = gx[e * d + c] + gd[slot];
                    }
                }
                self.acc_data(x, gx);
            }
            Op::SegmentNormalize(x, seg, sums) => {
                let y = self.nodes[idx].value.data();
                let mut gx = vec![T::zero(); y.len()];
                for (i, &s) in sums.iter().enumerate() {
                    if s == T::zero() {
                        continue;
                    }
                    let r = seg.segment(i);
                    let dot: T = r.clone().map(|k| gd[k] * y[k]).sum();
                    for k in r {
                        gx[k] = (gd[k] - dot) / s;
                    }
                }
                self.acc_data(x, gx);
            }
            Op::WeightedNeighborSum(coef, h, seg) => {
                let d = self.value(h).cols();
                let src = seg.sources().clone();
                let tgt = seg.targets().clone();
                if self.nodes[coef.0].requires_grad {
                    let hv = self.value(h).data();
                    let gc: Vec<T> = (0..src.len())
                        .map(|e| {
                            let (s, t) = (src[e], tgt[e]);
                            let mut acc = T::zero();
                            for c in 0..d {
                                acc = acc + gd[t * d + c] * hv[s * d + c];
                            }
                            acc
                        })
                        .collect();
                    self.acc_data(coef, gc);
                }
                if self.nodes[h.0].requires_grad {
                    let a = self.value(coef).data();
                    let mut gh = vec![T::zero(); self.value(h).numel()];
                    for e in 0..src.len() {
                        let (s, t, w) = (src[e], tgt[e], a[e]);
                        if w == T::zero() {
                            continue;
                        }
                        for c in 0..d {
                            gh[s * d + c] = gh[s * d + c] + w * gd[t * d + c];
                        }
                    }
                    self.acc_data(h, gh);
                }
            }
            Op::RowDot(a, b) => {
                let d = self.value(a).cols();
                let scale_rows = |other: &[T]| -> Vec<T> {
                    other.iter().enumerate().map(|(k, &v)| v * gd[k / d]).collect()
                };
                let ga = scale_rows(self.value(b).data());
                let gb = scale_rows(self.value(a).data());
                self.acc_data(a, ga);
                self.acc_data(b, gb);
            }
            Op::SumAll(x) => {
                let s = g.item();
                let gx = Tensor::full(self.shape(x), s);
                self.acc(x, gx);
            }
            Op::SoftmaxXent(x, targets, probs) => {
                let c = self.value(x).cols();
                let scale = g.item() / T::from_count(targets.len());
                let mut gx = vec![T::zero(); self.value(x).numel()];
                for (t, &(r, k)) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == k { T::one() } else { T::zero() };
                        gx[r * c + j] = gx[r * c + j] + scale * (probs[t * c + j] - onehot);
                    }
                }
                self.acc_data(x, gx);
            }
            Op::L2Penalty(vars, w) => {
                let s = g.item() * w;
                for v in vars {
                    let gv = self.value(v).map(|x| x * s);
                    self.acc(v, gv);
                }
            }
        }
    }

    fn local(&self, x: Var, gd: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
        self.value(x)
            .data()
            .iter()
            .zip(gd)
            .map(|(&v, &g)| g * f(v, g))
            .collect()
    }
}
