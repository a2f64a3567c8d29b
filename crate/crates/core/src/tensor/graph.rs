use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of a fused multi-head attention call: `batch` sequences of
/// `seq` rows each, `heads` heads splitting the model width.
#[derive(Clone, Debug)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    /// Row-major `seq × seq`; `visible[i * seq + j]` lets row i attend j.
    pub visible: Vec<bool>,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Vec<f64> },
    Gelu { x: Var, tanh: Vec<f64> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    GatherRows { table: Var, ids: Vec<usize> },
    ConcatRows { a: Var, b: Var },
    Pick { x: Var, flat: Vec<usize> },
    RowSquaredL2 { a: Var, b: Var },
    RowCosine { a: Var, b: Var, eps: f64 },
    Attention { q: Var, k: Var, v: Var, shape: AttentionShape, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Tape of executed operations. Nodes are appended in execution order, so
/// the node vector is already a topological order; `backward` walks it in
/// reverse once.
///
/// A graph is single-threaded. Build one per step and drop it afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    corrupt_backward: Option<f64>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Negative-control hook: scales the gradient flowing into the left
    /// operand of every matmul by `factor` during backward.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, factor: f64) {
        self.corrupt_backward = Some(factor);
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str, inputs: &[Var]) -> Result<Var> {
        if value.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Index(format!("node {} not in graph", v.0)));
        }
        Ok(())
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        self.check_var(v)?;
        match self.value(v).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Dimension(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, k) = self.matrix_dims(a, "matmul")?;
        let (k2, c) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul inner extents {k} vs {k2}")));
        }
        let mut out = vec![0.0; r * c];
        gemm(r, k, c, &self.value(a).data, false, &self.value(b).data, false, &mut out, false);
        self.push(Tensor::from_parts(vec![r, c], out), Op::MatMul { a, b }, "matmul", &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!("add shapes {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_parts(shape, data), Op::Add { a, b }, "add", &[a, b])
    }

    /// Adds a length-`c` vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(bias)?;
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.last_dim();
        if tb.numel() != c {
            return Err(Error::Dimension(format!("bias of {} for width {c}", tb.numel())));
        }
        let mut data = tx.data.clone();
        for row in data.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(&tb.data) {
                *v += b;
            }
        }
        let shape = tx.shape.clone();
        self.push(Tensor::from_parts(shape, data), Op::AddBias { x, bias }, "add_bias", &[x, bias])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check_var(x)?;
        let t = self.value(x);
        let data = t.data.iter().map(|v| v * factor).collect();
        let shape = t.shape.clone();
        self.push(Tensor::from_parts(shape, data), Op::Scale { x, factor }, "scale", &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, "sum", &[x])
    }

    /// `Σ_i weights[i] · x[i]` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        self.check_var(x)?;
        let t = self.value(x);
        if weights.len() != t.numel() {
            return Err(Error::Dimension(format!("{} weights for {} values", weights.len(), t.numel())));
        }
        let s = t.data.iter().zip(&weights).map(|(v, w)| v * w).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, "weighted_sum", &[x])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let t = self.value(x);
        let tanh: Vec<f64> = t.data.iter().map(|&v| (GELU_C * (v + GELU_A * v * v * v)).tanh()).collect();
        let data = t.data.iter().zip(&tanh).map(|(&v, &th)| 0.5 * v * (1.0 + th)).collect();
        let shape = t.shape.clone();
        self.push(Tensor::from_parts(shape, data), Op::Gelu { x, tanh }, "gelu", &[x])
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gain` and `bias` (both of the row width).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        for v in [x, gain, bias] {
            self.check_var(v)?;
        }
        let tx = self.value(x);
        let c = tx.last_dim();
        let (g, b) = (&self.value(gain).data, &self.value(bias).data);
        if g.len() != c || b.len() != c {
            return Err(Error::Dimension(format!("layer_norm gain/bias {}/{} for width {c}", g.len(), b.len())));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let shape = tx.shape.clone();
        self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
            "layer_norm",
            &[x, gain, bias],
        )
    }

    /// Row-wise softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let t = self.value(x);
        let c = t.last_dim();
        let mut out = t.data.clone();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let shape = t.shape.clone();
        self.push(Tensor::from_parts(shape, out), Op::Softmax { x }, "softmax", &[x])
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_var(x)?;
        let t = self.value(x);
        let c = t.last_dim();
        let mut out = t.data.clone();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = t.shape.clone();
        self.push(Tensor::from_parts(shape, out), Op::LogSoftmax { x }, "log_softmax", &[x])
    }

    /// Copies rows `ids` of `table` (viewed as `[rows, last_dim]`) into a
    /// `[ids.len(), last_dim]` matrix. Embedding lookup is this op.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check_var(table)?;
        let t = self.value(table);
        let (rows, c) = (t.rows(), t.last_dim());
        if ids.is_empty() {
            return Err(Error::Dimension("gather_rows with no ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index(format!("row {id} out of range for {rows} rows")));
            }
            out.extend_from_slice(&t.data[id * c..(id + 1) * c]);
        }
        self.push(
            Tensor::from_parts(vec![ids.len(), c], out),
            Op::GatherRows { table, ids: ids.to_vec() },
            "gather_rows",
            &[table],
        )
    }

    /// Stacks `a` on top of `b`; both must have the same row width.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let c = ta.last_dim();
        if tb.last_dim() != c {
            return Err(Error::Dimension(format!("concat widths {c} vs {}", tb.last_dim())));
        }
        let mut data = ta.data.clone();
        data.extend_from_slice(&tb.data);
        let rows = ta.rows() + tb.rows();
        self.push(Tensor::from_parts(vec![rows, c], data), Op::ConcatRows { a, b }, "concat_rows", &[a, b])
    }

    /// Selects individual elements by flat index into a `[flat.len()]` vector.
    pub fn pick(&mut self, x: Var, flat: Vec<usize>) -> Result<Var> {
        self.check_var(x)?;
        let t = self.value(x);
        if flat.is_empty() {
            return Err(Error::Dimension("pick with no indices".into()));
        }
        let mut out = Vec::with_capacity(flat.len());
        for &i in &flat {
            let v = t.data.get(i).ok_or_else(|| Error::Index(format!("flat index {i} out of range {}", t.numel())))?;
            out.push(*v);
        }
        let n = out.len();
        self.push(Tensor::from_parts(vec![n], out), Op::Pick { x, flat }, "pick", &[x])
    }

    /// Squared Euclidean distance between two equal-shape vectors, as a scalar.
    pub fn squared_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.row_squared_l2_inner(a, b, true)?;
        Ok(d)
    }

    /// Row-wise squared distances between two `[N, d]` matrices, `[N]`.
    pub fn row_squared_l2(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_squared_l2_inner(a, b, false)
    }

    fn row_squared_l2_inner(&mut self, a: Var, b: Var, whole: bool) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!("squared_l2 shapes {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let c = if whole { ta.numel() } else { ta.last_dim() };
        let out: Vec<f64> = ta
            .data
            .chunks(c)
            .zip(tb.data.chunks(c))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum())
            .collect();
        let shape = if whole { Vec::new() } else { vec![out.len()] };
        self.push(Tensor::from_parts(shape, out), Op::RowSquaredL2 { a, b }, "squared_l2", &[a, b])
    }

    /// `⟨a,b⟩ / (max(‖a‖,eps)·max(‖b‖,eps))` for two equal-shape vectors.
    pub fn cosine_sim(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.cosine_inner(a, b, eps, true)
    }

    /// Row-wise cosine similarity between two `[N, d]` matrices, `[N]`.
    pub fn row_cosine(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.cosine_inner(a, b, eps, false)
    }

    fn cosine_inner(&mut self, a: Var, b: Var, eps: f64, whole: bool) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("cosine eps must be > 0, got {eps}")));
        }
        self.check_var(a)?;
        self.check_var(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension(format!("cosine shapes {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let c = if whole { ta.numel() } else { ta.last_dim() };
        let out: Vec<f64> = ta.data.chunks(c).zip(tb.data.chunks(c)).map(|(x, y)| cosine_parts(x, y, eps).0).collect();
        let shape = if whole { Vec::new() } else { vec![out.len()] };
        self.push(Tensor::from_parts(shape, out), Op::RowCosine { a, b, eps }, "cosine_sim", &[a, b])
    }

    /// Fused scaled dot-product attention over `[batch·seq, width]` inputs.
    /// Head `h` uses columns `h·dh .. (h+1)·dh`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Result<Var> {
        let (rows, width) = self.matrix_dims(q, "attention")?;
        for other in [k, v] {
            if self.matrix_dims(other, "attention")? != (rows, width) {
                return Err(Error::Dimension("attention q/k/v shapes differ".into()));
            }
        }
        let AttentionShape { batch, seq, heads, ref visible } = shape;
        if heads == 0 || width % heads != 0 || batch * seq != rows || visible.len() != seq * seq {
            return Err(Error::Dimension(format!(
                "attention layout batch={batch} seq={seq} heads={heads} for {rows}x{width}"
            )));
        }
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (&self.value(q).data, &self.value(k).data, &self.value(v).data);
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * width];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * width + h * dh..][..dh];
                    let prow = &mut p[i * seq..(i + 1) * seq];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..seq {
                        if visible[i * seq + j] {
                            let kj = &kd[(b * seq + j) * width + h * dh..][..dh];
                            let s = scale * dot(qi, kj);
                            prow[j] = s;
                            max = max.max(s);
                        }
                    }
                    let mut z = 0.0;
                    for j in 0..seq {
                        if visible[i * seq + j] {
                            let e = (prow[j] - max).exp();
                            prow[j] = e;
                            z += e;
                        } else {
                            prow[j] = 0.0;
                        }
                    }
                    let orow = &mut out[(b * seq + i) * width + h * dh..][..dh];
                    for j in 0..seq {
                        if prow[j] != 0.0 {
                            prow[j] /= z;
                            let vj = &vd[(b * seq + j) * width + h * dh..][..dh];
                            for (o, x) in orow.iter_mut().zip(vj) {
                                *o += prow[j] * x;
                            }
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![rows, width], out),
            Op::Attention { q, k, v, shape, probs },
            "attention",
            &[q, k, v],
        )
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_var(loss)?;
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let corrupt = self.corrupt_backward;

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let slot = &mut self.nodes[i].grad;
                match slot {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                    None => *slot = Some(g),
                }
                continue;
            }
            let nodes = &self.nodes;
            let node = &nodes[i];
            let needs = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul { a, b } => {
                    let (r, k) = dims2(&nodes[a.0].value);
                    let c = nodes[b.0].value.shape[1];
                    if needs(*a) {
                        let ga = accum(&mut adj, *a, r * k);
                        if let Some(f) = corrupt {
                            let mut tmp = vec![0.0; r * k];
                            gemm(r, c, k, &g, false, &nodes[b.0].value.data, true, &mut tmp, false);
                            ga.iter_mut().zip(&tmp).for_each(|(x, t)| *x += f * t);
                        } else {
                            gemm(r, c, k, &g, false, &nodes[b.0].value.data, true, ga, true);
                        }
                    }
                    if needs(*b) {
                        let gb = accum(&mut adj, *b, k * c);
                        gemm(k, r, c, &nodes[a.0].value.data, true, &g, false, gb, true);
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if needs(v) {
                            add_into(accum(&mut adj, v, g.len()), &g);
                        }
                    }
                }
                Op::AddBias { x, bias } => {
                    if needs(*x) {
                        add_into(accum(&mut adj, *x, g.len()), &g);
                    }
                    if needs(*bias) {
                        let c = nodes[bias.0].value.numel();
                        let gb = accum(&mut adj, *bias, c);
                        for row in g.chunks(c) {
                            add_into(gb, row);
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    let gx = accum(&mut adj, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(a, d)| *a += factor * d);
                }
                Op::Sum { x } => {
                    let n = nodes[x.0].value.numel();
                    accum(&mut adj, *x, n).iter_mut().for_each(|a| *a += g[0]);
                }
                Op::WeightedSum { x, weights } => {
                    let gx = accum(&mut adj, *x, weights.len());
                    gx.iter_mut().zip(weights).for_each(|(a, w)| *a += w * g[0]);
                }
                Op::Gelu { x, tanh } => {
                    let xd = &nodes[x.0].value.data;
                    let gx = accum(&mut adj, *x, xd.len());
                    for (((a, &v), d), &t) in gx.iter_mut().zip(xd).zip(&g).zip(tanh) {
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *a += d * (0.5 * (1.0 + t) + 0.5 * v * dt);
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let c = nodes[gain.0].value.numel();
                    let gv = &nodes[gain.0].value.data;
                    if needs(*gain) {
                        let gg = accum(&mut adj, *gain, c);
                        for (dy, xh) in g.chunks(c).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                gg[j] += dy[j] * xh[j];
                            }
                        }
                    }
                    if needs(*bias) {
                        let gb = accum(&mut adj, *bias, c);
                        for dy in g.chunks(c) {
                            add_into(gb, dy);
                        }
                    }
                    if needs(*x) {
                        let gx = accum(&mut adj, *x, g.len());
                        let mut dxh = vec![0.0; c];
                        for (r, (dy, xh)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                            for j in 0..c {
                                dxh[j] = dy[j] * gv[j];
                            }
                            let m1 = dxh.iter().sum::<f64>() / c as f64;
                            let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                            let out = &mut gx[r * c..(r + 1) * c];
                            for j in 0..c {
                                out[j] += inv_std[r] * (dxh[j] - m1 - xh[j] * m2);
                            }
                        }
                    }
                }
                Op::Softmax { x } => {
                    let y = &node.value;
                    let c = y.last_dim();
                    let gx = accum(&mut adj, *x, g.len());
                    for (r, (dy, yr)) in g.chunks(c).zip(y.data.chunks(c)).enumerate() {
                        let s: f64 = dy.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] += yr[j] * (dy[j] - s);
                        }
                    }
                }
                Op::LogSoftmax { x } => {
                    let y = &node.value;
                    let c = y.last_dim();
                    let gx = accum(&mut adj, *x, g.len());
                    for (r, (dy, yr)) in g.chunks(c).zip(y.data.chunks(c)).enumerate() {
                        let s: f64 = dy.iter().sum();
                        for j in 0..c {
                            gx[r * c + j] += dy[j] - yr[j].exp() * s;
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    let t = &nodes[table.0].value;
                    let c = t.last_dim();
                    let gt = accum(&mut adj, *table, t.numel());
                    for (dy, &id) in g.chunks(c).zip(ids) {
                        add_into(&mut gt[id * c..(id + 1) * c], dy);
                    }
                }
                Op::ConcatRows { a, b } => {
                    let na = nodes[a.0].value.numel();
                    if needs(*a) {
                        add_into(accum(&mut adj, *a, na), &g[..na]);
                    }
                    if needs(*b) {
                        add_into(accum(&mut adj, *b, g.len() - na), &g[na..]);
                    }
                }
                Op::Pick { x, flat } => {
                    let gx = accum(&mut adj, *x, nodes[x.0].value.numel());
                    for (&i, d) in flat.iter().zip(&g) {
                        gx[i] += d;
                    }
                }
                Op::RowSquaredL2 { a, b } => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let c = ta.numel() / g.len();
                    let mut diff = vec![0.0; ta.numel()];
                    for (r, d) in g.iter().enumerate() {
                        for j in r * c..(r + 1) * c {
                            diff[j] = 2.0 * d * (ta.data[j] - tb.data[j]);
                        }
                    }
                    if needs(*a) {
                        add_into(accum(&mut adj, *a, diff.len()), &diff);
                    }
                    if needs(*b) {
                        let gb = accum(&mut adj, *b, diff.len());
                        gb.iter_mut().zip(&diff).for_each(|(x, d)| *x -= d);
                    }
                }
                Op::RowCosine { a, b, eps } => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let c = ta.numel() / g.len();
                    let mut ga = vec![0.0; ta.numel()];
                    let mut gb = vec![0.0; ta.numel()];
                    for (r, d) in g.iter().enumerate() {
                        let (x, y) = (&ta.data[r * c..(r + 1) * c], &tb.data[r * c..(r + 1) * c]);
                        let (cos, na, nb, na_free, nb_free) = cosine_parts(x, y, *eps);
                        let denom = na * nb;
                        for j in 0..c {
                            let mut da = y[j] / denom;
                            if na_free {
                                da -= cos * x[j] / (na * na);
                            }
                            let mut db = x[j] / denom;
                            if nb_free {
                                db -= cos * y[j] / (nb * nb);
                            }
                            ga[r * c + j] = d * da;
                            gb[r * c + j] = d * db;
                        }
                    }
                    if needs(*a) {
                        add_into(accum(&mut adj, *a, ga.len()), &ga);
                    }
                    if needs(*b) {
                        add_into(accum(&mut adj, *b, gb.len()), &gb);
                    }
                }
                Op::Attention { q, k, v, shape, probs } => {
                    let grads = attention_backward(
                        &g,
                        &nodes[q.0].value.data,
                        &nodes[k.0].value.data,
                        &nodes[v.0].value.data,
                        shape,
                        probs,
                    );
                    for (var, gr) in [(*q, grads.0), (*k, grads.1), (*v, grads.2)] {
                        if needs(var) {
                            add_into(accum(&mut adj, var, gr.len()), &gr);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.shape[0], t.shape[1])
}

fn accum(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Returns (cosine, clamped ‖a‖, clamped ‖b‖, ‖a‖ > eps, ‖b‖ > eps).
fn cosine_parts(a: &[f64], b: &[f64], eps: f64) -> (f64, f64, f64, bool, bool) {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    let (ca, cb) = (na.max(eps), nb.max(eps));
    (dot(a, b) / (ca * cb), ca, cb, na > eps, nb > eps)
}

/// `c (+)= op(a) · op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
/// A transposed operand is stored row-major in its transposed shape.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if acc { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly m·k, k·n and m·n elements and the
    // strides describe row-major layouts within them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn attention_backward(
    g: &[f64],
    qd: &[f64],
    kd: &[f64],
    vd: &[f64],
    shape: &AttentionShape,
    probs: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let AttentionShape { batch, seq, heads, .. } = *shape;
    let width = qd.len() / (batch * seq);
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = vec![0.0; qd.len()];
    let mut gk = vec![0.0; kd.len()];
    let mut gv = vec![0.0; vd.len()];
    let mut dp = vec![0.0; seq];
    for b in 0..batch {
        for h in 0..heads {
            let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            let at = |i: usize| (b * seq + i) * width + h * dh;
            for i in 0..seq {
                let prow = &p[i * seq..(i + 1) * seq];
                let gout = &g[at(i)..at(i) + dh];
                let mut s = 0.0;
                for j in 0..seq {
                    if prow[j] != 0.0 {
                        dp[j] = dot(gout, &vd[at(j)..at(j) + dh]);
                        s += prow[j] * dp[j];
                        let gvj = &mut gv[at(j)..at(j) + dh];
                        for (x, o) in gvj.iter_mut().zip(gout) {
                            *x += prow[j] * o;
                        }
                    }
                }
                for j in 0..seq {
                    if prow[j] != 0.0 {
                        let ds = scale * prow[j] * (dp[j] - s);
                        for c in 0..dh {
                            gq[at(i) + c] += ds * kd[at(j) + c];
                            gk[at(j) + c] += ds * qd[at(i) + c];
                        }
                    }
                }
            }
        }
    }
    (gq, gk, gv)
}
