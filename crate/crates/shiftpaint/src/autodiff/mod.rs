//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation records a node in an implicit tape. [`grad`] walks the
//! tape backwards and emits the gradient *as new tape nodes*, so gradients
//! are themselves differentiable — second-order terms such as the critic's
//! gradient penalty are exact, not approximated.
//!
//! Clip-shaped values are `[T, C, H, W]`; matrices are `[rows, cols]`;
//! scalars are `[1]`.

mod conv;

pub use conv::{conv2d, conv2d_input_grad, conv2d_weight_grad, conv_out_size, ConvMeta};

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// How a node was produced; holds op metadata only, never child references.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Recip,
    Exp,
    Ln,
    Sqrt,
    Abs,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    SumAll,
    BroadcastFill { shape: Vec<usize> },
    Matmul,
    Transpose2,
    Reshape { orig: Vec<usize> },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    PadZero { axis: usize, before: usize, after: usize },
    RowSum,
    BroadcastCols { cols: usize },
    ChannelSum,
    BroadcastChannel { shape: Vec<usize> },
    TimeShift { offset: i64 },
    Upsample2x,
    DownsampleSum2x,
    Conv2d { meta: ConvMeta },
    ConvInputGrad { meta: ConvMeta, in_hw: (usize, usize) },
    ConvWeightGrad { meta: ConvMeta, kernel: usize },
}

pub(crate) struct Node {
    id: u64,
    value: Tensor,
    parents: Vec<Var>,
    op: Option<Op>,
    needs_grad: bool,
}

impl Drop for Node {
    // Iterative teardown: long graphs must not recurse on drop.
    fn drop(&mut self) {
        let mut stack: Vec<Var> = std::mem::take(&mut self.parents);
        while let Some(var) = stack.pop() {
            if let Ok(mut node) = Rc::try_unwrap(var.0) {
                stack.append(&mut node.parents);
            }
        }
    }
}

/// A value in the autodiff graph. Cheap to clone.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("needs_grad", &self.0.needs_grad)
            .finish()
    }
}

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

impl Var {
    /// A value that never receives gradients.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node { id: fresh_id(), value, parents: vec![], op: None, needs_grad: false }))
    }

    /// A differentiable input (parameter or probed tensor).
    pub fn leaf(value: Tensor) -> Var {
        Var(Rc::new(Node { id: fresh_id(), value, parents: vec![], op: None, needs_grad: true }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(Tensor::scalar(v))
    }

    fn from_op(op: Op, parents: Vec<Var>, value: Tensor) -> Var {
        let needs_grad = parents.iter().any(|p| p.0.needs_grad);
        if needs_grad {
            Var(Rc::new(Node { id: fresh_id(), value, parents, op: Some(op), needs_grad }))
        } else {
            // Constant subgraphs keep no history.
            Var::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn item(&self) -> f64 {
        self.0.value.item()
    }

    pub fn needs_grad(&self) -> bool {
        self.0.needs_grad
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    // ---- elementwise ----

    pub fn add(&self, rhs: &Var) -> Var {
        let v = self.value().zip_map(rhs.value(), |a, b| a + b);
        Var::from_op(Op::Add, vec![self.clone(), rhs.clone()], v)
    }

    pub fn sub(&self, rhs: &Var) -> Var {
        let v = self.value().zip_map(rhs.value(), |a, b| a - b);
        Var::from_op(Op::Sub, vec![self.clone(), rhs.clone()], v)
    }

    pub fn mul(&self, rhs: &Var) -> Var {
        let v = self.value().zip_map(rhs.value(), |a, b| a * b);
        Var::from_op(Op::Mul, vec![self.clone(), rhs.clone()], v)
    }

    pub fn neg(&self) -> Var {
        Var::from_op(Op::Neg, vec![self.clone()], self.value().map(|a| -a))
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(Op::Scale(c), vec![self.clone()], self.value().map(|a| a * c))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::from_op(Op::AddScalar(c), vec![self.clone()], self.value().map(|a| a + c))
    }

    pub fn recip(&self) -> Var {
        Var::from_op(Op::Recip, vec![self.clone()], self.value().map(|a| 1.0 / a))
    }

    pub fn exp(&self) -> Var {
        Var::from_op(Op::Exp, vec![self.clone()], self.value().map(f64::exp))
    }

    pub fn ln(&self) -> Var {
        Var::from_op(Op::Ln, vec![self.clone()], self.value().map(f64::ln))
    }

    pub fn sqrt(&self) -> Var {
        Var::from_op(Op::Sqrt, vec![self.clone()], self.value().map(f64::sqrt))
    }

    pub fn abs(&self) -> Var {
        Var::from_op(Op::Abs, vec![self.clone()], self.value().map(f64::abs))
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let v = self.value().map(|a| if a >= 0.0 { a } else { slope * a });
        Var::from_op(Op::LeakyRelu(slope), vec![self.clone()], v)
    }

    pub fn sigmoid(&self) -> Var {
        let v = self.value().map(|a| 1.0 / (1.0 + (-a).exp()));
        Var::from_op(Op::Sigmoid, vec![self.clone()], v)
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(Op::Tanh, vec![self.clone()], self.value().map(f64::tanh))
    }

    // ---- reductions & broadcasts ----

    pub fn sum_all(&self) -> Var {
        Var::from_op(Op::SumAll, vec![self.clone()], Tensor::scalar(self.value().sum()))
    }

    pub fn mean_all(&self) -> Var {
        self.sum_all().scale(1.0 / self.value().len() as f64)
    }

    /// Scalar `[1]` replicated to `shape`.
    pub fn broadcast_fill(&self, shape: &[usize]) -> Var {
        assert_eq!(self.value().len(), 1);
        let v = Tensor::full(shape.to_vec(), self.item());
        Var::from_op(Op::BroadcastFill { shape: shape.to_vec() }, vec![self.clone()], v)
    }

    /// `[R, C] -> [R, 1]` row sums.
    pub fn row_sum(&self) -> Var {
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let d = self.value().data();
        let out: Vec<f64> = (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect();
        Var::from_op(Op::RowSum, vec![self.clone()], Tensor::new(vec![r, 1], out))
    }

    /// `[R, 1] -> [R, cols]`.
    pub fn broadcast_cols(&self, cols: usize) -> Var {
        let r = self.shape()[0];
        assert_eq!(self.shape()[1], 1);
        let d = self.value().data();
        let mut out = Vec::with_capacity(r * cols);
        for i in 0..r {
            out.extend(std::iter::repeat(d[i]).take(cols));
        }
        Var::from_op(Op::BroadcastCols { cols }, vec![self.clone()], Tensor::new(vec![r, cols], out))
    }

    /// `[T, C, H, W] -> [C]`, summing over T, H, W.
    pub fn channel_sum(&self) -> Var {
        let s = self.shape();
        assert_eq!(s.len(), 4);
        let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
        let d = self.value().data();
        let hw = h * w;
        let mut out = vec![0.0; c];
        for ti in 0..t {
            for ci in 0..c {
                let base = (ti * c + ci) * hw;
                out[ci] += d[base..base + hw].iter().sum::<f64>();
            }
        }
        Var::from_op(Op::ChannelSum, vec![self.clone()], Tensor::new(vec![c], out))
    }

    /// `[C]` replicated over a `[T, C, H, W]` shape.
    pub fn broadcast_channel(&self, shape: &[usize]) -> Var {
        assert_eq!(shape.len(), 4);
        assert_eq!(self.value().len(), shape[1]);
        let (t, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let k = self.value().data();
        let mut out = Vec::with_capacity(t * c * hw);
        for _ in 0..t {
            for ci in 0..c {
                out.extend(std::iter::repeat(k[ci]).take(hw));
            }
        }
        Var::from_op(
            Op::BroadcastChannel { shape: shape.to_vec() },
            vec![self.clone()],
            Tensor::new(shape.to_vec(), out),
        )
    }

    // ---- matrices ----

    pub fn matmul(&self, rhs: &Var) -> Var {
        let v = self.value().matmul(rhs.value());
        Var::from_op(Op::Matmul, vec![self.clone(), rhs.clone()], v)
    }

    pub fn t(&self) -> Var {
        Var::from_op(Op::Transpose2, vec![self.clone()], self.value().transpose2())
    }

    // ---- shape ----

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let orig = self.shape().to_vec();
        let v = self.value().reshape(shape.to_vec());
        Var::from_op(Op::Reshape { orig }, vec![self.clone()], v)
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Var {
        let v = slice_raw(self.value(), axis, start, len);
        Var::from_op(Op::Slice { axis, start, len }, vec![self.clone()], v)
    }

    pub fn pad_zero(&self, axis: usize, before: usize, after: usize) -> Var {
        let v = pad_zero_raw(self.value(), axis, before, after);
        Var::from_op(Op::PadZero { axis, before, after }, vec![self.clone()], v)
    }

    // ---- clips ----

    /// Shift along axis 0 with zero padding: `out[t] = x[t - offset]`.
    /// `offset = 1` delays by one frame; `offset = -1` advances.
    pub fn time_shift(&self, offset: i64) -> Var {
        let v = time_shift_raw(self.value(), offset);
        Var::from_op(Op::TimeShift { offset }, vec![self.clone()], v)
    }

    /// Nearest-neighbour 2x spatial upsampling of a `[T, C, H, W]` clip.
    pub fn upsample2x(&self) -> Var {
        let v = upsample2x_raw(self.value());
        Var::from_op(Op::Upsample2x, vec![self.clone()], v)
    }

    /// 2x2 sum pooling; adjoint of [`Var::upsample2x`].
    pub fn downsample_sum2x(&self) -> Var {
        let v = downsample_sum2x_raw(self.value());
        Var::from_op(Op::DownsampleSum2x, vec![self.clone()], v)
    }

    pub(crate) fn conv_node(op: Op, parents: Vec<Var>, value: Tensor) -> Var {
        Var::from_op(op, parents, value)
    }
}

/// Concatenate along `axis`.
pub fn concat(axis: usize, parts: &[Var]) -> Var {
    assert!(!parts.is_empty());
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let v = concat_raw(axis, &parts.iter().map(|p| p.value().clone()).collect::<Vec<_>>());
    Var::from_op(Op::Concat { axis }, parts.to_vec(), v)
}

/// Row-wise softmax of a `[R, C]` matrix.
///
/// The per-row max is detached before exponentiation; softmax is invariant
/// to that shift, so the gradient is still exact.
pub fn softmax_rows(x: &Var) -> Var {
    let cols = x.shape()[1];
    let shifted = x.sub(&row_max_detached(x).broadcast_cols(cols));
    let e = shifted.exp();
    let denom = e.row_sum().broadcast_cols(cols);
    e.mul(&denom.recip())
}

/// Row-wise log-softmax of a `[R, C]` matrix.
pub fn log_softmax_rows(x: &Var) -> Var {
    let cols = x.shape()[1];
    let shifted = x.sub(&row_max_detached(x).broadcast_cols(cols));
    let log_denom = shifted.exp().row_sum().ln().broadcast_cols(cols);
    shifted.sub(&log_denom)
}

fn row_max_detached(x: &Var) -> Var {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let d = x.value().data();
    let m: Vec<f64> =
        (0..r).map(|i| d[i * c..(i + 1) * c].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
    Var::constant(Tensor::new(vec![r, 1], m))
}

/// Gradient of a scalar `output` with respect to each of `wrt`.
///
/// The returned values are graph nodes: feeding them back into further ops
/// and calling `grad` again yields exact higher-order derivatives.
pub fn grad(output: &Var, wrt: &[Var]) -> Vec<Var> {
    assert_eq!(output.value().len(), 1, "grad expects a scalar output");

    // Post-order over the subgraph that needs gradients.
    let order = topo_order(output);

    let mut cotangents: HashMap<u64, Var> = HashMap::new();
    cotangents.insert(output.id(), Var::constant(Tensor::scalar(1.0)));

    for var in order.iter().rev() {
        let Some(cot) = cotangents.get(&var.id()).cloned() else { continue };
        let Some(op) = var.0.op.as_ref() else { continue };
        let contributions = vjp(op, &var.0.parents, var, &cot);
        for (parent, contribution) in var.0.parents.iter().zip(contributions) {
            if !parent.0.needs_grad {
                continue;
            }
            if let Some(g) = contribution {
                cotangents
                    .entry(parent.id())
                    .and_modify(|acc| *acc = acc.add(&g))
                    .or_insert(g);
            }
        }
    }

    wrt.iter()
        .map(|w| {
            cotangents
                .get(&w.id())
                .cloned()
                .unwrap_or_else(|| Var::constant(Tensor::zeros(w.shape().to_vec())))
        })
        .collect()
}

fn topo_order(output: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut state: HashMap<u64, u8> = HashMap::new(); // 1 = open, 2 = closed
    let mut stack = vec![output.clone()];
    while let Some(var) = stack.last().cloned() {
        match state.get(&var.id()).copied() {
            None => {
                state.insert(var.id(), 1);
                for parent in &var.0.parents {
                    if parent.0.needs_grad && !state.contains_key(&parent.id()) {
                        stack.push(parent.clone());
                    }
                }
            }
            Some(1) => {
                state.insert(var.id(), 2);
                order.push(var);
                stack.pop();
            }
            _ => {
                stack.pop();
            }
        }
    }
    order
}

/// Vector-Jacobian products, expressed through public ops so the results
/// stay differentiable.
fn vjp(op: &Op, parents: &[Var], out: &Var, cot: &Var) -> Vec<Option<Var>> {
    match op {
        Op::Add => vec![Some(cot.clone()), Some(cot.clone())],
        Op::Sub => vec![Some(cot.clone()), Some(cot.neg())],
        Op::Mul => vec![Some(cot.mul(&parents[1])), Some(cot.mul(&parents[0]))],
        Op::Neg => vec![Some(cot.neg())],
        Op::Scale(c) => vec![Some(cot.scale(*c))],
        Op::AddScalar(_) => vec![Some(cot.clone())],
        Op::Recip => vec![Some(cot.mul(&out.square()).neg())],
        Op::Exp => vec![Some(cot.mul(out))],
        Op::Ln => vec![Some(cot.mul(&parents[0].recip()))],
        Op::Sqrt => vec![Some(cot.mul(&out.recip()).scale(0.5))],
        Op::Abs => {
            let sign = Var::constant(parents[0].value().map(f64::signum));
            vec![Some(cot.mul(&sign))]
        }
        Op::LeakyRelu(slope) => {
            let slope = *slope;
            let mask = Var::constant(parents[0].value().map(|a| if a >= 0.0 { 1.0 } else { slope }));
            vec![Some(cot.mul(&mask))]
        }
        Op::Sigmoid => {
            let one_minus = out.neg().add_scalar(1.0);
            vec![Some(cot.mul(out).mul(&one_minus))]
        }
        Op::Tanh => {
            let one_minus_sq = out.square().neg().add_scalar(1.0);
            vec![Some(cot.mul(&one_minus_sq))]
        }
        Op::SumAll => vec![Some(cot.broadcast_fill(parents[0].shape()))],
        Op::BroadcastFill { .. } => vec![Some(cot.sum_all())],
        Op::Matmul => vec![
            Some(cot.matmul(&parents[1].t())),
            Some(parents[0].t().matmul(cot)),
        ],
        Op::Transpose2 => vec![Some(cot.t())],
        Op::Reshape { orig } => vec![Some(cot.reshape(orig))],
        Op::Concat { axis } => {
            let mut start = 0;
            parents
                .iter()
                .map(|p| {
                    let len = p.shape()[*axis];
                    let piece = cot.slice(*axis, start, len);
                    start += len;
                    Some(piece)
                })
                .collect()
        }
        Op::Slice { axis, start, len } => {
            let dim = parents[0].shape()[*axis];
            vec![Some(cot.pad_zero(*axis, *start, dim - start - len))]
        }
        Op::PadZero { axis, before, .. } => {
            let len = parents[0].shape()[*axis];
            vec![Some(cot.slice(*axis, *before, len))]
        }
        Op::RowSum => {
            let cols = parents[0].shape()[1];
            vec![Some(cot.broadcast_cols(cols))]
        }
        Op::BroadcastCols { .. } => vec![Some(cot.row_sum())],
        Op::ChannelSum => vec![Some(cot.broadcast_channel(parents[0].shape()))],
        Op::BroadcastChannel { .. } => vec![Some(cot.channel_sum())],
        Op::TimeShift { offset } => vec![Some(cot.time_shift(-offset))],
        Op::Upsample2x => vec![Some(cot.downsample_sum2x())],
        Op::DownsampleSum2x => vec![Some(cot.upsample2x())],
        Op::Conv2d { meta } => {
            let (x, w) = (&parents[0], &parents[1]);
            let in_hw = (x.shape()[2], x.shape()[3]);
            vec![
                Some(conv2d_input_grad(cot, w, *meta, in_hw)),
                Some(conv2d_weight_grad(x, cot, *meta)),
            ]
        }
        Op::ConvInputGrad { meta, .. } => {
            let (gy, w) = (&parents[0], &parents[1]);
            vec![
                Some(conv2d(cot, w, *meta)),
                Some(conv2d_weight_grad(cot, gy, *meta)),
            ]
        }
        Op::ConvWeightGrad { meta, .. } => {
            let (x, gy) = (&parents[0], &parents[1]);
            let in_hw = (x.shape()[2], x.shape()[3]);
            vec![
                Some(conv2d_input_grad(gy, cot, *meta, in_hw)),
                Some(conv2d(x, cot, *meta)),
            ]
        }
    }
}

// ---- raw kernels for shape/clip ops ----

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

fn slice_raw(x: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
    let (outer, mid, inner) = axis_split(x.shape(), axis);
    assert!(start + len <= mid, "slice out of range");
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let d = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * mid + start) * inner;
        out.extend_from_slice(&d[base..base + len * inner]);
    }
    Tensor::new(shape, out)
}

fn pad_zero_raw(x: &Tensor, axis: usize, before: usize, after: usize) -> Tensor {
    let (outer, mid, inner) = axis_split(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = mid + before + after;
    let d = x.data();
    let mut out = vec![0.0; outer * shape[axis] * inner];
    for o in 0..outer {
        let src = o * mid * inner;
        let dst = (o * shape[axis] + before) * inner;
        out[dst..dst + mid * inner].copy_from_slice(&d[src..src + mid * inner]);
    }
    Tensor::new(shape, out)
}

fn concat_raw(axis: usize, parts: &[Tensor]) -> Tensor {
    let first = &parts[0];
    for p in parts {
        assert_eq!(p.rank(), first.rank());
        for (a, (&da, &db)) in p.shape().iter().zip(first.shape().iter()).enumerate().map(|(i, z)| (i, z)) {
            if a != axis {
                assert_eq!(da, db, "concat shape mismatch off-axis");
            }
        }
    }
    let (outer, _, inner) = axis_split(first.shape(), axis);
    let total_mid: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total_mid;
    let mut out = Vec::with_capacity(outer * total_mid * inner);
    for o in 0..outer {
        for p in parts {
            let mid = p.shape()[axis];
            let base = o * mid * inner;
            out.extend_from_slice(&p.data()[base..base + mid * inner]);
        }
    }
    Tensor::new(shape, out)
}

fn time_shift_raw(x: &Tensor, offset: i64) -> Tensor {
    let t = x.dim(0) as i64;
    let inner = x.len() / x.dim(0);
    let d = x.data();
    let mut out = vec![0.0; x.len()];
    for ti in 0..t {
        let src = ti - offset;
        if src >= 0 && src < t {
            let (ti, src) = (ti as usize, src as usize);
            out[ti * inner..(ti + 1) * inner].copy_from_slice(&d[src * inner..(src + 1) * inner]);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn upsample2x_raw(x: &Tensor) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 4);
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let d = x.data();
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; t * c * h2 * w2];
    for tc in 0..t * c {
        let src = tc * h * w;
        let dst = tc * h2 * w2;
        for y in 0..h {
            for xw in 0..w {
                let v = d[src + y * w + xw];
                let o = dst + 2 * y * w2 + 2 * xw;
                out[o] = v;
                out[o + 1] = v;
                out[o + w2] = v;
                out[o + w2 + 1] = v;
            }
        }
    }
    Tensor::new(vec![t, c, h2, w2], out)
}

fn downsample_sum2x_raw(x: &Tensor) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 4);
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    assert!(h % 2 == 0 && w % 2 == 0, "downsample_sum2x needs even spatial dims");
    let d = x.data();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; t * c * h2 * w2];
    for tc in 0..t * c {
        let src = tc * h * w;
        let dst = tc * h2 * w2;
        for y in 0..h2 {
            for xw in 0..w2 {
                let i = src + 2 * y * w + 2 * xw;
                out[dst + y * w2 + xw] = d[i] + d[i + 1] + d[i + w] + d[i + w + 1];
            }
        }
    }
    Tensor::new(vec![t, c, h2, w2], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_mul_grad() {
        // f(a, b) = sum(a * b + a) => df/da = b + 1, df/db = a
        let a = Var::leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let b = Var::leaf(Tensor::new(vec![3], vec![4.0, 5.0, 6.0]));
        let y = a.mul(&b).add(&a).sum_all();
        let gs = grad(&y, &[a.clone(), b.clone()]);
        assert_eq!(gs[0].value().data(), &[5.0, 6.0, 7.0]);
        assert_eq!(gs[1].value().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn second_order_through_square() {
        // y = sum(x^3); dy/dx = 3x^2; d2y/dx2 (as grad of sum(dy/dx)) = 6x
        let x = Var::leaf(Tensor::new(vec![2], vec![2.0, -1.0]));
        let y = x.square().mul(&x).sum_all();
        let g = grad(&y, &[x.clone()]).remove(0);
        assert_eq!(g.value().data(), &[12.0, 3.0]);
        let gg = grad(&g.sum_all(), &[x.clone()]).remove(0);
        assert_eq!(gg.value().data(), &[12.0, -6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Var::leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 100.0]));
        let s = softmax_rows(&x);
        let sums = s.row_sum();
        for &v in sums.value().data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn time_shift_delays_and_pads() {
        let x = Var::constant(Tensor::new(vec![3, 1, 1, 1], vec![1.0, 2.0, 3.0]));
        assert_eq!(x.time_shift(1).value().data(), &[0.0, 1.0, 2.0]);
        assert_eq!(x.time_shift(-1).value().data(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn slice_pad_adjoint_shapes() {
        let x = Var::leaf(Tensor::new(vec![2, 4], (0..8).map(|i| i as f64).collect()));
        let y = x.slice(1, 1, 2).sum_all();
        let g = grad(&y, &[x.clone()]).remove(0);
        assert_eq!(g.value().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn upsample_downsample_adjoint() {
        let x = Var::leaf(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = x.upsample2x();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let g = grad(&y.sum_all(), &[x.clone()]).remove(0);
        assert_eq!(g.value().data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn detached_subgraph_gets_no_grad() {
        let x = Var::leaf(Tensor::scalar(3.0));
        let y = x.detach().mul(&x);
        let g = grad(&y, &[x.clone()]).remove(0);
        assert_eq!(g.item(), 3.0);
    }
}
