//! The two building blocks of the networks: gated temporal-shift
//! convolutions and spatial self-attention.
//!
//! Blocks own their parameters as plain tensors. A forward pass goes through
//! a [`ParamBinder`], which lifts each named parameter into the autodiff
//! graph exactly once, so optimizers and checkpoints can address parameters
//! by path while repeated sub-forwards share one leaf per parameter.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat, conv2d, conv_out_size, softmax_rows, ConvMeta, Var};
use crate::temporal_shift::{learnable_shift, temporal_shift, LearnableShiftKernels, ShiftSpec};
use crate::tensor::Tensor;

/// Lifts named parameter tensors into graph leaves.
///
/// Binding the same name twice returns the same [`Var`], which is what makes
/// gradients accumulate correctly when a network is applied more than once
/// inside a single loss.
pub struct ParamBinder {
    trainable: bool,
    entries: Vec<(String, Var)>,
    index: HashMap<String, usize>,
}

impl ParamBinder {
    pub fn trainable() -> Self {
        ParamBinder { trainable: true, entries: Vec::new(), index: HashMap::new() }
    }

    /// Parameters bound through a frozen binder are constants: no gradient
    /// flows to them and constant subgraphs are pruned from the tape.
    pub fn frozen() -> Self {
        ParamBinder { trainable: false, entries: Vec::new(), index: HashMap::new() }
    }

    pub fn bind(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&i) = self.index.get(name) {
            return self.entries[i].1.clone();
        }
        let var = if self.trainable { Var::leaf(value.clone()) } else { Var::constant(value.clone()) };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), var.clone()));
        var
    }

    pub fn entries(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }
}

/// Gaussian samples via Box-Muller, driven by the deterministic stream rng.
pub fn randn(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    use rand::Rng;
    (0..n)
        .map(|_| {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Which temporal shift a gated conv applies before its convolutions.
#[derive(Clone, Debug)]
pub enum ShiftKind {
    Fixed(ShiftSpec),
    Learnable(LearnableShiftKernels),
}

/// One generator layer: temporal shift, then a feature conv modulated by a
/// sigmoid gate conv. `out = LeakyReLU(conv_f(s)) * sigmoid(conv_g(s))`.
#[derive(Clone, Debug)]
pub struct GatedTsmConv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub activation_slope: f64,
    shift: ShiftKind,
    feature_weight: Tensor,
    feature_bias: Tensor,
    gate_weight: Tensor,
    gate_bias: Tensor,
}

impl GatedTsmConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        shift: ShiftKind,
        activation_slope: f64,
    ) -> Self {
        assert!(stride >= 1 && dilation >= 1);
        if let ShiftKind::Learnable(k) = &shift {
            assert_eq!(k.channels(), in_channels, "shift kernel channels must match input");
        }
        let fan_in = (in_channels * kernel * kernel) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = out_channels * in_channels * kernel * kernel;
        let feature_weight = Tensor::new(vec![out_channels, in_channels, kernel, kernel], randn(rng, n, std));
        let gate_weight = Tensor::new(vec![out_channels, in_channels, kernel, kernel], randn(rng, n, std));
        GatedTsmConv {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            activation_slope,
            shift,
            feature_weight,
            feature_bias: Tensor::zeros(vec![out_channels]),
            gate_weight,
            gate_bias: Tensor::zeros(vec![out_channels]),
        }
    }

    /// Spatial geometry: "same" zero padding `d(k-1)/2` for odd kernels,
    /// `p = 1` for the 4x4 stride-2 halving layers.
    pub fn meta(&self) -> ConvMeta {
        let pad = match self.kernel % 2 {
            1 => self.dilation * (self.kernel - 1) / 2,
            _ => {
                assert_eq!(self.kernel, 4, "even kernels other than 4 are not configured");
                1
            }
        };
        ConvMeta::new(self.kernel, self.stride, self.dilation, pad)
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let meta = self.meta();
        (conv_out_size(h, meta), conv_out_size(w, meta))
    }

    pub fn shift(&self) -> &ShiftKind {
        &self.shift
    }

    pub fn forward(&self, x: &Var, binder: &mut ParamBinder, path: &str) -> Var {
        assert_eq!(
            x.shape()[1],
            self.in_channels,
            "gated conv `{path}` expects {} input channels, got {}",
            self.in_channels,
            x.shape()[1]
        );
        let shifted = match &self.shift {
            ShiftKind::Fixed(spec) => temporal_shift(x, spec),
            ShiftKind::Learnable(kern) => {
                let taps = binder.bind(&format!("{path}.shift_taps"), kern.taps());
                learnable_shift(x, &taps, kern.mode())
            }
        };
        let meta = self.meta();
        let fw = binder.bind(&format!("{path}.feature_w"), &self.feature_weight);
        let fb = binder.bind(&format!("{path}.feature_b"), &self.feature_bias);
        let gw = binder.bind(&format!("{path}.gate_w"), &self.gate_weight);
        let gb = binder.bind(&format!("{path}.gate_b"), &self.gate_bias);

        let feat = conv2d(&shifted, &fw, meta);
        let feat = feat.add(&fb.broadcast_channel(feat.shape()));
        let gate = conv2d(&shifted, &gw, meta);
        let gate = gate.add(&gb.broadcast_channel(gate.shape()));
        feat.leaky_relu(self.activation_slope).mul(&gate.sigmoid())
    }

    pub fn visit(&self, path: &str, f: &mut dyn FnMut(String, &Tensor)) {
        if let ShiftKind::Learnable(k) = &self.shift {
            f(format!("{path}.shift_taps"), k.taps());
        }
        f(format!("{path}.feature_w"), &self.feature_weight);
        f(format!("{path}.feature_b"), &self.feature_bias);
        f(format!("{path}.gate_w"), &self.gate_weight);
        f(format!("{path}.gate_b"), &self.gate_bias);
    }

    pub fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let ShiftKind::Learnable(k) = &mut self.shift {
            let mut taps = k.taps().clone();
            f(format!("{path}.shift_taps"), &mut taps);
            k.set_taps(taps).expect("tap shape preserved by visitor");
        }
        f(format!("{path}.feature_w"), &mut self.feature_weight);
        f(format!("{path}.feature_b"), &mut self.feature_bias);
        f(format!("{path}.gate_w"), &mut self.gate_weight);
        f(format!("{path}.gate_b"), &mut self.gate_bias);
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

/// Spatial self-attention over each frame independently.
///
/// Queries and keys are reduced to `C/r` channels through 1x1 projections;
/// the output is `gamma * attention + x` with `gamma` starting at zero, so a
/// freshly built layer is the identity.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub channels: usize,
    pub reduction: usize,
    q_proj: Tensor,
    k_proj: Tensor,
    v_proj: Tensor,
    gamma: Tensor,
}

impl SelfAttention {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, reduction: usize) -> Self {
        assert!(reduction >= 1 && channels % reduction == 0, "reduction must divide channels");
        let reduced = channels / reduction;
        let std = (1.0 / channels as f64).sqrt();
        SelfAttention {
            channels,
            reduction,
            q_proj: Tensor::new(vec![reduced, channels], randn(rng, reduced * channels, std)),
            k_proj: Tensor::new(vec![reduced, channels], randn(rng, reduced * channels, std)),
            v_proj: Tensor::new(vec![channels, channels], randn(rng, channels * channels, std)),
            gamma: Tensor::zeros(vec![1]),
        }
    }

    pub fn forward(&self, x: &Var, binder: &mut ParamBinder, path: &str) -> Var {
        let s = x.shape().to_vec();
        let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert_eq!(c, self.channels, "attention `{path}` channel mismatch");
        let n = h * w;

        let q = binder.bind(&format!("{path}.q_proj"), &self.q_proj);
        let k = binder.bind(&format!("{path}.k_proj"), &self.k_proj);
        let v = binder.bind(&format!("{path}.v_proj"), &self.v_proj);
        let gamma = binder.bind(&format!("{path}.gamma"), &self.gamma);

        let mut frames = Vec::with_capacity(t);
        for ti in 0..t {
            let xt = x.slice(0, ti, 1).reshape(&[c, n]);
            let qt = q.matmul(&xt); // [C/r, N]
            let kt = k.matmul(&xt);
            let vt = v.matmul(&xt); // [C, N]
            let attn = softmax_rows(&qt.t().matmul(&kt)); // [N, N], rows = query positions
            let mixed = vt.matmul(&attn.t()); // [C, N]
            frames.push(mixed.reshape(&[1, c, h, w]));
        }
        let mixed = concat(0, &frames);
        x.add(&gamma.broadcast_fill(&s).mul(&mixed))
    }

    /// Attention matrix of a single frame, for inspection and tests.
    pub fn attention_rows(&self, x: &Var, frame: usize) -> Var {
        let s = x.shape();
        let (c, n) = (s[1], s[2] * s[3]);
        let xt = x.slice(0, frame, 1).reshape(&[c, n]);
        let q = Var::constant(self.q_proj.clone()).matmul(&xt);
        let k = Var::constant(self.k_proj.clone()).matmul(&xt);
        softmax_rows(&q.t().matmul(&k))
    }

    pub fn visit(&self, path: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(format!("{path}.q_proj"), &self.q_proj);
        f(format!("{path}.k_proj"), &self.k_proj);
        f(format!("{path}.v_proj"), &self.v_proj);
        f(format!("{path}.gamma"), &self.gamma);
    }

    pub fn visit_mut(&mut self, path: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{path}.q_proj"), &mut self.q_proj);
        f(format!("{path}.k_proj"), &mut self.k_proj);
        f(format!("{path}.v_proj"), &mut self.v_proj);
        f(format!("{path}.gamma"), &mut self.gamma);
    }
}

/// `y = x` for `x >= 0`, else `slope * x`.
pub fn leaky_relu(x: &Var, slope: f64) -> Var {
    x.leaky_relu(slope)
}
