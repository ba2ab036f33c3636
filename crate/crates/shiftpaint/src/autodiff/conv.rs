//! Per-frame 2-D convolution and its two adjoints.
//!
//! All three are im2col/col2im plus a GEMM, batched over the leading time
//! axis with rayon (frames write disjoint output slices, so the result is
//! deterministic regardless of scheduling). The three ops reference each
//! other in their vector-Jacobian products, which keeps convolution closed
//! under repeated differentiation.

use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;

use super::{Op, Var};
use crate::tensor::Tensor;

/// Spatial hyperparameters of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvMeta {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ConvMeta {
    pub fn new(kernel: usize, stride: usize, dilation: usize, pad: usize) -> Self {
        assert!(kernel >= 1 && stride >= 1 && dilation >= 1);
        ConvMeta { kernel, stride, dilation, pad }
    }

    /// "Same" padding for stride-1 odd kernels: `p = d(k-1)/2`.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "same-padding helper expects odd kernels");
        ConvMeta::new(kernel, 1, dilation, dilation * (kernel - 1) / 2)
    }
}

/// Standard convolution output size: `floor((n + 2p - d(k-1) - 1)/s) + 1`.
pub fn conv_out_size(n: usize, meta: ConvMeta) -> usize {
    let span = meta.dilation * (meta.kernel - 1) + 1;
    assert!(n + 2 * meta.pad >= span, "kernel span exceeds padded input");
    (n + 2 * meta.pad - span) / meta.stride + 1
}

/// `x: [T, C_in, H, W]`, `w: [C_out, C_in, k, k]` -> `[T, C_out, H_out, W_out]`.
pub fn conv2d(x: &Var, w: &Var, meta: ConvMeta) -> Var {
    let value = conv2d_raw(x.value(), w.value(), meta);
    Var::conv_node(Op::Conv2d { meta }, vec![x.clone(), w.clone()], value)
}

/// Adjoint of [`conv2d`] with respect to its input.
/// `gy: [T, C_out, H_out, W_out]` -> `[T, C_in, H, W]` (`in_hw` fixes H, W).
pub fn conv2d_input_grad(gy: &Var, w: &Var, meta: ConvMeta, in_hw: (usize, usize)) -> Var {
    let value = conv2d_input_grad_raw(gy.value(), w.value(), meta, in_hw);
    Var::conv_node(Op::ConvInputGrad { meta, in_hw }, vec![gy.clone(), w.clone()], value)
}

/// Adjoint of [`conv2d`] with respect to its weights: `-> [C_out, C_in, k, k]`.
pub fn conv2d_weight_grad(x: &Var, gy: &Var, meta: ConvMeta) -> Var {
    let value = conv2d_weight_grad_raw(x.value(), gy.value(), meta);
    Var::conv_node(Op::ConvWeightGrad { meta, kernel: meta.kernel }, vec![x.clone(), gy.clone()], value)
}

fn gemm_into(a: ArrayView2<f64>, b: ArrayView2<f64>, out: &mut [f64]) {
    let (m, n) = (a.shape()[0], b.shape()[1]);
    let mut view = ArrayViewMut2::from_shape((m, n), out).unwrap();
    ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut view);
}

fn im2col(frame: &[f64], c_in: usize, h: usize, w: usize, meta: ConvMeta, out: &mut [f64]) {
    let k = meta.kernel;
    let ho = conv_out_size(h, meta);
    let wo = conv_out_size(w, meta);
    debug_assert_eq!(out.len(), c_in * k * k * ho * wo);
    let mut row = 0;
    for ci in 0..c_in {
        let plane = &frame[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let base = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * meta.stride + ky * meta.dilation) as isize - meta.pad as isize;
                    let dst = base + oy * wo;
                    if iy < 0 || iy >= h as isize {
                        out[dst..dst + wo].fill(0.0);
                        continue;
                    }
                    let src_row = iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * meta.stride + kx * meta.dilation) as isize - meta.pad as isize;
                        out[dst + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            plane[src_row + ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(cols: &[f64], c_in: usize, h: usize, w: usize, meta: ConvMeta, frame: &mut [f64]) {
    let k = meta.kernel;
    let ho = conv_out_size(h, meta);
    let wo = conv_out_size(w, meta);
    frame.fill(0.0);
    let mut row = 0;
    for ci in 0..c_in {
        let plane_base = ci * h * w;
        for ky in 0..k {
            for kx in 0..k {
                let base = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * meta.stride + ky * meta.dilation) as isize - meta.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = plane_base + iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * meta.stride + kx * meta.dilation) as isize - meta.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            frame[dst_row + ix as usize] += cols[base + oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) fn conv2d_raw(x: &Tensor, w: &Tensor, meta: ConvMeta) -> Tensor {
    let (t, c_in, h, wd) = dims4(x);
    let (c_out, wc_in, k, k2) = dims4(w);
    assert_eq!(c_in, wc_in, "conv2d channel mismatch: input {c_in} vs weight {wc_in}");
    assert!(k == meta.kernel && k2 == meta.kernel, "weight kernel does not match meta");
    let ho = conv_out_size(h, meta);
    let wo = conv_out_size(wd, meta);

    let w_mat = ArrayView2::from_shape((c_out, c_in * k * k), w.data()).unwrap();
    let mut out = vec![0.0; t * c_out * ho * wo];
    out.par_chunks_mut(c_out * ho * wo).enumerate().for_each(|(ti, out_frame)| {
        let frame = &x.data()[ti * c_in * h * wd..(ti + 1) * c_in * h * wd];
        let mut cols = vec![0.0; c_in * k * k * ho * wo];
        im2col(frame, c_in, h, wd, meta, &mut cols);
        let cols_view = ArrayView2::from_shape((c_in * k * k, ho * wo), &cols[..]).unwrap();
        gemm_into(w_mat, cols_view, out_frame);
    });
    Tensor::new(vec![t, c_out, ho, wo], out)
}

pub(crate) fn conv2d_input_grad_raw(gy: &Tensor, w: &Tensor, meta: ConvMeta, in_hw: (usize, usize)) -> Tensor {
    let (t, c_out, ho, wo) = dims4(gy);
    let (wc_out, c_in, k, _) = dims4(w);
    assert_eq!(c_out, wc_out);
    let (h, wd) = in_hw;
    assert_eq!(ho, conv_out_size(h, meta), "grad-output height inconsistent with in_hw");
    assert_eq!(wo, conv_out_size(wd, meta), "grad-output width inconsistent with in_hw");

    let w_t = Tensor::new(vec![c_out, c_in * k * k], w.data().to_vec()).transpose2();
    let w_t_view = w_t.view2();
    let mut out = vec![0.0; t * c_in * h * wd];
    out.par_chunks_mut(c_in * h * wd).enumerate().for_each(|(ti, gx_frame)| {
        let gy_frame = &gy.data()[ti * c_out * ho * wo..(ti + 1) * c_out * ho * wo];
        let gy_view = ArrayView2::from_shape((c_out, ho * wo), gy_frame).unwrap();
        let mut cols = vec![0.0; c_in * k * k * ho * wo];
        gemm_into(w_t_view, gy_view, &mut cols);
        col2im(&cols, c_in, h, wd, meta, gx_frame);
    });
    Tensor::new(vec![t, c_in, h, wd], out)
}

pub(crate) fn conv2d_weight_grad_raw(x: &Tensor, gy: &Tensor, meta: ConvMeta) -> Tensor {
    let (t, c_in, h, wd) = dims4(x);
    let (tg, c_out, ho, wo) = dims4(gy);
    assert_eq!(t, tg, "input/grad-output frame count mismatch");
    let k = meta.kernel;
    assert_eq!(ho, conv_out_size(h, meta));
    assert_eq!(wo, conv_out_size(wd, meta));

    // Per-frame partials computed in parallel, reduced in frame order so
    // the floating-point sum is reproducible.
    let partials: Vec<Vec<f64>> = (0..t)
        .into_par_iter()
        .map(|ti| {
            let frame = &x.data()[ti * c_in * h * wd..(ti + 1) * c_in * h * wd];
            let gy_frame = &gy.data()[ti * c_out * ho * wo..(ti + 1) * c_out * ho * wo];
            let mut cols = vec![0.0; c_in * k * k * ho * wo];
            im2col(frame, c_in, h, wd, meta, &mut cols);
            let cols_t = Tensor::new(vec![c_in * k * k, ho * wo], cols).transpose2();
            let gy_view = ArrayView2::from_shape((c_out, ho * wo), gy_frame).unwrap();
            let mut gw = vec![0.0; c_out * c_in * k * k];
            gemm_into(gy_view, cols_t.view2(), &mut gw);
            gw
        })
        .collect();

    let mut acc = vec![0.0; c_out * c_in * k * k];
    for part in &partials {
        for (a, p) in acc.iter_mut().zip(part.iter()) {
            *a += p;
        }
    }
    Tensor::new(vec![c_out, c_in, k, k], acc)
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected rank-4 tensor, got {s:?}");
    (s[0], s[1], s[2], s[3])
}
