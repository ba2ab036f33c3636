//! The inpainting generator.
//!
//! Thirteen gated temporal-shift convolutions arranged as: a 5x5 stem, two
//! 4x4/stride-2 down-sampling layers, a dilated 3x3 stack (d = 2, 4, 8, 16),
//! and a nearest-neighbour + 3x3 up-sampling tail back to RGB, with spatial
//! self-attention after the down-sampling stack and after the dilated stack.
//! Input is 8 channels per frame: masked RGB, mask, landmark heatmap, and
//! the reference frame broadcast to every time step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::neural_blocks::{GatedTsmConv, ParamBinder, SelfAttention, ShiftKind};
use crate::temporal_shift::{ChannelFraction, LearnableShiftKernels, ShiftMode};
use crate::tensor::Tensor;
use crate::video_data::{FrameSequence, InpaintingSample};

pub const GENERATOR_INPUT_CHANNELS: usize = 8;
pub const GATED_CONV_COUNT: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    GatedConv { kernel: usize, stride: usize, dilation: usize, out_channels: usize },
    Attention,
    Upsample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Channel width at full resolution; doubles per down-sampling stage.
    pub base_channels: usize,
    pub input_channels: usize,
    pub shift_mode: ShiftMode,
    pub shift_fraction: ChannelFraction,
    pub attention_reduction: usize,
    pub leaky_slope: f64,
    pub layer_plan: Vec<LayerDesc>,
}

impl GeneratorConfig {
    /// The standard 13-conv plan at a given base width.
    pub fn with_base(base_channels: usize, shift_mode: ShiftMode) -> Self {
        let b = base_channels;
        let plan = vec![
            LayerDesc::GatedConv { kernel: 5, stride: 1, dilation: 1, out_channels: b },
            LayerDesc::GatedConv { kernel: 4, stride: 2, dilation: 1, out_channels: 2 * b },
            LayerDesc::GatedConv { kernel: 4, stride: 2, dilation: 1, out_channels: 4 * b },
            LayerDesc::Attention,
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 1, out_channels: 4 * b },
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 2, out_channels: 4 * b },
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 4, out_channels: 4 * b },
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 8, out_channels: 4 * b },
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 16, out_channels: 4 * b },
            LayerDesc::Attention,
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 1, out_channels: 4 * b },
            LayerDesc::Upsample,
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 1, out_channels: 2 * b },
            LayerDesc::Upsample,
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 1, out_channels: b },
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 1, out_channels: b / 2 },
            LayerDesc::GatedConv { kernel: 3, stride: 1, dilation: 1, out_channels: 3 },
        ];
        GeneratorConfig {
            base_channels,
            input_channels: GENERATOR_INPUT_CHANNELS,
            shift_mode,
            shift_fraction: ChannelFraction::default(),
            attention_reduction: 8,
            leaky_slope: 0.2,
            layer_plan: plan,
        }
    }

    pub fn gated_conv_count(&self) -> usize {
        self.layer_plan
            .iter()
            .filter(|l| matches!(l, LayerDesc::GatedConv { .. }))
            .count()
    }

    /// Enforce the architecture contract: exactly 13 gated convs, a 5x5
    /// stem, 4x4/stride-2 down-sampling, the dilation ladder 2-4-8-16, 3x3
    /// everywhere else, and a 3-channel output.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parameter(format!("generator config: {msg}")));
        if self.base_channels < 2 || self.base_channels % 2 != 0 {
            return fail(format!("base_channels must be even and >= 2, got {}", self.base_channels));
        }
        let convs: Vec<_> = self
            .layer_plan
            .iter()
            .filter_map(|l| match l {
                LayerDesc::GatedConv { kernel, stride, dilation, out_channels } => {
                    Some((*kernel, *stride, *dilation, *out_channels))
                }
                _ => None,
            })
            .collect();
        if convs.len() != GATED_CONV_COUNT {
            return fail(format!("expected {GATED_CONV_COUNT} gated convs, found {}", convs.len()));
        }
        if convs[0].0 != 5 || convs[0].1 != 1 {
            return fail("first layer must be a stride-1 5x5 conv".into());
        }
        for (i, &(k, s, d, _)) in convs.iter().enumerate().skip(1) {
            match (k, s) {
                (4, 2) => {}
                (3, 1) => {}
                _ => return fail(format!("conv {i} must be 4x4/s2 or 3x3/s1, got {k}x{k}/s{s}")),
            }
            if k == 4 && d != 1 {
                return fail(format!("down-sampling conv {i} cannot dilate"));
            }
        }
        let mut dilations: Vec<usize> = convs.iter().map(|c| c.2).filter(|&d| d > 1).collect();
        dilations.sort_unstable();
        if dilations != [2, 4, 8, 16] {
            return fail(format!("dilation ladder must be exactly {{2, 4, 8, 16}}, got {dilations:?}"));
        }
        if convs.last().unwrap().3 != 3 {
            return fail("final conv must emit 3 channels".into());
        }
        let down_count =
            self.layer_plan.iter().filter(|l| matches!(l, LayerDesc::GatedConv { stride: 2, .. })).count();
        let up_count = self.layer_plan.iter().filter(|l| matches!(l, LayerDesc::Upsample)).count();
        if down_count != up_count {
            return fail(format!("{down_count} down-samplings vs {up_count} up-samplings"));
        }
        Ok(())
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::with_base(32, ShiftMode::Offline)
    }
}

enum Stage {
    Conv(GatedTsmConv),
    Attention(SelfAttention),
    Upsample,
}

pub struct Generator {
    config: GeneratorConfig,
    stages: Vec<Stage>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::with_capacity(config.layer_plan.len());
        let mut channels = config.input_channels;
        for desc in &config.layer_plan {
            match *desc {
                LayerDesc::GatedConv { kernel, stride, dilation, out_channels } => {
                    let kernels = LearnableShiftKernels::tsm_init(
                        channels,
                        config.shift_mode,
                        config.shift_fraction,
                    );
                    stages.push(Stage::Conv(GatedTsmConv::new(
                        &mut rng,
                        channels,
                        out_channels,
                        kernel,
                        stride,
                        dilation,
                        ShiftKind::Learnable(kernels),
                        config.leaky_slope,
                    )));
                    channels = out_channels;
                }
                LayerDesc::Attention => {
                    if channels % config.attention_reduction != 0 {
                        return Err(Error::Parameter(format!(
                            "attention reduction {} does not divide {channels} channels",
                            config.attention_reduction
                        )));
                    }
                    stages.push(Stage::Attention(SelfAttention::new(
                        &mut rng,
                        channels,
                        config.attention_reduction,
                    )));
                }
                LayerDesc::Upsample => stages.push(Stage::Upsample),
            }
        }
        Ok(Generator { config, stages })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn gated_conv_count(&self) -> usize {
        self.stages.iter().filter(|s| matches!(s, Stage::Conv(_))).count()
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("g", &mut |_, t| n += t.len());
        n
    }

    /// Raw generator pass: `[T, 8, H, W]` in, `[T, 3, H, W]` tanh output.
    pub fn forward(&self, input: &Var, binder: &mut ParamBinder, prefix: &str) -> Result<Var> {
        let s = input.shape();
        if s.len() != 4 || s[1] != self.config.input_channels {
            return Err(Error::Data(format!(
                "generator expects [T, {}, H, W], got {s:?}",
                self.config.input_channels
            )));
        }
        let (h, w) = (s[2], s[3]);
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Parameter(format!(
                "frame size {h}x{w} must be a multiple of 4 (two stride-2 halvings)"
            )));
        }
        let mut x = input.clone();
        let (mut conv_idx, mut attn_idx) = (0usize, 0usize);
        for stage in &self.stages {
            match stage {
                Stage::Conv(layer) => {
                    let (eh, ew) = layer.out_hw(x.shape()[2], x.shape()[3]);
                    x = layer.forward(&x, binder, &format!("{prefix}.conv{conv_idx:02}"));
                    debug_assert_eq!((x.shape()[2], x.shape()[3]), (eh, ew));
                    conv_idx += 1;
                }
                Stage::Attention(layer) => {
                    x = layer.forward(&x, binder, &format!("{prefix}.attn{attn_idx}"));
                    attn_idx += 1;
                }
                Stage::Upsample => x = x.upsample2x(),
            }
        }
        Ok(x.tanh())
    }

    /// Assemble + forward + composite with frozen parameters.
    pub fn inpaint(&self, sample: &InpaintingSample) -> Result<FrameSequence> {
        let input = Var::constant(assemble_input(sample)?);
        let mut binder = ParamBinder::frozen();
        let raw = self.forward(&input, &mut binder, "g")?;
        let raw = FrameSequence::from_clip(raw.value(), sample.ground_truth.frame_rate)?;
        composite(&raw, sample)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        let (mut conv_idx, mut attn_idx) = (0usize, 0usize);
        for stage in &self.stages {
            match stage {
                Stage::Conv(layer) => {
                    layer.visit(&format!("{prefix}.conv{conv_idx:02}"), f);
                    conv_idx += 1;
                }
                Stage::Attention(layer) => {
                    layer.visit(&format!("{prefix}.attn{attn_idx}"), f);
                    attn_idx += 1;
                }
                Stage::Upsample => {}
            }
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        let (mut conv_idx, mut attn_idx) = (0usize, 0usize);
        for stage in &mut self.stages {
            match stage {
                Stage::Conv(layer) => {
                    layer.visit_mut(&format!("{prefix}.conv{conv_idx:02}"), f);
                    conv_idx += 1;
                }
                Stage::Attention(layer) => {
                    layer.visit_mut(&format!("{prefix}.attn{attn_idx}"), f);
                    attn_idx += 1;
                }
                Stage::Upsample => {}
            }
        }
    }
}

/// Mask `[T, H, W]` replicated across `c` channels as `[T, c, H, W]`.
pub fn mask_clip(masks: &crate::video_data::MaskSequence, channels: usize) -> Tensor {
    let (t, h, w) = (masks.len(), masks.height(), masks.width());
    let d = masks.tensor().data();
    let mut out = vec![0.0; t * channels * h * w];
    for ti in 0..t {
        for c in 0..channels {
            let dst = (ti * channels + c) * h * w;
            out[dst..dst + h * w].copy_from_slice(&d[ti * h * w..(ti + 1) * h * w]);
        }
    }
    Tensor::new(vec![t, channels, h, w], out)
}

/// Per-frame channel concatenation of `[masked RGB | mask | landmarks |
/// reference RGB]`, the reference broadcast to every frame: `[T, 8, H, W]`.
pub fn assemble_input(sample: &InpaintingSample) -> Result<Tensor> {
    let (t, h, w) = (
        sample.ground_truth.len(),
        sample.ground_truth.height(),
        sample.ground_truth.width(),
    );
    let masked = sample.masked_frames.to_clip();
    let mask = sample.masks.tensor();
    let lmk = sample.landmarks.tensor();
    let hw = h * w;

    // reference [H, W, 3] -> channel-first planes
    let mut ref_planes = vec![0.0; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                ref_planes[c * hw + y * w + x] = sample.reference.data()[(y * w + x) * 3 + c];
            }
        }
    }

    let mut out = vec![0.0; t * GENERATOR_INPUT_CHANNELS * hw];
    for ti in 0..t {
        let base = ti * GENERATOR_INPUT_CHANNELS * hw;
        out[base..base + 3 * hw].copy_from_slice(&masked.data()[ti * 3 * hw..(ti + 1) * 3 * hw]);
        out[base + 3 * hw..base + 4 * hw].copy_from_slice(&mask.data()[ti * hw..(ti + 1) * hw]);
        out[base + 4 * hw..base + 5 * hw].copy_from_slice(&lmk.data()[ti * hw..(ti + 1) * hw]);
        out[base + 5 * hw..base + 8 * hw].copy_from_slice(&ref_planes);
    }
    Ok(Tensor::new(vec![t, GENERATOR_INPUT_CHANNELS, h, w], out))
}

/// Paste generated pixels inside the mask, copy the input elsewhere:
/// `out = mask * raw + (1 - mask) * masked_frames`. Unoccluded pixels are
/// bit-exact copies.
pub fn composite(raw: &FrameSequence, sample: &InpaintingSample) -> Result<FrameSequence> {
    let (t, h, w) = (raw.len(), raw.height(), raw.width());
    if (t, h, w)
        != (sample.ground_truth.len(), sample.ground_truth.height(), sample.ground_truth.width())
    {
        return Err(Error::Data("raw output and sample disagree on shape".into()));
    }
    let mask = sample.masks.tensor().data();
    let masked = sample.masked_frames.tensor().data();
    let rd = raw.tensor().data();
    let mut out = vec![0.0; rd.len()];
    for i in 0..t * h * w {
        let src = if mask[i] == 1.0 { rd } else { masked };
        out[i * 3..i * 3 + 3].copy_from_slice(&src[i * 3..i * 3 + 3]);
    }
    FrameSequence::new(Tensor::new(vec![t, h, w, 3], out), raw.frame_rate)
}

/// Differentiable compositing for training: `raw` is a `[T, 3, H, W]` graph
/// value; mask and masked frames enter as constants.
pub fn composite_var(raw: &Var, sample: &InpaintingSample) -> Var {
    let mask = Var::constant(mask_clip(&sample.masks, 3));
    let keep = mask.neg().add_scalar(1.0);
    let masked = Var::constant(sample.masked_frames.to_clip());
    raw.mul(&mask).add(&masked.mul(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad;
    use crate::video_data::{
        build_sample, generate_moving_mask, render_synthetic_video, ReferencePolicy,
        DEFAULT_LANDMARK_SIGMA,
    };

    fn sample(t: usize, hw: usize, seed: u64) -> InpaintingSample {
        let (gt, lm) = render_synthetic_video(seed, 0, t, (hw, hw)).unwrap();
        let masks = generate_moving_mask(seed + 1, t, (hw, hw), (0.25, 0.4), 3).unwrap();
        build_sample(&gt, &masks, &lm, DEFAULT_LANDMARK_SIGMA, ReferencePolicy::Training).unwrap()
    }

    fn tiny_generator(mode: ShiftMode, seed: u64) -> Generator {
        Generator::new(GeneratorConfig::with_base(4, mode), seed).unwrap()
    }

    #[test]
    fn default_config_is_valid_and_counts_13() {
        let cfg = GeneratorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.gated_conv_count(), GATED_CONV_COUNT);
        let g = Generator::new(GeneratorConfig::with_base(4, ShiftMode::Offline), 0).unwrap();
        assert_eq!(g.gated_conv_count(), 13);
        assert!(g.parameter_count() > 0);
    }

    #[test]
    fn config_validation_rejects_bad_plans() {
        let mut cfg = GeneratorConfig::with_base(4, ShiftMode::Offline);
        cfg.layer_plan.remove(0);
        assert!(cfg.validate().is_err());

        let mut cfg = GeneratorConfig::with_base(4, ShiftMode::Offline);
        if let LayerDesc::GatedConv { dilation, .. } = &mut cfg.layer_plan[5] {
            *dilation = 3;
        }
        assert!(cfg.validate().is_err());

        let mut cfg = GeneratorConfig::with_base(4, ShiftMode::Offline);
        if let LayerDesc::GatedConv { kernel, .. } = &mut cfg.layer_plan[0] {
            *kernel = 3;
        }
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn assemble_input_channel_layout() {
        let s = sample(4, 64, 3);
        let input = assemble_input(&s).unwrap();
        assert_eq!(input.shape(), &[4, 8, 64, 64]);
        let hw = 64 * 64;
        // mask channel is exactly 0/1
        for ti in 0..4 {
            let base = ti * 8 * hw;
            for &v in &input.data()[base + 3 * hw..base + 4 * hw] {
                assert!(v == 0.0 || v == 1.0);
            }
        }
        // reference channels identical across frames
        let ref0 = &input.data()[5 * hw..8 * hw];
        for ti in 1..4 {
            let base = ti * 8 * hw;
            assert_eq!(&input.data()[base + 5 * hw..base + 8 * hw], ref0);
        }
    }

    #[test]
    fn forward_shape_range_and_determinism() {
        let g = tiny_generator(ShiftMode::Offline, 11);
        let s = sample(3, 16, 5);
        let input = Var::constant(assemble_input(&s).unwrap());
        let mut b = ParamBinder::frozen();
        let out = g.forward(&input, &mut b, "g").unwrap();
        assert_eq!(out.shape(), &[3, 3, 16, 16]);
        assert!(out.value().data().iter().all(|&v| v > -1.0 && v < 1.0));

        // same seed, fresh generator, same input => bit-identical
        let g2 = tiny_generator(ShiftMode::Offline, 11);
        let mut b2 = ParamBinder::frozen();
        let out2 = g2.forward(&input, &mut b2, "g").unwrap();
        assert_eq!(out.value(), out2.value());
    }

    #[test]
    fn forward_rejects_bad_sizes() {
        let g = tiny_generator(ShiftMode::Offline, 1);
        let input = Var::constant(Tensor::zeros(vec![2, 8, 18, 18]));
        assert!(matches!(
            g.forward(&input, &mut ParamBinder::frozen(), "g"),
            Err(Error::Parameter(_))
        ));
        let input = Var::constant(Tensor::zeros(vec![2, 5, 16, 16]));
        assert!(matches!(
            g.forward(&input, &mut ParamBinder::frozen(), "g"),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn online_generator_is_causal() {
        let g = tiny_generator(ShiftMode::Online, 7);
        let s = sample(4, 16, 9);
        let input = assemble_input(&s).unwrap();
        let mut perturbed = input.data().to_vec();
        let frame = input.len() / 4;
        for v in &mut perturbed[3 * frame..] {
            *v = (*v * 0.3 + 0.21).clamp(-0.99, 0.99);
        }
        let pert = Tensor::new(input.shape().to_vec(), perturbed);

        let mut b1 = ParamBinder::frozen();
        let mut b2 = ParamBinder::frozen();
        let a = g.forward(&Var::constant(input), &mut b1, "g").unwrap();
        let b = g.forward(&Var::constant(pert), &mut b2, "g").unwrap();
        let out_frame = a.value().len() / 4;
        let diff: f64 = a.value().data()[..3 * out_frame]
            .iter()
            .zip(&b.value().data()[..3 * out_frame])
            .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()));
        assert_eq!(diff, 0.0, "online generator leaked future frames");
    }

    #[test]
    fn single_frame_clip_matches_across_modes() {
        // With T = 1 the zero padding silences every temporal tap, so given
        // identical parameters the two modes coincide exactly. "Identical"
        // means equal past/present taps; online has no future column.
        let offline = tiny_generator(ShiftMode::Offline, 13);
        let mut online = tiny_generator(ShiftMode::Online, 13);

        let mut offline_params = std::collections::HashMap::new();
        offline.visit("g", &mut |name, t| {
            offline_params.insert(name, t.clone());
        });
        online.visit_mut("g", &mut |name, t| {
            let src = &offline_params[&name];
            if name.ends_with("shift_taps") {
                let c = src.dim(0);
                let trimmed: Vec<f64> =
                    (0..c).flat_map(|ch| [src.data()[ch * 3], src.data()[ch * 3 + 1]]).collect();
                *t = Tensor::new(vec![c, 2], trimmed);
            } else {
                *t = src.clone();
            }
        });

        let s = sample(1, 16, 13);
        let input = Var::constant(assemble_input(&s).unwrap());
        let a = offline.forward(&input, &mut ParamBinder::frozen(), "g").unwrap();
        let b = online.forward(&input, &mut ParamBinder::frozen(), "g").unwrap();
        assert!(a.value().max_abs_diff(b.value()) < 1e-12);
    }

    #[test]
    fn composite_trivial_and_mixed() {
        let s = sample(3, 16, 21);
        let (raw, _) = render_synthetic_video(99, 1, 3, (16, 16)).unwrap();

        // all-ones mask: output == raw
        let mut all_on = s.clone();
        let ones = crate::video_data::MaskSequence::new(
            Tensor::full(vec![3, 16, 16], 1.0),
            crate::video_data::MotionKind::Moving,
        )
        .unwrap();
        all_on.masks = ones;
        assert_eq!(composite(&raw, &all_on).unwrap().tensor(), raw.tensor());

        // mixed mask: pixelwise blend oracle
        let out = composite(&raw, &s).unwrap();
        let m = s.masks.tensor().data();
        for i in 0..3 * 16 * 16 {
            for c in 0..3 {
                let expect = if m[i] == 1.0 {
                    raw.tensor().data()[i * 3 + c]
                } else {
                    s.masked_frames.tensor().data()[i * 3 + c]
                };
                assert_eq!(out.tensor().data()[i * 3 + c], expect);
            }
        }
    }

    #[test]
    fn composite_zero_mask_returns_ground_truth() {
        let (gt, lm) = render_synthetic_video(31, 0, 2, (16, 16)).unwrap();
        let zeros = crate::video_data::MaskSequence::new(
            Tensor::zeros(vec![2, 16, 16]),
            crate::video_data::MotionKind::Moving,
        )
        .unwrap();
        let s = build_sample(&gt, &zeros, &lm, DEFAULT_LANDMARK_SIGMA, ReferencePolicy::Training)
            .unwrap();
        let (raw, _) = render_synthetic_video(32, 1, 2, (16, 16)).unwrap();
        let out = composite(&raw, &s).unwrap();
        assert_eq!(out.tensor(), gt.tensor());
    }

    #[test]
    fn composite_var_matches_composite() {
        let s = sample(2, 16, 41);
        let (raw, _) = render_synthetic_video(42, 1, 2, (16, 16)).unwrap();
        let graph = composite_var(&Var::constant(raw.to_clip()), &s);
        let plain = composite(&raw, &s).unwrap();
        assert!(graph.value().max_abs_diff(&plain.to_clip()) < 1e-15);
    }

    #[test]
    fn inpaint_preserves_unmasked_pixels_bit_exactly() {
        let g = tiny_generator(ShiftMode::Offline, 17);
        let s = sample(2, 16, 23);
        let out = g.inpaint(&s).unwrap();
        let m = s.masks.tensor().data();
        for i in 0..2 * 16 * 16 {
            if m[i] == 0.0 {
                for c in 0..3 {
                    assert_eq!(
                        out.tensor().data()[i * 3 + c],
                        s.ground_truth.tensor().data()[i * 3 + c]
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_reach_every_parameter() {
        let g = tiny_generator(ShiftMode::Offline, 29);
        let s = sample(2, 8, 31);
        let input = Var::constant(assemble_input(&s).unwrap());
        let mut binder = ParamBinder::trainable();
        let out = g.forward(&input, &mut binder, "g").unwrap();
        let target = Var::constant(s.ground_truth.to_clip());
        let loss = out.sub(&target).square().sum_all();
        let grads = grad(&loss, &binder.vars());
        for ((name, _), gv) in binder.entries().iter().zip(&grads) {
            let g_abs = gv.value().max_abs();
            if name.contains("attn") && !name.ends_with("gamma") {
                // gamma = 0 at init gates the attention branch
                continue;
            }
            assert!(g_abs > 0.0, "gradient of {name} is identically zero");
        }
        // gamma itself must receive gradient even at init
        for ((name, _), gv) in binder.entries().iter().zip(&grads) {
            if name.ends_with("gamma") {
                assert!(gv.value().max_abs() > 0.0, "{name} gradient is zero");
            }
        }
    }
}
