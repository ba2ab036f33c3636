//! Temporal-shift Wasserstein critic.
//!
//! Six 2-D convolutions, each preceded by a fixed offline temporal shift:
//! five 4x4/stride-2 stages and a 3x3 head, LeakyReLU between stages, then a
//! global average over time and space. The score is a raw real number — no
//! squashing — as the Wasserstein objective requires. The critic sees the
//! occlusion mask as a fourth input channel so it can attend to filled
//! regions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, conv2d, ConvMeta, Var};
use crate::error::{Error, Result};
use crate::neural_blocks::{randn, ParamBinder};
use crate::temporal_shift::{temporal_shift, ShiftSpec};
use crate::tensor::Tensor;
use crate::video_data::{FrameSequence, MaskSequence};

pub const CRITIC_CONV_COUNT: usize = 6;
pub const CRITIC_INPUT_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticLayerDesc {
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub base_channels: usize,
    pub shift: ShiftSpec,
    pub leaky_slope: f64,
    pub layer_plan: Vec<CriticLayerDesc>,
}

impl CriticConfig {
    /// Five 4x4/stride-2 stages (`c, 2c, 4c, 4c, 4c`) plus a 3x3 head.
    pub fn with_base(base_channels: usize) -> Self {
        let c = base_channels;
        CriticConfig {
            base_channels,
            shift: ShiftSpec::offline(),
            leaky_slope: 0.2,
            layer_plan: vec![
                CriticLayerDesc { kernel: 4, stride: 2, out_channels: c },
                CriticLayerDesc { kernel: 4, stride: 2, out_channels: 2 * c },
                CriticLayerDesc { kernel: 4, stride: 2, out_channels: 4 * c },
                CriticLayerDesc { kernel: 4, stride: 2, out_channels: 4 * c },
                CriticLayerDesc { kernel: 4, stride: 2, out_channels: 4 * c },
                CriticLayerDesc { kernel: 3, stride: 1, out_channels: 1 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_plan.len() != CRITIC_CONV_COUNT {
            return Err(Error::Parameter(format!(
                "critic must have exactly {CRITIC_CONV_COUNT} conv layers, got {}",
                self.layer_plan.len()
            )));
        }
        if self.layer_plan.last().unwrap().out_channels != 1 {
            return Err(Error::Parameter("critic head must emit one channel".into()));
        }
        for (i, l) in self.layer_plan.iter().enumerate() {
            if !matches!((l.kernel, l.stride), (4, 2) | (3, 1)) {
                return Err(Error::Parameter(format!(
                    "critic conv {i} must be 4x4/s2 or a 3x3/s1 head, got {}x{}/s{}",
                    l.kernel, l.kernel, l.stride
                )));
            }
        }
        Ok(())
    }
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig::with_base(32)
    }
}

pub struct Critic {
    config: CriticConfig,
    weights: Vec<(Tensor, Tensor)>,
}

impl Critic {
    pub fn new(config: CriticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(config.layer_plan.len());
        let mut channels = CRITIC_INPUT_CHANNELS;
        for desc in &config.layer_plan {
            let k = desc.kernel;
            let fan_in = (channels * k * k) as f64;
            let n = desc.out_channels * channels * k * k;
            weights.push((
                Tensor::new(
                    vec![desc.out_channels, channels, k, k],
                    randn(&mut rng, n, (2.0 / fan_in).sqrt()),
                ),
                Tensor::zeros(vec![desc.out_channels]),
            ));
            channels = desc.out_channels;
        }
        Ok(Critic { config, weights })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn conv_count(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Score a 4-channel clip already in the graph: `[T, 4, H, W] -> [1]`.
    pub fn score_clip(&self, x: &Var, binder: &mut ParamBinder, prefix: &str) -> Result<Var> {
        if x.shape().len() != 4 || x.shape()[1] != CRITIC_INPUT_CHANNELS {
            return Err(Error::Data(format!(
                "critic expects [T, {CRITIC_INPUT_CHANNELS}, H, W], got {:?}",
                x.shape()
            )));
        }
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (i, ((w, b), desc)) in self.weights.iter().zip(&self.config.layer_plan).enumerate() {
            let shifted = temporal_shift(&h, &self.config.shift);
            let meta = match desc.kernel {
                4 => ConvMeta::new(4, desc.stride, 1, 1),
                k => ConvMeta::same(k, 1),
            };
            let wv = binder.bind(&format!("{prefix}.conv{i}.w"), w);
            let bv = binder.bind(&format!("{prefix}.conv{i}.b"), b);
            let y = conv2d(&shifted, &wv, meta);
            let y = y.add(&bv.broadcast_channel(y.shape()));
            h = if i == last { y } else { y.leaky_relu(self.config.leaky_slope) };
        }
        Ok(h.mean_all())
    }

    /// Convenience scoring of raw frames + masks with frozen parameters.
    pub fn score(&self, frames: &FrameSequence, masks: &MaskSequence) -> Result<f64> {
        let x = Var::constant(critic_input(frames, masks)?);
        let mut binder = ParamBinder::frozen();
        Ok(self.score_clip(&x, &mut binder, "critic")?.item())
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, (w, b)) in self.weights.iter().enumerate() {
            f(format!("{prefix}.conv{i}.w"), w);
            f(format!("{prefix}.conv{i}.b"), b);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, (w, b)) in self.weights.iter_mut().enumerate() {
            f(format!("{prefix}.conv{i}.w"), w);
            f(format!("{prefix}.conv{i}.b"), b);
        }
    }

    /// Weight clipping for the classic WGAN constraint (used instead of the
    /// gradient penalty when configured).
    pub fn clip_weights(&mut self, c: f64) {
        for (w, b) in &mut self.weights {
            *w = w.map(|v| v.clamp(-c, c));
            *b = b.map(|v| v.clamp(-c, c));
        }
    }
}

/// Frames + mask channel as the critic's `[T, 4, H, W]` input.
pub fn critic_input(frames: &FrameSequence, masks: &MaskSequence) -> Result<Tensor> {
    if (frames.len(), frames.height(), frames.width())
        != (masks.len(), masks.height(), masks.width())
    {
        return Err(Error::Data("frame/mask shape mismatch for critic input".into()));
    }
    let clip = frames.to_clip();
    let mask = crate::generator::mask_clip(masks, 1);
    let x = concat(1, &[Var::constant(clip), Var::constant(mask)]);
    Ok(x.value().clone())
}

/// Spec-level entry point: score frames against their masks.
pub fn critic_forward(critic: &Critic, frames: &FrameSequence, masks: &MaskSequence) -> Result<f64> {
    critic.score(frames, masks)
}
