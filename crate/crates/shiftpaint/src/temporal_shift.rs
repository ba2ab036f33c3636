//! Temporal shifting of feature-map channels.
//!
//! A shift gives per-frame 2-D convolutions a temporal receptive field for
//! free: a slice of channels is replaced by the same channels from the
//! previous frame (and, offline, another slice from the next frame). Clip
//! boundaries are zero-padded, so online mode is *exactly* causal: frame `t`
//! of the output never reads anything later than frame `t` of the input.
//!
//! Both the fixed shift and the learnable per-channel variant live here;
//! the gated convolution blocks in [`crate::neural_blocks`] wrap them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Temporal direction policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftMode {
    /// Bidirectional: channels may look one frame back and one forward.
    Offline,
    /// Causal: channels may look one frame back only.
    Online,
}

/// Exact per-direction share of channels to shift, as a rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelFraction {
    pub num: u32,
    pub den: u32,
}

impl ChannelFraction {
    /// Requires `0 < num/den <= 1/2`.
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || 2 * num > den {
            return Err(Error::Parameter(format!(
                "shift fraction must satisfy 0 < num/den <= 1/2, got {num}/{den}"
            )));
        }
        Ok(ChannelFraction { num, den })
    }

    /// `floor(fraction * channels)`.
    pub fn count(&self, channels: usize) -> usize {
        channels * self.num as usize / self.den as usize
    }
}

impl Default for ChannelFraction {
    fn default() -> Self {
        ChannelFraction { num: 1, den: 8 }
    }
}

/// Fixed shift: which mode and how many channels per direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub mode: ShiftMode,
    pub fraction: ChannelFraction,
}

impl ShiftSpec {
    pub fn new(mode: ShiftMode, fraction: ChannelFraction) -> Self {
        ShiftSpec { mode, fraction }
    }

    pub fn offline() -> Self {
        ShiftSpec { mode: ShiftMode::Offline, fraction: ChannelFraction::default() }
    }

    pub fn online() -> Self {
        ShiftSpec { mode: ShiftMode::Online, fraction: ChannelFraction::default() }
    }
}

/// Shift a `[T, C, H, W]` clip's channels to their temporal neighbours.
///
/// With `k = floor(fraction * C)`:
/// - offline: channels `[0, k)` take frame `t-1`, `[k, 2k)` take `t+1`,
///   the rest are copied;
/// - online: channels `[0, k)` take frame `t-1`, the rest are copied.
///
/// Out-of-range neighbours are zeros.
pub fn temporal_shift(x: &Var, spec: &ShiftSpec) -> Var {
    let c = x.shape()[1];
    let k = spec.fraction.count(c);
    if k == 0 {
        return x.clone();
    }
    let past = x.slice(1, 0, k).time_shift(1);
    match spec.mode {
        ShiftMode::Offline => {
            let future = x.slice(1, k, k).time_shift(-1);
            let rest = x.slice(1, 2 * k, c - 2 * k);
            concat(1, &[past, future, rest])
        }
        ShiftMode::Online => {
            let rest = x.slice(1, k, c - k);
            concat(1, &[past, rest])
        }
    }
}

/// Learnable per-channel temporal taps `[past, present, future]`.
///
/// In online mode the future tap is structurally absent, not merely zero:
/// only the past and present columns are stored and trained, so no update
/// can ever leak future frames in.
#[derive(Clone, Debug)]
pub struct LearnableShiftKernels {
    /// `[C, 3]` offline, `[C, 2]` online (columns: past, present[, future]).
    taps: Tensor,
    mode: ShiftMode,
}

impl LearnableShiftKernels {
    /// Build from a full `[C, 3]` tap matrix.
    ///
    /// Online construction rejects any nonzero future tap.
    pub fn new(taps: Tensor, mode: ShiftMode) -> Result<Self> {
        if taps.rank() != 2 || taps.dim(1) != 3 {
            return Err(Error::Parameter(format!(
                "learnable shift taps must be [C, 3], got {:?}",
                taps.shape()
            )));
        }
        if !taps.all_finite() {
            return Err(Error::Parameter("learnable shift taps must be finite".into()));
        }
        let c = taps.dim(0);
        match mode {
            ShiftMode::Offline => Ok(LearnableShiftKernels { taps, mode }),
            ShiftMode::Online => {
                for ch in 0..c {
                    let future = taps.data()[ch * 3 + 2];
                    if future != 0.0 {
                        return Err(Error::Parameter(format!(
                            "online shift kernels must have zero future taps; channel {ch} has {future}"
                        )));
                    }
                }
                let trimmed: Vec<f64> = (0..c)
                    .flat_map(|ch| [taps.data()[ch * 3], taps.data()[ch * 3 + 1]])
                    .collect();
                Ok(LearnableShiftKernels { taps: Tensor::new(vec![c, 2], trimmed), mode })
            }
        }
    }

    /// Identity kernels with the leading `fraction` of channels initialized
    /// to the fixed-shift pattern (past group, then — offline — a future
    /// group), mirroring what [`temporal_shift`] does at startup.
    pub fn tsm_init(channels: usize, mode: ShiftMode, fraction: ChannelFraction) -> Self {
        let k = fraction.count(channels);
        let cols = match mode {
            ShiftMode::Offline => 3,
            ShiftMode::Online => 2,
        };
        let mut taps = vec![0.0; channels * cols];
        for ch in 0..channels {
            let group_past = ch < k;
            let group_future = mode == ShiftMode::Offline && ch >= k && ch < 2 * k;
            if group_past {
                taps[ch * cols] = 1.0;
            } else if group_future {
                taps[ch * cols + 2] = 1.0;
            } else {
                taps[ch * cols + 1] = 1.0;
            }
        }
        LearnableShiftKernels { taps: Tensor::new(vec![channels, cols], taps), mode }
    }

    pub fn mode(&self) -> ShiftMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.taps.dim(0)
    }

    /// Raw tap storage (`[C, 3]` offline, `[C, 2]` online).
    pub fn taps(&self) -> &Tensor {
        &self.taps
    }

    pub fn set_taps(&mut self, taps: Tensor) -> Result<()> {
        if taps.shape() != self.taps.shape() {
            return Err(Error::Parameter(format!(
                "tap shape {:?} does not match existing {:?}",
                taps.shape(),
                self.taps.shape()
            )));
        }
        self.taps = taps;
        Ok(())
    }

    /// Taps expanded to a dense `[C, 3]` matrix (future column zero online).
    pub fn taps_full(&self) -> Tensor {
        match self.mode {
            ShiftMode::Offline => self.taps.clone(),
            ShiftMode::Online => {
                let c = self.channels();
                let mut full = vec![0.0; c * 3];
                for ch in 0..c {
                    full[ch * 3] = self.taps.data()[ch * 2];
                    full[ch * 3 + 1] = self.taps.data()[ch * 2 + 1];
                }
                Tensor::new(vec![c, 3], full)
            }
        }
    }
}

/// Apply learnable taps: `out[t,c] = k0[c] x[t-1,c] + k1[c] x[t,c] + k2[c] x[t+1,c]`
/// with zero temporal padding. `taps` must be a graph var shaped like
/// [`LearnableShiftKernels::taps`] so the taps themselves receive gradients.
pub fn learnable_shift(x: &Var, taps: &Var, mode: ShiftMode) -> Var {
    let c = x.shape()[1];
    assert_eq!(
        taps.shape()[0],
        c,
        "tap channel count {} does not match clip channels {c}",
        taps.shape()[0]
    );
    let cols = taps.shape()[1];
    let past = taps.slice(1, 0, 1).reshape(&[c]);
    let present = taps.slice(1, 1, 1).reshape(&[c]);
    let shape = x.shape().to_vec();
    let mut out = x
        .time_shift(1)
        .mul(&past.broadcast_channel(&shape))
        .add(&x.mul(&present.broadcast_channel(&shape)));
    if mode == ShiftMode::Offline {
        assert_eq!(cols, 3, "offline learnable shift expects [C, 3] taps");
        let future = taps.slice(1, 2, 1).reshape(&[c]);
        out = out.add(&x.time_shift(-1).mul(&future.broadcast_channel(&shape)));
    } else {
        assert_eq!(cols, 2, "online learnable shift expects [C, 2] taps");
    }
    out
}

/// Convenience wrapper evaluating [`learnable_shift`] on plain tensors.
pub fn learnable_shift_tensor(x: &Tensor, kernels: &LearnableShiftKernels) -> Tensor {
    let out = learnable_shift(
        &Var::constant(x.clone()),
        &Var::constant(kernels.taps().clone()),
        kernels.mode(),
    );
    out.value().clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad;
    use crate::numcheck::{fixture, max_grad_rel_err};

    /// Triple-loop reference for the fixed shift.
    pub(crate) fn fixed_shift_loop(x: &Tensor, spec: &ShiftSpec) -> Tensor {
        let s = x.shape();
        let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
        let k = spec.fraction.count(c);
        let hw = h * w;
        let mut out = vec![0.0; x.len()];
        for ti in 0..t as i64 {
            for ci in 0..c {
                let src_t = if ci < k {
                    ti - 1
                } else if spec.mode == ShiftMode::Offline && ci < 2 * k {
                    ti + 1
                } else {
                    ti
                };
                if src_t < 0 || src_t >= t as i64 {
                    continue;
                }
                let dst = (ti as usize * c + ci) * hw;
                let src = (src_t as usize * c + ci) * hw;
                out[dst..dst + hw].copy_from_slice(&x.data()[src..src + hw]);
            }
        }
        Tensor::new(s.to_vec(), out)
    }

    /// Triple-loop reference for the learnable shift.
    pub(crate) fn learnable_shift_loop(x: &Tensor, taps_full: &Tensor) -> Tensor {
        let s = x.shape();
        let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
        let hw = h * w;
        let mut out = vec![0.0; x.len()];
        for ti in 0..t as i64 {
            for ci in 0..c {
                for (tap, dt) in [(0usize, -1i64), (1, 0), (2, 1)] {
                    let src_t = ti + dt;
                    if src_t < 0 || src_t >= t as i64 {
                        continue;
                    }
                    let kv = taps_full.data()[ci * 3 + tap];
                    let dst = (ti as usize * c + ci) * hw;
                    let src = (src_t as usize * c + ci) * hw;
                    for i in 0..hw {
                        out[dst + i] += kv * x.data()[src + i];
                    }
                }
            }
        }
        Tensor::new(s.to_vec(), out)
    }

    #[test]
    fn fixed_shift_matches_spec_indices() {
        // T=3, C=8, fraction 1/8 => k=1
        let x = fixture(&[3, 8, 1, 1], 5);
        let spec = ShiftSpec::offline();
        let out = temporal_shift(&Var::constant(x.clone()), &spec);
        let o = out.value().data();
        let d = x.data();
        // out[1,0] = x[0,0]; out[1,1] = x[2,1]; out[t,c] = x[t,c] for c >= 2
        assert_eq!(o[8], d[0]);
        assert_eq!(o[9], d[17]);
        for t in 0..3 {
            for c in 2..8 {
                assert_eq!(o[t * 8 + c], d[t * 8 + c]);
            }
        }
        // boundaries zero-padded
        assert_eq!(o[0], 0.0); // out[0, 0): no past
        assert_eq!(o[2 * 8 + 1], 0.0); // out[T-1, future group): no future
    }

    #[test]
    fn fixed_shift_matches_loop_reference_on_grid() {
        for t in 1..=5 {
            for c in 1..=8 {
                for hw in [1usize, 4] {
                    for mode in [ShiftMode::Offline, ShiftMode::Online] {
                        let spec = ShiftSpec::new(mode, ChannelFraction::default());
                        let x = fixture(&[t, c, hw, hw], (t * 100 + c * 10 + hw) as u64);
                        let fast = temporal_shift(&Var::constant(x.clone()), &spec);
                        let slow = fixed_shift_loop(&x, &spec);
                        assert_eq!(fast.value(), &slow, "t={t} c={c} hw={hw} mode={mode:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn k_zero_is_identity() {
        let spec = ShiftSpec::new(ShiftMode::Offline, ChannelFraction::new(1, 8).unwrap());
        let x = fixture(&[2, 4, 2, 2], 3); // floor(4/8) = 0
        let out = temporal_shift(&Var::constant(x.clone()), &spec);
        assert_eq!(out.value(), &x);
    }

    #[test]
    fn learnable_identity_and_delay() {
        let x = fixture(&[3, 2, 2, 2], 9);
        let ident = LearnableShiftKernels::new(
            Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]),
            ShiftMode::Offline,
        )
        .unwrap();
        assert_eq!(learnable_shift_tensor(&x, &ident), x);

        let delay = LearnableShiftKernels::new(
            Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            ShiftMode::Offline,
        )
        .unwrap();
        let out = learnable_shift_tensor(&x, &delay);
        let hw = 2 * 2 * 2;
        assert!(out.data()[..hw].iter().all(|&v| v == 0.0));
        assert_eq!(&out.data()[hw..], &x.data()[..2 * hw]);
    }

    #[test]
    fn learnable_matches_loop_reference() {
        let x = fixture(&[4, 3, 2, 2], 11);
        let taps = fixture(&[3, 3], 13);
        let kern = LearnableShiftKernels::new(taps.clone(), ShiftMode::Offline).unwrap();
        let fast = learnable_shift_tensor(&x, &kern);
        let slow = learnable_shift_loop(&x, &taps);
        assert!(fast.max_abs_diff(&slow) < 1e-6);
    }

    #[test]
    fn online_rejects_nonzero_future_tap() {
        let taps = Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.1]);
        assert!(matches!(
            LearnableShiftKernels::new(taps, ShiftMode::Online),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn online_causality_is_bit_exact() {
        // Perturb frames > t; outputs at <= t must not change at all.
        let base = fixture(&[5, 4, 2, 2], 17);
        for t in 0..4usize {
            let mut perturbed = base.data().to_vec();
            let inner = base.len() / 5;
            for v in &mut perturbed[(t + 1) * inner..] {
                *v += 7.5;
            }
            let pert = Tensor::new(base.shape().to_vec(), perturbed);

            let spec = ShiftSpec::online();
            let a = temporal_shift(&Var::constant(base.clone()), &spec);
            let b = temporal_shift(&Var::constant(pert.clone()), &spec);
            assert_eq!(
                &a.value().data()[..(t + 1) * inner],
                &b.value().data()[..(t + 1) * inner]
            );

            let kern = LearnableShiftKernels::tsm_init(4, ShiftMode::Online, ChannelFraction::default());
            let la = learnable_shift_tensor(&base, &kern);
            let lb = learnable_shift_tensor(&pert, &kern);
            assert_eq!(&la.data()[..(t + 1) * inner], &lb.data()[..(t + 1) * inner]);
        }
    }

    #[test]
    fn linearity_in_input() {
        let x = fixture(&[3, 4, 2, 2], 19);
        let y = fixture(&[3, 4, 2, 2], 23);
        let (alpha, beta) = (1.7, -0.3);
        let spec = ShiftSpec::offline();
        let combo = x.zip_map(&y, |a, b| alpha * a + beta * b);
        let lhs = temporal_shift(&Var::constant(combo), &spec);
        let sx = temporal_shift(&Var::constant(x), &spec);
        let sy = temporal_shift(&Var::constant(y), &spec);
        let rhs = sx.value().zip_map(sy.value(), |a, b| alpha * a + beta * b);
        assert!(lhs.value().max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn fixed_shift_equals_learnable_with_group_kernels() {
        let x = fixture(&[4, 8, 2, 2], 29);
        let spec = ShiftSpec::offline();
        let fixed = temporal_shift(&Var::constant(x.clone()), &spec);
        let kern = LearnableShiftKernels::tsm_init(8, ShiftMode::Offline, spec.fraction);
        let learned = learnable_shift_tensor(&x, &kern);
        assert_eq!(fixed.value(), &learned);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = fixture(&[4, 3, 2, 2], 31);
        let taps = fixture(&[3, 3], 37);
        let err = max_grad_rel_err(
            &|vs| {
                let shifted = learnable_shift(&vs[0], &vs[1], ShiftMode::Offline);
                // weight by a fixed pattern so the gradient is not all-ones
                let weights = Var::constant(fixture(&[4, 3, 2, 2], 41));
                shifted.mul(&weights).sum_all()
            },
            &[x, taps],
            1e-6,
        );
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn grad_flows_to_taps() {
        let x = Var::leaf(fixture(&[3, 2, 2, 2], 43));
        let taps = Var::leaf(Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]));
        let y = learnable_shift(&x, &taps, ShiftMode::Online).square().sum_all();
        let g = grad(&y, &[taps.clone()]).remove(0);
        assert!(g.value().max_abs() > 0.0);
    }
}
