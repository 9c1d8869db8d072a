//! Channel attention: squeeze-and-excitation and efficient (1-D
//! convolutional) channel attention, plus the eight placement strategies.
//!
//! Both blocks squeeze the feature map to one value per channel, derive a
//! gate `s in (0,1)^C` from it, and rescale channels by the gate. They differ
//! in how the gate is computed: SE runs the squeezed vector through a
//! two-layer bottleneck (`sigmoid(W2 relu(W1 z))`), while the efficient
//! variant replaces the bottleneck with a single cross-channel 1-D
//! convolution so no dimensionality reduction happens.
//!
//! Inputs may be `[N,C,H,W]` or already-pooled `[N,C]`; for `[N,C]` (the
//! placement after the 1x1 tail convolution) the squeeze is the identity.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Float brings sqrt/abs/round to f64 in no_std builds; in test builds the
// inherent std methods shadow it, hence the allow.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::tensor::{Error, Result, Tensor};

/// Hidden width of the SE bottleneck: `max(1, floor(C / r))`, so small
/// channel counts at reduced width multipliers stay valid.
pub fn se_hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction).max(1)
}

/// Squeeze-and-excitation block: `y_c = sigmoid(W2 relu(W1 z))_c * x_c`.
#[derive(Debug, Clone)]
pub struct SeBlock<T: Element> {
    pub channels: usize,
    pub reduction: usize,
    /// `[hidden, C]`
    pub w1: Tensor<T>,
    /// `[C, hidden]`
    pub w2: Tensor<T>,
}

impl<T: Element> SeBlock<T> {
    /// Fresh block with `uniform(-a, a)`, `a = sqrt(1/fan_in)` weights.
    pub fn init<R: Rng>(channels: usize, reduction: usize, rng: &mut R) -> Self {
        let hidden = se_hidden_width(channels, reduction);
        let a1 = (1.0 / channels as f64).sqrt();
        let a2 = (1.0 / hidden as f64).sqrt();
        SeBlock {
            channels,
            reduction,
            w1: Tensor::uniform(rng, &[hidden, channels], -a1, a1),
            w2: Tensor::uniform(rng, &[channels, hidden], -a2, a2),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        se_forward(x, &self.w1, &self.w2)
    }
}

/// SE forward on `[N,C,H,W]` or `[N,C]` input.
pub fn se_forward<T: Element>(
    x: &Tensor<T>,
    w1: &Tensor<T>,
    w2: &Tensor<T>,
) -> Result<Tensor<T>> {
    let channels = w1.shape().last().copied().unwrap_or(0);
    let squeezed = squeeze(x, channels, "se_forward")?;
    let gate = squeezed
        .dense(w1, None)?
        .relu()?
        .dense(w2, None)?
        .sigmoid()?;
    x.scale_channels(&gate)
}

/// Efficient channel attention block: the gate comes from a cross-channel
/// 1-D convolution of the squeezed vector.
#[derive(Debug, Clone)]
pub struct EcaBlock<T: Element> {
    pub channels: usize,
    /// `[k]`, k odd
    pub kernel: Tensor<T>,
}

impl<T: Element> EcaBlock<T> {
    pub fn init<R: Rng>(channels: usize, kernel_size: usize, rng: &mut R) -> Self {
        let a = (1.0 / kernel_size as f64).sqrt();
        EcaBlock {
            channels,
            kernel: Tensor::uniform(rng, &[kernel_size], -a, a),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        eca_forward(x, &self.kernel)
    }
}

/// ECA forward on `[N,C,H,W]` or `[N,C]` input.
pub fn eca_forward<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let channels = match x.shape() {
        &[_, c] | &[_, c, _, _] => c,
        s => {
            return Err(Error::InvalidArg {
                op: "eca_forward",
                msg: format!(
                    "expected rank-2 or rank-4 input, got {}",
                    crate::tensor::fmt_shape(s)
                ),
            })
        }
    };
    let squeezed = squeeze(x, channels, "eca_forward")?;
    let gate = squeezed.conv1d_channels(kernel)?.sigmoid()?;
    x.scale_channels(&gate)
}

fn squeeze<T: Element>(x: &Tensor<T>, channels: usize, op: &'static str) -> Result<Tensor<T>> {
    match x.shape() {
        &[_, c] if c == channels => Ok(x.clone()),
        &[_, c, _, _] if c == channels => x.global_avg_pool(),
        s => Err(Error::ShapeMismatch {
            op,
            left: crate::tensor::fmt_shape(s),
            right: format!("{channels} channels"),
        }),
    }
}

/// The eight attention placement strategies: how many SE blocks follow the
/// first convolution, and which block (if any) follows the last one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionStrategy {
    Model1,
    Model2,
    Model3,
    Model4,
    Model5,
    Model6,
    Model7,
    Proposed,
}

/// Block kind used in placements and audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionKind {
    Se,
    Eca,
}

/// Resolved placement for a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionPlacement {
    /// SE blocks inserted directly after the stem convolution (0..=2).
    pub se_after_stem: usize,
    /// Block inserted after the last convolution, before the head.
    pub tail: Option<AttentionKind>,
}

impl AttentionStrategy {
    pub const ALL: [AttentionStrategy; 8] = [
        AttentionStrategy::Model1,
        AttentionStrategy::Model2,
        AttentionStrategy::Model3,
        AttentionStrategy::Model4,
        AttentionStrategy::Model5,
        AttentionStrategy::Model6,
        AttentionStrategy::Model7,
        AttentionStrategy::Proposed,
    ];

    pub fn placement(self) -> AttentionPlacement {
        use AttentionKind::*;
        let (se_after_stem, tail) = match self {
            AttentionStrategy::Model1 => (0, Some(Se)),
            AttentionStrategy::Model2 => (1, Some(Se)),
            AttentionStrategy::Model3 => (1, None),
            AttentionStrategy::Model4 => (2, Some(Se)),
            AttentionStrategy::Model5 => (0, Some(Eca)),
            AttentionStrategy::Model6 => (1, Some(Eca)),
            AttentionStrategy::Model7 => (2, None),
            AttentionStrategy::Proposed => (2, Some(Eca)),
        };
        AttentionPlacement {
            se_after_stem,
            tail,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionStrategy::Model1 => "model1",
            AttentionStrategy::Model2 => "model2",
            AttentionStrategy::Model3 => "model3",
            AttentionStrategy::Model4 => "model4",
            AttentionStrategy::Model5 => "model5",
            AttentionStrategy::Model6 => "model6",
            AttentionStrategy::Model7 => "model7",
            AttentionStrategy::Proposed => "proposed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        AttentionStrategy::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
    }
}

impl core::fmt::Display for AttentionStrategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Insert attention blocks into a bare backbone according to the strategy.
///
/// Pure: the same inputs always produce the same spec. The proposed strategy
/// yields `[stem, SE, SE, ...bnecks..., pool, tail conv, ECA, head]`.
pub fn build_strategy(
    tag: AttentionStrategy,
    backbone: &crate::backbone::NetworkSpec,
) -> crate::backbone::NetworkSpec {
    backbone.with_attention(tag)
}

/// Positions and kinds of attention blocks in a spec, for placement audits.
pub fn attention_audit(spec: &crate::backbone::NetworkSpec) -> Vec<(usize, AttentionKind, String)> {
    use crate::backbone::LayerSpec;
    spec.layers
        .iter()
        .enumerate()
        .filter_map(|(i, layer)| match layer {
            LayerSpec::SeAttention { name, .. } => Some((i, AttentionKind::Se, name.clone())),
            LayerSpec::EcaAttention { name, .. } => Some((i, AttentionKind::Eca, name.clone())),
            _ => None,
        })
        .collect()
}
