//! Multi-stage block translation network.
//!
//! Nine strided 3x3 feature layers (conv, batch norm, ReLU) run once over the
//! stacked triplet. Stage 1 predicts 64x64-block MVs from the last feature
//! map; every later stage concatenates an earlier feature map with
//! transposed-conv upsampled copies of the previous stage's prediction input
//! and MV output, and predicts MVs at twice the resolution.

use cbt_tensor::ops::{
    batch_norm, clamp, concat_channels, conv2d, conv_transpose2d, relu, BatchNormState, ConvSpec, ConvTransposeSpec,
    NormMode,
};
use cbt_tensor::{he_uniform, Graph, ParamSet, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mv::{check_aligned, MvField, MvFieldSet, BLOCK_SIZES, MV_CLIP};
use crate::triplet::{stack_inputs, FrameTriplet};

/// Op-count scope of the feature extraction layers.
pub const FEATURE_SCOPE: &str = "feature_extraction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayer {
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbtNetConfig {
    pub feature_layers: Vec<FeatureLayer>,
    /// Square kernel of every prediction layer.
    pub prediction_kernel: usize,
    /// Channels produced by each upsampler of the previous prediction input.
    pub upsampled_channels: usize,
    pub mv_clip: f32,
}

const DEFAULT_STRIDES: [usize; 9] = [2, 2, 2, 1, 1, 1, 2, 2, 2];
const DEFAULT_CHANNELS: [usize; 9] = [32, 32, 64, 64, 96, 96, 128, 128, 192];

impl Default for CbtNetConfig {
    fn default() -> Self {
        Self::scaled(1, 64)
    }
}

impl CbtNetConfig {
    /// Default schedule with channel counts divided by `div`.
    pub fn scaled(div: usize, upsampled_channels: usize) -> Self {
        let div = div.max(1);
        Self {
            feature_layers: DEFAULT_STRIDES
                .iter()
                .zip(DEFAULT_CHANNELS)
                .map(|(&stride, c)| FeatureLayer {
                    kernel: 3,
                    stride,
                    channels: (c / div).max(1),
                })
                .collect(),
            prediction_kernel: 5,
            upsampled_channels,
            mv_clip: MV_CLIP,
        }
    }

    /// Desk-scale preset: channels divided by 8.
    pub fn toy() -> Self {
        Self::scaled(8, 8)
    }

    pub fn validate(&self) -> Result<()> {
        let layers = &self.feature_layers;
        if layers.len() != 9 {
            return Err(invalid(
                "model config",
                format!("expected 9 feature layers, got {}", layers.len()),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.stride == 0 || l.channels == 0 {
                return Err(invalid(
                    "model config",
                    format!(
                        "feature layer {}: kernel {} stride {} channels {}",
                        i + 1,
                        l.kernel,
                        l.stride,
                        l.channels
                    ),
                ));
            }
        }
        let mut cumulative = 1;
        let mut at = Vec::with_capacity(9);
        for l in layers {
            cumulative *= l.stride;
            at.push(cumulative);
        }
        for (layer, want) in [(6, 8), (7, 16), (8, 32), (9, 64)] {
            if at[layer - 1] != want {
                return Err(invalid(
                    "model config",
                    format!(
                        "cumulative stride after layer {layer} is {}, expected {want}",
                        at[layer - 1]
                    ),
                ));
            }
        }
        if self.prediction_kernel % 2 == 0 || self.upsampled_channels == 0 {
            return Err(invalid(
                "model config",
                format!(
                    "prediction kernel {} / upsampled channels {}",
                    self.prediction_kernel, self.upsampled_channels
                ),
            ));
        }
        if !(self.mv_clip > 0.0 && self.mv_clip <= MV_CLIP) {
            return Err(invalid(
                "model config",
                format!("mv clip {} outside (0, {MV_CLIP}]", self.mv_clip),
            ));
        }
        Ok(())
    }

    fn feature_spec(&self, i: usize) -> ConvSpec {
        let l = self.feature_layers[i];
        let cin = if i == 0 { 3 } else { self.feature_layers[i - 1].channels };
        ConvSpec::square(l.kernel, l.stride, cin, l.channels)
    }

    /// Channels of the prediction-layer input of stage `s` (1-based).
    fn prediction_in(&self, s: usize) -> usize {
        if s == 1 {
            self.feature_layers[8].channels
        } else {
            self.feature_layers[9 - s].channels + self.upsampled_channels + 4
        }
    }

    fn prediction_spec(&self, s: usize) -> ConvSpec {
        ConvSpec::square(self.prediction_kernel, 1, self.prediction_in(s), 4)
    }

    fn upsample_feature_spec(&self, s: usize) -> ConvTransposeSpec {
        ConvTransposeSpec::upsample2x(self.prediction_in(s - 1), self.upsampled_channels)
    }

    fn upsample_mv_spec() -> ConvTransposeSpec {
        ConvTransposeSpec::upsample2x(4, 4)
    }

    /// Number of trainable scalars, counted from the layer specs alone.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for i in 0..9 {
            n += self.feature_spec(i).param_count() + 2 * self.feature_layers[i].channels;
        }
        for s in 1..=4 {
            n += self.prediction_spec(s).param_count();
            if s > 1 {
                n += self.upsample_feature_spec(s).param_count() + Self::upsample_mv_spec().param_count();
            }
        }
        n
    }
}

/// Network parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CbtNet<T: Scalar = f32> {
    pub config: CbtNetConfig,
    pub params: ParamSet<T>,
    pub bn: Vec<BatchNormState<T>>,
}

/// Per-stage MV outputs, coarsest first, each `N x 4 x H/S x W/S`.
pub type StageOutputs = [Var; 4];

impl<T: Scalar> CbtNet<T> {
    /// He-uniform conv weights, zero biases, unit batch-norm scale.
    pub fn new(config: CbtNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut bn = Vec::with_capacity(9);
        for i in 0..9 {
            let spec = config.feature_spec(i);
            let c = spec.out_channels;
            let [_, cin, kh, kw] = spec.weight_dims();
            params.push(
                format!("feat{}.weight", i + 1),
                he_uniform(&spec.weight_dims(), cin * kh * kw, &mut rng),
            );
            params.push(format!("feat{}.bias", i + 1), Tensor::zeros(&[c]));
            params.push(format!("feat{}.bn.gamma", i + 1), Tensor::ones(&[c]));
            params.push(format!("feat{}.bn.beta", i + 1), Tensor::zeros(&[c]));
            bn.push(BatchNormState::new(c));
        }
        for s in 1..=4 {
            if s > 1 {
                for (tag, spec) in [
                    ("up_feat", config.upsample_feature_spec(s)),
                    ("up_mv", CbtNetConfig::upsample_mv_spec()),
                ] {
                    // Each output pixel of a stride-2, kernel-4 transposed conv
                    // receives 2x2 taps per input channel.
                    let fan_in = spec.in_channels * (spec.kernel / spec.stride).pow(2);
                    params.push(
                        format!("stage{s}.{tag}.weight"),
                        he_uniform(&spec.weight_dims(), fan_in, &mut rng),
                    );
                    params.push(format!("stage{s}.{tag}.bias"), Tensor::zeros(&[spec.out_channels]));
                }
            }
            let spec = config.prediction_spec(s);
            let [_, cin, kh, kw] = spec.weight_dims();
            params.push(
                format!("stage{s}.pred.weight"),
                he_uniform(&spec.weight_dims(), cin * kh * kw, &mut rng),
            );
            params.push(format!("stage{s}.pred.bias"), Tensor::zeros(&[4]));
        }
        Ok(Self { config, params, bn })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<U: Scalar>(&self) -> CbtNet<U> {
        let mut params = ParamSet::new();
        for (name, t) in self.params.iter() {
            params.push(name, t.cast());
        }
        CbtNet {
            config: self.config.clone(),
            params,
            bn: self
                .bn
                .iter()
                .map(|s| BatchNormState {
                    running_mean: s.running_mean.cast(),
                    running_var: s.running_var.cast(),
                    momentum: U::from_f64_lossy(s.momentum.to_f64_lossy()),
                    epsilon: U::from_f64_lossy(s.epsilon.to_f64_lossy()),
                })
                .collect(),
        }
    }

    /// Places every parameter on `g` as a trainable leaf, in parameter order.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|(_, t)| g.param(t.clone())).collect()
    }

    /// Runs the network on an `N x 3 x H x W` input (R_P, Q, R_F) with `H`
    /// and `W` multiples of 64. `vars` come from [`CbtNet::bind`]. In train
    /// mode the batch-norm running statistics are updated.
    pub fn forward_graph(
        &mut self,
        g: &mut Graph<T>,
        vars: &[Var],
        input: Var,
        mode: NormMode,
    ) -> Result<StageOutputs> {
        forward(&self.config, &mut self.bn, g, vars, input, mode)
    }
}

/// Network forward pass with explicit batch-norm state; see [`CbtNet::forward_graph`].
pub fn forward<T: Scalar>(
    config: &CbtNetConfig,
    bn: &mut [BatchNormState<T>],
    g: &mut Graph<T>,
    vars: &[Var],
    input: Var,
    mode: NormMode,
) -> Result<StageOutputs> {
    let (_, c, h, w) = g.value(input).nchw("cbtnet forward")?;
    if c != 3 {
        return Err(invalid("cbtnet forward", format!("expected 3 input channels, got {c}")));
    }
    check_aligned(w, h, "cbtnet forward")?;
    if vars.len() != 36 + 2 + 3 * 6 || bn.len() != 9 {
        return Err(invalid(
            "cbtnet forward",
            format!("{} bound variables and {} norm states", vars.len(), bn.len()),
        ));
    }
    let cfg = config;
    let feats = g.scoped(FEATURE_SCOPE, |g| -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(9);
        let mut x = input;
        for (i, state) in bn.iter_mut().enumerate() {
            let p = &vars[4 * i..4 * i + 4];
            x = conv2d(g, x, p[0], p[1], &cfg.feature_spec(i))?;
            x = batch_norm(g, x, p[2], p[3], state, mode)?;
            x = relu(g, x)?;
            feats.push(x);
        }
        Ok(feats)
    })?;
    let clip = T::from_f64_lossy(f64::from(cfg.mv_clip));
    g.scoped("prediction", |g| -> Result<StageOutputs> {
        let mut k = 36;
        let mut pin = feats[8];
        let mut m = conv2d(g, pin, vars[k], vars[k + 1], &cfg.prediction_spec(1))?;
        m = clamp(g, m, -clip, clip)?;
        k += 2;
        let mut outs = [m; 4];
        for s in 2..=4 {
            let up_f = conv_transpose2d(g, pin, vars[k], vars[k + 1], &cfg.upsample_feature_spec(s))?;
            let up_m = conv_transpose2d(g, m, vars[k + 2], vars[k + 3], &CbtNetConfig::upsample_mv_spec())?;
            pin = concat_channels(g, &[feats[9 - s], up_f, up_m])?;
            m = conv2d(g, pin, vars[k + 4], vars[k + 5], &cfg.prediction_spec(s))?;
            m = clamp(g, m, -clip, clip)?;
            k += 6;
            outs[s - 1] = m;
        }
        Ok(outs)
    })
}

impl CbtNet<f32> {
    /// Eval-mode MV prediction for one triplet.
    pub fn predict(&self, triplet: &FrameTriplet) -> Result<MvFieldSet> {
        // Eval mode never touches the running statistics; a copy keeps the
        // model shareable.
        let mut bn = self.bn.clone();
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|(_, t)| g.constant(t.clone())).collect();
        let input = g.constant(stack_inputs(&[triplet])?);
        let outs = forward(&self.config, &mut bn, &mut g, &vars, input, NormMode::Eval)?;
        let mut set = MvFieldSet::zeros(triplet.width(), triplet.height())?;
        for (i, &v) in outs.iter().enumerate() {
            set.fields[i] = MvField::from_tensor(g.value(v), 0, BLOCK_SIZES[i])?;
        }
        Ok(set)
    }
}
