//! Configurable CNN classifier: a convolutional backbone followed by a fully
//! connected head, with explicit per-layer forward and backward passes.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ops::{self, BatchNormCache};
use super::optim::{Grads, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub const BACKBONE_PREFIX: &str = "backbone.";
pub const HEAD_PREFIX: &str = "head.";

/// 3×3 convolution (stride 1, padding 1), optional batch-norm, ReLU and
/// optional 2×2 max-pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub out_channels: usize,
    pub batch_norm: bool,
    pub pool: bool,
}

/// One fully connected layer. Hidden layers normally carry batch-norm,
/// ReLU and dropout; the final layer produces logits and carries none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub width: usize,
    pub batch_norm: bool,
    pub relu: bool,
    pub dropout: f64,
}

impl DenseSpec {
    pub fn hidden(width: usize, dropout: f64) -> Self {
        Self {
            width,
            batch_norm: true,
            relu: true,
            dropout,
        }
    }

    pub fn logits(classes: usize) -> Self {
        Self {
            width: classes,
            batch_norm: false,
            relu: false,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub input_edge: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub backbone: Vec<ConvBlockSpec>,
    pub head: Vec<DenseSpec>,
}

fn default_in_channels() -> usize {
    3
}

/// Hidden widths of the full-size classifier head.
pub const FULL_HEAD_HIDDEN: [usize; 3] = [768, 256, 128];
pub const FULL_DROPOUT: f64 = 0.5;

impl ArchitectureConfig {
    /// The desk-scale default: three conv blocks (8/16/32 channels) with
    /// batch-norm and pooling, global average pool, and a small head.
    pub fn desk(input_edge: usize, classes: usize) -> Self {
        Self {
            input_edge,
            in_channels: 3,
            backbone: [8, 16, 32]
                .into_iter()
                .map(|c| ConvBlockSpec {
                    out_channels: c,
                    batch_norm: true,
                    pool: true,
                })
                .collect(),
            head: vec![DenseSpec::hidden(32, FULL_DROPOUT), DenseSpec::logits(classes)],
        }
    }

    /// Head widths 768/256/128/classes with batch-norm, ReLU and dropout 0.5
    /// on every hidden layer.
    pub fn full_head(classes: usize) -> Vec<DenseSpec> {
        FULL_HEAD_HIDDEN
            .iter()
            .map(|&w| DenseSpec::hidden(w, FULL_DROPOUT))
            .chain(std::iter::once(DenseSpec::logits(classes)))
            .collect()
    }

    pub fn with_head(mut self, head: Vec<DenseSpec>) -> Self {
        self.head = head;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        let last = self.head.len().saturating_sub(1);
        for layer in &mut self.head[..last] {
            layer.dropout = rate;
        }
        self
    }

    pub fn num_classes(&self) -> usize {
        self.head.last().map_or(0, |d| d.width)
    }

    /// Width of the backbone output after global average pooling.
    pub fn feature_width(&self) -> usize {
        self.backbone.last().map_or(self.in_channels, |b| b.out_channels)
    }

    /// Width of the layer feeding the final classifier.
    pub fn penultimate_width(&self) -> usize {
        match self.head.len() {
            0 | 1 => self.feature_width(),
            n => self.head[n - 2].width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_edge == 0 || self.in_channels == 0 {
            return Err(Error::Config("input edge and channel count must be positive".into()));
        }
        if self.head.is_empty() {
            return Err(Error::Config("head must contain at least the logits layer".into()));
        }
        let mut edge = self.input_edge;
        for (i, b) in self.backbone.iter().enumerate() {
            if b.out_channels == 0 {
                return Err(Error::Config(format!("conv block {i} has zero channels")));
            }
            if b.pool {
                edge /= 2;
                if edge == 0 {
                    return Err(Error::Config(format!(
                        "input edge {} collapses to zero at conv block {i}",
                        self.input_edge
                    )));
                }
            }
        }
        for (j, d) in self.head.iter().enumerate() {
            if d.width == 0 {
                return Err(Error::Config(format!("head layer {j} has zero width")));
            }
            ops::check_dropout_rate(d.dropout)?;
        }
        let last = self.head.last().expect("non-empty head");
        if last.batch_norm || last.relu || last.dropout > 0.0 {
            return Err(Error::Config("the final head layer must be a plain linear logits layer".into()));
        }
        Ok(())
    }

    fn digest(value: &impl Serialize) -> String {
        let bytes = serde_json::to_vec(value).expect("architecture serializes");
        let hash = Sha256::digest(&bytes);
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Stable identifier of the full architecture.
    pub fn hash(&self) -> String {
        Self::digest(self)
    }

    /// Identifier of the input geometry and backbone only.
    pub fn backbone_hash(&self) -> String {
        Self::digest(&(self.input_edge, self.in_channels, &self.backbone))
    }

    /// Names and shapes of every trainable parameter, in layer order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut channels = self.in_channels;
        for (i, b) in self.backbone.iter().enumerate() {
            let p = format!("{BACKBONE_PREFIX}block{i}");
            out.push((format!("{p}.conv.weight"), vec![b.out_channels, channels, 3, 3]));
            out.push((format!("{p}.conv.bias"), vec![b.out_channels]));
            if b.batch_norm {
                out.push((format!("{p}.bn.gamma"), vec![b.out_channels]));
                out.push((format!("{p}.bn.beta"), vec![b.out_channels]));
            }
            channels = b.out_channels;
        }
        let mut width = channels;
        for (j, d) in self.head.iter().enumerate() {
            let p = format!("{HEAD_PREFIX}fc{j}");
            out.push((format!("{p}.weight"), vec![d.width, width]));
            out.push((format!("{p}.bias"), vec![d.width]));
            if d.batch_norm {
                out.push((format!("{p}.bn.gamma"), vec![d.width]));
                out.push((format!("{p}.bn.beta"), vec![d.width]));
            }
            width = d.width;
        }
        out
    }

    /// Batch-norm running statistics (non-trainable state).
    pub fn buffer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let bn = |prefix: String, c: usize, out: &mut Vec<(String, Vec<usize>)>| {
            out.push((format!("{prefix}.bn.running_mean"), vec![c]));
            out.push((format!("{prefix}.bn.running_var"), vec![c]));
        };
        for (i, b) in self.backbone.iter().enumerate() {
            if b.batch_norm {
                bn(format!("{BACKBONE_PREFIX}block{i}"), b.out_channels, &mut out);
            }
        }
        for (j, d) in self.head.iter().enumerate() {
            if d.batch_norm {
                bn(format!("{HEAD_PREFIX}fc{j}"), d.width, &mut out);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum LayerKind {
    Conv { prefix: String },
    BatchNorm { prefix: String },
    Relu,
    MaxPool,
    GlobalAvgPool,
    Linear { prefix: String },
    Dropout { rate: f64 },
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Input(Tensor<T>),
    BatchNorm(BatchNormCache<T>),
    Pool { argmax: Vec<usize>, shape: Vec<usize> },
    Shape(Vec<usize>),
    Mask(Vec<T>),
    Identity,
}

#[derive(Debug, Clone)]
struct Layer<T> {
    kind: LayerKind,
    cache: Option<Cache<T>>,
}

impl<T> Layer<T> {
    fn new(kind: LayerKind) -> Self {
        Self { kind, cache: None }
    }

    fn name(&self) -> String {
        match &self.kind {
            LayerKind::Conv { prefix } => format!("{prefix}.conv"),
            LayerKind::BatchNorm { prefix } => format!("{prefix}.bn"),
            LayerKind::Relu => "relu".into(),
            LayerKind::MaxPool => "maxpool2".into(),
            LayerKind::GlobalAvgPool => "global_avg_pool".into(),
            LayerKind::Linear { prefix } => prefix.clone(),
            LayerKind::Dropout { .. } => "dropout".into(),
        }
    }
}

fn build_layers<T>(arch: &ArchitectureConfig) -> (Vec<Layer<T>>, usize) {
    let mut layers = Vec::new();
    for (i, b) in arch.backbone.iter().enumerate() {
        let prefix = format!("{BACKBONE_PREFIX}block{i}");
        layers.push(Layer::new(LayerKind::Conv { prefix: prefix.clone() }));
        if b.batch_norm {
            layers.push(Layer::new(LayerKind::BatchNorm { prefix }));
        }
        layers.push(Layer::new(LayerKind::Relu));
        if b.pool {
            layers.push(Layer::new(LayerKind::MaxPool));
        }
    }
    layers.push(Layer::new(LayerKind::GlobalAvgPool));
    let mut final_linear = 0;
    for (j, d) in arch.head.iter().enumerate() {
        let prefix = format!("{HEAD_PREFIX}fc{j}");
        final_linear = layers.len();
        layers.push(Layer::new(LayerKind::Linear { prefix: prefix.clone() }));
        if d.batch_norm {
            layers.push(Layer::new(LayerKind::BatchNorm { prefix }));
        }
        if d.relu {
            layers.push(Layer::new(LayerKind::Relu));
        }
        if d.dropout > 0.0 {
            layers.push(Layer::new(LayerKind::Dropout { rate: d.dropout }));
        }
    }
    (layers, final_linear)
}

/// A classifier instance: architecture, parameters with optimizer state,
/// batch-norm running statistics, and per-layer forward caches.
#[derive(Debug, Clone)]
pub struct Model<T> {
    arch: ArchitectureConfig,
    pub params: ParamSet<T>,
    pub buffers: BTreeMap<String, Tensor<T>>,
    layers: Vec<Layer<T>>,
    final_linear: usize,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with fan-in scaled normal weights, zero biases, unit
    /// gamma and zero beta.
    pub fn init<R: Rng + ?Sized>(arch: &ArchitectureConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in arch.param_shapes() {
            let n: usize = shape.iter().product();
            let tensor = if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let values = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
                Tensor::from_f64(&shape, &values)?
            } else if name.ends_with(".gamma") {
                Tensor::full(&shape, T::ONE)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, tensor)?;
        }
        Self::from_parts(arch.clone(), params, default_buffers(arch))
    }

    /// Assembles a model from existing state, checking every name and shape
    /// against the architecture.
    pub fn from_parts(
        arch: ArchitectureConfig,
        params: ParamSet<T>,
        buffers: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self> {
        arch.validate()?;
        let expected = arch.param_shapes();
        let expected_names: Vec<&String> = expected.iter().map(|(n, _)| n).collect();
        let mut mismatch: Vec<String> = expected_names
            .iter()
            .filter(|n| params.param(n).is_none())
            .map(|n| n.to_string())
            .collect();
        mismatch.extend(params.names().filter(|n| !expected_names.contains(n)).cloned());
        if !mismatch.is_empty() {
            return Err(Error::NameMismatch { names: mismatch });
        }
        for (name, shape) in &expected {
            let got = params.get(name)?.shape();
            if got != shape.as_slice() {
                return Err(Error::shape("model", format!("{name}: expected {shape:?}, got {got:?}")));
            }
        }
        let expected_buffers = arch.buffer_shapes();
        if expected_buffers.len() != buffers.len()
            || expected_buffers
                .iter()
                .any(|(n, s)| buffers.get(n).map(|t| t.shape()) != Some(s.as_slice()))
        {
            return Err(Error::Config("batch-norm buffers do not match the architecture".into()));
        }
        let (layers, final_linear) = build_layers(&arch);
        Ok(Self {
            arch,
            params,
            buffers,
            layers,
            final_linear,
        })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Full forward pass producing logits. Train mode caches what the
    /// backward pass needs and updates batch-norm running statistics.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
        let end = self.layers.len();
        self.forward_range(input, mode, rng, end)
    }

    /// Eval-mode activations feeding the final classifier layer.
    pub fn features(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let end = self.final_linear;
        let mut rng = NoRandomness;
        self.forward_range(input, Mode::Eval, &mut rng, end)
    }

    fn forward_range(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut dyn RngCore, end: usize) -> Result<Tensor<T>> {
        let e = self.arch.input_edge;
        if input.shape().len() != 4 || input.shape()[1..] != [self.arch.in_channels, e, e] {
            return Err(Error::shape(
                "forward_model",
                format!(
                    "batch {:?} does not match input {}x{e}x{e}",
                    input.shape(),
                    self.arch.in_channels
                ),
            ));
        }
        let train = mode == Mode::Train;
        let mut x = input.clone();
        for idx in 0..end {
            let layer = &self.layers[idx];
            let (y, cache) = match &layer.kind {
                LayerKind::Conv { prefix } => {
                    let w = self.params.get(&format!("{prefix}.conv.weight"))?;
                    let b = self.params.get(&format!("{prefix}.conv.bias"))?;
                    let y = ops::conv2d_forward(&x, w, b, 1, 1)?;
                    (y, Cache::Input(x))
                }
                LayerKind::BatchNorm { prefix } => {
                    let gamma = self.params.get(&format!("{prefix}.bn.gamma"))?;
                    let beta = self.params.get(&format!("{prefix}.bn.beta"))?;
                    if train {
                        let (y, cache, stats) = ops::batchnorm_train_forward(&x, gamma, beta, BN_EPSILON)?;
                        let (mean_key, var_key) = (format!("{prefix}.bn.running_mean"), format!("{prefix}.bn.running_var"));
                        let missing = || Error::Config(format!("missing running stats for {prefix}"));
                        let mut rm = self.buffers.remove(&mean_key).ok_or_else(missing)?;
                        let mut rv = self.buffers.remove(&var_key).ok_or_else(missing)?;
                        ops::update_running_stats(&mut rm, &mut rv, &stats, BN_MOMENTUM);
                        self.buffers.insert(mean_key, rm);
                        self.buffers.insert(var_key, rv);
                        (y, Cache::BatchNorm(cache))
                    } else {
                        let rm = &self.buffers[&format!("{prefix}.bn.running_mean")];
                        let rv = &self.buffers[&format!("{prefix}.bn.running_var")];
                        (ops::batchnorm_eval_forward(&x, gamma, beta, rm, rv, BN_EPSILON)?, Cache::Identity)
                    }
                }
                LayerKind::Relu => (ops::relu_forward(&x), Cache::Input(x)),
                LayerKind::MaxPool => {
                    let shape = x.shape().to_vec();
                    let (y, argmax) = ops::maxpool2_forward(&x)?;
                    (y, Cache::Pool { argmax, shape })
                }
                LayerKind::GlobalAvgPool => {
                    let shape = x.shape().to_vec();
                    (ops::global_avg_pool_forward(&x)?, Cache::Shape(shape))
                }
                LayerKind::Linear { prefix } => {
                    let w = self.params.get(&format!("{prefix}.weight"))?;
                    let b = self.params.get(&format!("{prefix}.bias"))?;
                    (ops::linear_forward(&x, w, b)?, Cache::Input(x))
                }
                LayerKind::Dropout { rate } => {
                    if train {
                        let (y, mask) = ops::dropout_train_forward(&x, *rate, rng)?;
                        (y, Cache::Mask(mask))
                    } else {
                        (x, Cache::Identity)
                    }
                }
            };
            y.ensure_finite(&self.layers[idx].name())?;
            self.layers[idx].cache = train.then_some(cache);
            x = y;
        }
        if !train {
            for layer in &mut self.layers {
                layer.cache = None;
            }
        }
        Ok(x)
    }

    /// Gradients of every parameter given the gradient of the logits.
    /// Consumes the caches of the preceding train-mode forward pass.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<Grads<T>> {
        let mut grads = Grads::new();
        let mut g = grad_logits.clone();
        for idx in (0..self.layers.len()).rev() {
            let layer = &mut self.layers[idx];
            let name = layer.name();
            let cache = layer
                .cache
                .take()
                .ok_or_else(|| Error::Usage(format!("backward through {name} without a train-mode forward cache")))?;
            g = match (&layer.kind, cache) {
                (LayerKind::Conv { prefix }, Cache::Input(x)) => {
                    let w = self.params.get(&format!("{prefix}.conv.weight"))?;
                    let r = ops::conv2d_backward(&g, &x, w, 1, 1)?;
                    grads.insert(format!("{prefix}.conv.weight"), r.weight);
                    grads.insert(format!("{prefix}.conv.bias"), r.bias);
                    r.input
                }
                (LayerKind::BatchNorm { prefix }, Cache::BatchNorm(cache)) => {
                    let gamma = self.params.get(&format!("{prefix}.bn.gamma"))?;
                    let r = ops::batchnorm_backward(&g, &cache, gamma)?;
                    grads.insert(format!("{prefix}.bn.gamma"), r.gamma);
                    grads.insert(format!("{prefix}.bn.beta"), r.beta);
                    r.input
                }
                (LayerKind::Relu, Cache::Input(x)) => ops::relu_backward(&g, &x)?,
                (LayerKind::MaxPool, Cache::Pool { argmax, shape }) => ops::maxpool2_backward(&g, &argmax, &shape)?,
                (LayerKind::GlobalAvgPool, Cache::Shape(shape)) => ops::global_avg_pool_backward(&g, &shape)?,
                (LayerKind::Linear { prefix }, Cache::Input(x)) => {
                    let w = self.params.get(&format!("{prefix}.weight"))?;
                    let r = ops::linear_backward(&g, &x, w)?;
                    grads.insert(format!("{prefix}.weight"), r.weight);
                    grads.insert(format!("{prefix}.bias"), r.bias);
                    r.input
                }
                (LayerKind::Dropout { .. }, Cache::Mask(mask)) => ops::dropout_backward(&g, &mask)?,
                (_, _) => return Err(Error::Usage(format!("inconsistent cache for layer {name}"))),
            };
            g.ensure_finite(&format!("{name} backward"))?;
        }
        Ok(grads)
    }

    /// Indices of the largest logit per row.
    /// Eval-mode logits; needs no randomness.
    pub fn logits(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = NoRandomness;
        self.forward(input, Mode::Eval, &mut rng)
    }

    pub fn predict(&mut self, input: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(input)?))
    }
}

/// Eval mode never draws randomness; this source makes that explicit.
struct NoRandomness;

impl RngCore for NoRandomness {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval mode does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval mode does not sample")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("eval mode does not sample")
    }
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let c = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn default_buffers<T: Scalar>(arch: &ArchitectureConfig) -> BTreeMap<String, Tensor<T>> {
    arch.buffer_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let value = if name.ends_with("running_var") { T::ONE } else { T::ZERO };
            (name, Tensor::full(&shape, value))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_parameter_count_is_fixed() {
        let arch = ArchitectureConfig::desk(32, 6);
        // conv: 8·3·9+8 + 16·8·9+16 + 32·16·9+32 ; bn: 2·(8+16+32)
        // head: 32·32+32 + 2·32 + 6·32+6
        let conv = (8 * 27 + 8) + (16 * 72 + 16) + (32 * 144 + 32);
        let bn = 2 * (8 + 16 + 32);
        let head = (32 * 32 + 32) + 2 * 32 + (6 * 32 + 6);
        assert_eq!(arch.parameter_count(), conv + bn + head);
        assert_eq!(arch.parameter_count(), DESK_PARAMETER_COUNT);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::<f32>::init(&arch, &mut rng).unwrap();
        assert_eq!(model.parameter_count(), DESK_PARAMETER_COUNT);
    }

    const DESK_PARAMETER_COUNT: usize = 7_462;

    #[test]
    fn full_head_is_constructible() {
        let head = ArchitectureConfig::full_head(6);
        let widths: Vec<usize> = head.iter().map(|d| d.width).collect();
        assert_eq!(widths, vec![768, 256, 128, 6]);
        assert!(head[..3].iter().all(|d| d.batch_norm && d.relu && d.dropout == 0.5));
        let arch = ArchitectureConfig::desk(16, 6).with_head(head);
        arch.validate().unwrap();
        assert_eq!(arch.penultimate_width(), 128);
    }

    #[test]
    fn eval_forward_is_pure() {
        let arch = ArchitectureConfig::desk(16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Model::<f32>::init(&arch, &mut rng).unwrap();
        let x = Tensor::<f32>::from_f64(&[2, 3, 16, 16], &(0..1536).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
        let a = model.forward(&x, Mode::Eval, &mut rng).unwrap();
        let b = model.forward(&x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn backward_without_forward_is_usage_error() {
        let arch = ArchitectureConfig::desk(16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Model::<f64>::init(&arch, &mut rng).unwrap();
        let err = model.backward(&Tensor::zeros(&[2, 6])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn wrong_input_edge_is_rejected() {
        let arch = ArchitectureConfig::desk(16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Model::<f32>::init(&arch, &mut rng).unwrap();
        let err = model.forward(&Tensor::zeros(&[2, 3, 8, 8]), Mode::Eval, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn invalid_head_rejected() {
        let mut arch = ArchitectureConfig::desk(16, 6);
        arch.head.last_mut().unwrap().relu = true;
        assert!(arch.validate().is_err());
        let arch = ArchitectureConfig::desk(16, 6).with_dropout(1.0);
        assert!(arch.validate().is_err());
    }

    #[test]
    fn hashes_separate_backbone_from_head() {
        let a = ArchitectureConfig::desk(32, 6);
        let b = ArchitectureConfig::desk(32, 12);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.backbone_hash(), b.backbone_hash());
    }
}
