//! DenseNet feature extractor with a global-average-pooling classifier.
//!
//! Layout: a 7×7 stride-2 convolution on the single-channel spectrogram,
//! four dense blocks of `[BN-ReLU-1×1 conv, BN-ReLU-3×3 conv]` layers whose
//! outputs are concatenated onto their inputs, BN-ReLU-1×1 conv + 2×2
//! average-pool transitions after the first `n_transitions` blocks, a final
//! BN-ReLU producing the feature map F, GAP, and a bias-free dense layer.
//! The missing classifier bias is what makes `mean(M_c) == S_c` exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Spectrogram;
use crate::tensor::{AdamState, BatchStats, Graph, Parameter, Tensor, TensorError, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input below minimum length: {frames} frames, need at least {min}")]
    InputTooShort { frames: usize, min: usize },
    #[error("input has {got} mel bands, model expects {expected}")]
    MelMismatch { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub block_layers: Vec<usize>,
    pub growth_rate: usize,
    /// Transitions follow the first `n_transitions` blocks.
    pub n_transitions: usize,
    pub n_classes: usize,
    pub n_mels: usize,
    pub init_features: usize,
    pub init_kernel: usize,
    pub init_stride: usize,
    /// Width of the 1×1 bottleneck as a multiple of the growth rate.
    pub bottleneck_factor: usize,
    pub compression: f64,
}

impl ArchSpec {
    fn preset(
        name: &str,
        block_layers: Vec<usize>,
        n_transitions: usize,
        n_classes: usize,
    ) -> Self {
        let growth_rate = 32;
        ArchSpec {
            name: name.to_string(),
            block_layers,
            growth_rate,
            n_transitions,
            n_classes,
            n_mels: 64,
            init_features: 2 * growth_rate,
            init_kernel: 7,
            init_stride: 2,
            bottleneck_factor: 4,
            compression: 0.5,
        }
    }

    pub fn densenet63(n_classes: usize) -> Self {
        Self::preset("densenet63", vec![3, 6, 12, 8], 3, n_classes)
    }

    pub fn densenet120(n_classes: usize) -> Self {
        Self::preset("densenet120", vec![6, 12, 24, 16], 2, n_classes)
    }

    /// Same topology with a different growth rate and block depths; the
    /// initial filter count stays at twice the growth rate.
    pub fn scaled(mut self, growth_rate: usize, block_layers: Vec<usize>) -> Self {
        self.growth_rate = growth_rate;
        self.init_features = 2 * growth_rate;
        self.block_layers = block_layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.block_layers.len() != 4 {
            return bad("exactly four dense blocks are required");
        }
        if self.growth_rate == 0 || self.init_features == 0 || self.bottleneck_factor == 0 {
            return bad("growth rate, initial features and bottleneck factor must be positive");
        }
        if self.n_transitions > 3 {
            return bad("at most three transitions fit between four blocks");
        }
        if self.n_classes == 0 || self.n_mels == 0 {
            return bad("n_classes and n_mels must be positive");
        }
        if self.init_kernel == 0 || self.init_stride == 0 {
            return bad("initial conv kernel and stride must be positive");
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad("compression must lie in (0, 1]");
        }
        Ok(())
    }

    /// Time (and feature) downsampling between input and feature map.
    pub fn downsample_factor(&self) -> usize {
        self.init_stride * (1 << self.n_transitions)
    }

    pub fn min_input_frames(&self) -> usize {
        self.downsample_factor()
    }

    /// Spatial size after the network, with ceil-mode pooling.
    pub fn output_dims(&self, t: usize, n: usize) -> (usize, usize) {
        let pad = self.init_kernel / 2;
        let conv = |x: usize| (x + 2 * pad - self.init_kernel) / self.init_stride + 1;
        let (mut t, mut n) = (conv(t), conv(n));
        for _ in 0..self.n_transitions {
            t = t.div_ceil(2);
            n = n.div_ceil(2);
        }
        (t, n)
    }

    pub fn time_resolution_s(&self, frame_shift_s: f64) -> f64 {
        frame_shift_s * self.downsample_factor() as f64
    }

    pub fn feature_channels(&self) -> usize {
        let mut c = self.init_features;
        for (i, &layers) in self.block_layers.iter().enumerate() {
            c += layers * self.growth_rate;
            if i < self.n_transitions {
                c = self.transition_width(c);
            }
        }
        c
    }

    fn transition_width(&self, c: usize) -> usize {
        ((c as f64 * self.compression).floor() as usize).max(1)
    }
}

/// All model parameters plus BN running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub params: Vec<Parameter>,
    /// `<bn>.running_mean` / `<bn>.running_var` pairs in BN order.
    pub buffers: Vec<Parameter>,
}

impl ModelWeights {
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn classifier(&self) -> &Tensor<f32> {
        &self.params.last().expect("classifier weight").value
    }
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    params: Vec<Parameter>,
    buffers: Vec<Parameter>,
}

impl Builder<'_> {
    fn kaiming(&mut self, name: String, shape: Vec<usize>) {
        let fan_in: usize = shape[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.params.push(Parameter::new(
            name,
            Tensor::new(shape, data).expect("sized"),
        ));
    }

    fn bn(&mut self, prefix: String, c: usize) {
        self.params.push(Parameter::new(
            format!("{prefix}.gamma"),
            Tensor::full(vec![c], 1.0),
        ));
        self.params.push(Parameter::new(
            format!("{prefix}.beta"),
            Tensor::zeros(vec![c]),
        ));
        self.buffers.push(Parameter::new(
            format!("{prefix}.running_mean"),
            Tensor::zeros(vec![c]),
        ));
        self.buffers.push(Parameter::new(
            format!("{prefix}.running_var"),
            Tensor::full(vec![c], 1.0),
        ));
    }
}

/// Per-clip view of a batched forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[batch, K, T', N']`.
    pub feature_map: Tensor<f32>,
    /// `[batch, K]`.
    pub gap: Tensor<f32>,
    /// `[batch, classes]`, pre-sigmoid.
    pub scores: Tensor<f32>,
    /// `[batch, classes]`.
    pub probs: Tensor<f32>,
}

impl ForwardOutput {
    pub fn batch_size(&self) -> usize {
        self.feature_map.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.feature_map.shape()[1]
    }

    /// `(T', N')`.
    pub fn spatial(&self) -> (usize, usize) {
        (self.feature_map.shape()[2], self.feature_map.shape()[3])
    }

    /// Channel-major `K × T' × N'` feature map of one clip.
    pub fn clip_feature_map(&self, b: usize) -> &[f32] {
        let size = self.feature_map.len() / self.batch_size();
        &self.feature_map.data()[b * size..(b + 1) * size]
    }

    pub fn clip_gap(&self, b: usize) -> &[f32] {
        let k = self.channels();
        &self.gap.data()[b * k..(b + 1) * k]
    }

    pub fn clip_scores(&self, b: usize) -> &[f32] {
        let c = self.scores.shape()[1];
        &self.scores.data()[b * c..(b + 1) * c]
    }

    pub fn clip_probs(&self, b: usize) -> &[f32] {
        let c = self.probs.shape()[1];
        &self.probs.data()[b * c..(b + 1) * c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct GraphOutputs {
    feature: Var,
    gap: Var,
    scores: Var,
    probs: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub spec: ArchSpec,
    pub weights: ModelWeights,
}

impl DenseNet {
    /// Deterministically initializes weights from `seed`.
    pub fn build(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            rng: &mut rng,
            params: Vec::new(),
            buffers: Vec::new(),
        };
        let (k, g) = (spec.init_kernel, spec.growth_rate);
        b.kaiming("conv0.weight".into(), vec![spec.init_features, 1, k, k]);
        let mut c = spec.init_features;
        let inner = spec.bottleneck_factor * g;
        for (bi, &layers) in spec.block_layers.iter().enumerate() {
            for li in 0..layers {
                let p = format!("block{}.layer{}", bi + 1, li + 1);
                b.bn(format!("{p}.bn1"), c);
                b.kaiming(format!("{p}.conv1.weight"), vec![inner, c, 1, 1]);
                b.bn(format!("{p}.bn2"), inner);
                b.kaiming(format!("{p}.conv2.weight"), vec![g, inner, 3, 3]);
                c += g;
            }
            if bi < spec.n_transitions {
                let p = format!("trans{}", bi + 1);
                let out = spec.transition_width(c);
                b.bn(format!("{p}.bn"), c);
                b.kaiming(format!("{p}.conv.weight"), vec![out, c, 1, 1]);
                c = out;
            }
        }
        b.bn("final_bn".into(), c);
        b.kaiming("classifier.weight".into(), vec![spec.n_classes, c]);
        let weights = ModelWeights {
            params: b.params,
            buffers: b.buffers,
        };
        Ok(DenseNet { spec, weights })
    }

    pub fn from_weights(spec: ArchSpec, weights: ModelWeights) -> Result<Self> {
        let reference = DenseNet::build(spec.clone(), 0)?;
        check_layout(&reference.weights.params, &weights.params)?;
        check_layout(&reference.weights.buffers, &weights.buffers)?;
        Ok(DenseNet { spec, weights })
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.num_parameters()
    }

    pub fn time_resolution_s(&self, frame_shift_s: f64) -> f64 {
        self.spec.time_resolution_s(frame_shift_s)
    }

    fn check_input(&self, input: &Tensor<f32>) -> Result<()> {
        let (b, c, t, n) = input.dims4("densenet input")?;
        if b == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if c != 1 {
            return Err(ModelError::InvalidSpec(format!(
                "input must have one channel, got {c}"
            )));
        }
        if n != self.spec.n_mels {
            return Err(ModelError::MelMismatch {
                expected: self.spec.n_mels,
                got: n,
            });
        }
        let min = self.spec.min_input_frames();
        if t < min {
            return Err(ModelError::InputTooShort { frames: t, min });
        }
        Ok(())
    }

    fn build_graph(
        &self,
        g: &mut Graph<f32>,
        input: Var,
        mode: Mode,
        param_vars: &[Var],
        stats: &mut Vec<BatchStats>,
    ) -> Result<GraphOutputs> {
        let mut pi = 0usize;
        let mut bn_index = 0usize;
        let mut next = || {
            pi += 1;
            param_vars[pi - 1]
        };
        let buffers = &self.weights.buffers;
        let mut bn_relu = |g: &mut Graph<f32>, x: Var, gamma: Var, beta: Var| -> Result<Var> {
            let y = match mode {
                Mode::Train => {
                    let (y, s) = g.batch_norm_train(x, gamma, beta, BN_EPS)?;
                    stats.push(s);
                    y
                }
                Mode::Eval => {
                    let mean: Vec<f64> = buffers[2 * bn_index]
                        .value
                        .data()
                        .iter()
                        .map(|&v| v as f64)
                        .collect();
                    let var: Vec<f64> = buffers[2 * bn_index + 1]
                        .value
                        .data()
                        .iter()
                        .map(|&v| v as f64)
                        .collect();
                    g.batch_norm_eval(x, gamma, beta, &mean, &var, BN_EPS)?
                }
            };
            bn_index += 1;
            Ok(g.relu(y))
        };

        let spec = &self.spec;
        let pad = spec.init_kernel / 2;
        let w0 = next();
        let mut x = g.conv2d(input, w0, (spec.init_stride, spec.init_stride), (pad, pad))?;
        for (bi, &layers) in spec.block_layers.iter().enumerate() {
            for _ in 0..layers {
                let (g1, b1, w1) = (next(), next(), next());
                let h = bn_relu(g, x, g1, b1)?;
                let h = g.conv2d(h, w1, (1, 1), (0, 0))?;
                let (g2, b2, w2) = (next(), next(), next());
                let h = bn_relu(g, h, g2, b2)?;
                let h = g.conv2d(h, w2, (1, 1), (1, 1))?;
                x = g.concat_channels(&[x, h])?;
            }
            if bi < spec.n_transitions {
                let (gt, bt, wt) = (next(), next(), next());
                let h = bn_relu(g, x, gt, bt)?;
                let h = g.conv2d(h, wt, (1, 1), (0, 0))?;
                x = g.avg_pool2d(h)?;
            }
        }
        let (gf, bf) = (next(), next());
        let feature = bn_relu(g, x, gf, bf)?;
        let gap = g.global_avg_pool(feature)?;
        let wc = next();
        let scores = g.dense(gap, wc)?;
        let probs = g.sigmoid(scores);
        debug_assert_eq!(pi, param_vars.len());
        Ok(GraphOutputs {
            feature,
            gap,
            scores,
            probs,
        })
    }

    /// Forward pass over a `[batch, 1, T, n_mels]` input.
    pub fn forward(&self, input: &Tensor<f32>, mode: Mode) -> Result<ForwardOutput> {
        self.check_input(input)?;
        let mut g = Graph::new();
        let x = g.leaf(input.clone(), false);
        let vars: Vec<Var> = self
            .weights
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), false))
            .collect();
        let mut stats = Vec::new();
        let out = self.build_graph(&mut g, x, mode, &vars, &mut stats)?;
        Ok(ForwardOutput {
            feature_map: g.value(out.feature).clone(),
            gap: g.value(out.gap).clone(),
            scores: g.value(out.scores).clone(),
            probs: g.value(out.probs).clone(),
        })
    }

    pub fn forward_spectrogram(&self, spec: &Spectrogram) -> Result<ForwardOutput> {
        self.forward(&stack_spectrograms(&[spec])?, Mode::Eval)
    }

    /// Loss and parameter gradients for one minibatch, plus the observed
    /// BN batch statistics. Weights are not modified.
    pub fn loss_and_grads(
        &self,
        input: &Tensor<f32>,
        targets: &Tensor<f32>,
    ) -> Result<(f32, Vec<Tensor<f32>>, Vec<BatchStats>)> {
        self.check_input(input)?;
        let mut g = Graph::new();
        let x = g.leaf(input.clone(), false);
        let vars: Vec<Var> = self
            .weights
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), true))
            .collect();
        let mut stats = Vec::new();
        let out = self.build_graph(&mut g, x, Mode::Train, &vars, &mut stats)?;
        let t = g.leaf(targets.clone(), false);
        let loss = g.bce_loss(out.probs, t, BCE_EPS)?;
        let loss_value = g.value(loss).data()[0];
        g.backward(loss)?;
        let grads = vars
            .iter()
            .map(|&v| {
                g.take_grad(v)
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape().to_vec()))
            })
            .collect();
        Ok((loss_value, grads, stats))
    }

    /// One optimizer step on a minibatch. Returns the loss before the update.
    pub fn train_step(
        &mut self,
        input: &Tensor<f32>,
        targets: &Tensor<f32>,
        adam: &mut AdamState,
    ) -> Result<f32> {
        let (loss, grads, stats) = self.loss_and_grads(input, targets)?;
        adam.step(&mut self.weights.params, &grads)?;
        self.update_running_stats(&stats);
        Ok(loss)
    }

    fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (i, s) in stats.iter().enumerate() {
            let correction = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            let (means, vars) = self.weights.buffers.split_at_mut(2 * i + 1);
            let mean = &mut means[2 * i].value;
            let var = &mut vars[0].value;
            for (ch, (m, v)) in mean.data_mut().iter_mut().zip(var.data_mut()).enumerate() {
                *m = (BN_MOMENTUM * *m as f64 + (1.0 - BN_MOMENTUM) * s.mean[ch]) as f32;
                *v =
                    (BN_MOMENTUM * *v as f64 + (1.0 - BN_MOMENTUM) * s.var[ch] * correction) as f32;
            }
        }
    }
}

fn check_layout(expected: &[Parameter], got: &[Parameter]) -> Result<()> {
    if expected.len() != got.len() {
        return Err(ModelError::InvalidSpec(format!(
            "expected {} tensors, found {}",
            expected.len(),
            got.len()
        )));
    }
    for (e, g) in expected.iter().zip(got) {
        if e.name != g.name || e.value.shape() != g.value.shape() {
            return Err(ModelError::InvalidSpec(format!(
                "tensor `{}` {:?} does not match expected `{}` {:?}",
                g.name,
                g.value.shape(),
                e.name,
                e.value.shape()
            )));
        }
    }
    Ok(())
}

/// Stacks spectrograms into `[batch, 1, T_max, n_mels]`, padding short
/// clips at the end with the log floor (the value of digital silence).
pub fn stack_spectrograms(specs: &[&Spectrogram]) -> Result<Tensor<f32>> {
    let first = specs.first().ok_or(ModelError::EmptyBatch)?;
    let n = first.n_mels;
    let t_max = specs.iter().map(|s| s.n_frames).max().unwrap_or(0);
    let mut data = Vec::with_capacity(specs.len() * t_max * n);
    for s in specs {
        if s.n_mels != n {
            return Err(ModelError::MelMismatch {
                expected: n,
                got: s.n_mels,
            });
        }
        data.extend_from_slice(&s.frames);
        data.extend(std::iter::repeat_n(
            Spectrogram::floor_value(),
            (t_max - s.n_frames) * n,
        ));
    }
    Ok(Tensor::new(vec![specs.len(), 1, t_max, n], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n_classes: usize) -> ArchSpec {
        let mut s = ArchSpec::densenet63(n_classes).scaled(2, vec![1, 1, 1, 1]);
        s.n_mels = 16;
        s
    }

    fn random_input(b: usize, t: usize, n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * t * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        Tensor::new(vec![b, 1, t, n], data).unwrap()
    }

    #[test]
    fn densenet63_parameter_count_near_reported() {
        let net = DenseNet::build(ArchSpec::densenet63(17), 0).unwrap();
        let count = net.num_parameters();
        assert_eq!(count, 2_312_156);
        assert!((count as f64 - 2.34e6).abs() / 2.34e6 < 0.10);
    }

    #[test]
    fn densenet120_layout() {
        let spec = ArchSpec::densenet120(10);
        assert_eq!(spec.downsample_factor(), 8);
        let net = DenseNet::build(spec, 0).unwrap();
        assert!(net.weights.param("trans2.conv.weight").is_some());
        assert!(net.weights.param("trans3.conv.weight").is_none());
        assert_eq!(net.weights.classifier().shape(), &[10, 1536]);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = DenseNet::build(tiny(3), 42).unwrap();
        let b = DenseNet::build(tiny(3), 42).unwrap();
        let c = DenseNet::build(tiny(3), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.weights.params, c.weights.params);
    }

    #[test]
    fn minimal_growth_rate_one_runs() {
        let mut spec = ArchSpec::densenet63(2).scaled(1, vec![1, 1, 1, 1]);
        spec.n_mels = 8;
        let net = DenseNet::build(spec, 1).unwrap();
        let out = net.forward(&random_input(2, 40, 8, 3), Mode::Eval).unwrap();
        assert_eq!(out.probs.shape(), &[2, 2]);
    }

    #[test]
    fn seventeen_class_probs_in_unit_interval() {
        let mut spec = ArchSpec::densenet63(17).scaled(2, vec![1, 1, 1, 1]);
        spec.n_mels = 16;
        let net = DenseNet::build(spec, 5).unwrap();
        let out = net
            .forward(&random_input(1, 48, 16, 9), Mode::Eval)
            .unwrap();
        assert_eq!(out.clip_probs(0).len(), 17);
        assert!(out.clip_probs(0).iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn output_dims_ceil_halving() {
        let spec = ArchSpec::densenet63(17);
        assert_eq!(spec.output_dims(998, 64), (63, 4));
        assert_eq!(spec.downsample_factor(), 16);
        assert_eq!(ArchSpec::densenet120(10).output_dims(998, 64), (125, 8));
    }

    #[test]
    fn shape_trace_matches_output_dims() {
        let net = DenseNet::build(tiny(2), 0).unwrap();
        for t in [16usize, 17, 31, 50, 63] {
            let out = net
                .forward(&random_input(1, t, 16, t as u64), Mode::Eval)
                .unwrap();
            assert_eq!(out.spatial(), net.spec.output_dims(t, 16), "t = {t}");
        }
    }

    #[test]
    fn gap_is_channel_mean_of_feature_map() {
        let net = DenseNet::build(tiny(3), 11).unwrap();
        let out = net
            .forward(&random_input(2, 37, 16, 4), Mode::Eval)
            .unwrap();
        let (t, n) = out.spatial();
        for b in 0..2 {
            let fm = out.clip_feature_map(b);
            for (k, &g) in out.clip_gap(b).iter().enumerate() {
                let mean = fm[k * t * n..(k + 1) * t * n]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>()
                    / (t * n) as f64;
                assert!((mean - g as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_short_and_wrong_mels_rejected() {
        let net = DenseNet::build(tiny(2), 0).unwrap();
        assert_eq!(
            net.forward(&random_input(1, 15, 16, 0), Mode::Eval)
                .unwrap_err(),
            ModelError::InputTooShort {
                frames: 15,
                min: 16
            }
        );
        assert_eq!(
            net.forward(&random_input(1, 32, 12, 0), Mode::Eval)
                .unwrap_err(),
            ModelError::MelMismatch {
                expected: 16,
                got: 12
            }
        );
    }

    #[test]
    fn eval_forward_is_pure() {
        let net = DenseNet::build(tiny(2), 3).unwrap();
        let x = random_input(2, 33, 16, 8);
        assert_eq!(
            net.forward(&x, Mode::Eval).unwrap(),
            net.forward(&x, Mode::Eval).unwrap()
        );
    }

    #[test]
    fn invalid_specs() {
        let mut s = tiny(2);
        s.block_layers = vec![1, 1, 1];
        assert!(DenseNet::build(s, 0).is_err());
        let mut s = tiny(2);
        s.n_classes = 0;
        assert!(DenseNet::build(s, 0).is_err());
        let mut s = tiny(2);
        s.growth_rate = 0;
        assert!(DenseNet::build(s, 0).is_err());
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_batch() {
        let net0 = DenseNet::build(tiny(2), 7).unwrap();
        let mut net = net0.clone();
        let x = random_input(4, 32, 16, 21);
        let y = Tensor::new(vec![4, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut adam = AdamState::new(
            &net.weights.params,
            crate::tensor::AdamConfig {
                lr: 0.01,
                ..Default::default()
            },
        );
        let first = net.train_step(&x, &y, &mut adam).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = net.train_step(&x, &y, &mut adam).unwrap();
        }
        assert!(last < first * 0.5, "{first} -> {last}");
        assert_ne!(net.weights.buffers, net0.weights.buffers);
    }

    #[test]
    fn stacking_pads_with_floor() {
        let a = Spectrogram {
            frames: vec![1.0; 3 * 2],
            n_frames: 3,
            n_mels: 2,
            frame_shift_s: 0.01,
        };
        let b = Spectrogram {
            frames: vec![2.0; 2],
            n_frames: 1,
            n_mels: 2,
            frame_shift_s: 0.01,
        };
        let t = stack_spectrograms(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 3, 2]);
        assert_eq!(t.data()[8], Spectrogram::floor_value());
    }
}
