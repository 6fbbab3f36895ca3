//! Dense feed-forward layers with hand-written backpropagation.
//!
//! Samples are rows: a batch is a `(batch, features)` matrix and a layer with
//! weights `W` of shape `(out, in)` computes `act(X Wᵀ + b)`. Dropout masks are
//! attached to layer *inputs*, which is where the denoising corruption lives.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`; the ReLU subgradient at exactly zero is taken as 0.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// How the reconstruction gradient is scaled before an SGD step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNormalization {
    /// Squared error averaged over samples and output units.
    #[default]
    PerElement,
    /// Squared L2 norm per sample, averaged over samples.
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    /// Classical momentum; 0 gives plain SGD.
    pub momentum: f64,
    pub loss_normalization: LossNormalization,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 256,
            epochs: 200,
            dropout_rate: 0.2,
            momentum: 0.0,
            loss_normalization: LossNormalization::PerElement,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(out, in)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Weights uniform in `±1/√fan_in`, zero bias.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        DenseLayer {
            weights: Array2::from_shape_simple_fn((output, input), || dist.sample(rng)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn pre_activation(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Ordered chain of dense layers.
#[derive(Debug, Clone)]
pub struct DenseStack {
    layers: Vec<DenseLayer>,
    // changes whenever parameters change, so caches can be checked for staleness
    generation: u64,
}

impl PartialEq for DenseStack {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer input masks; `None` entries leave that input untouched.
pub type DropoutMasks = Vec<Option<Array2<f64>>>;

/// Activations recorded by [`DenseStack::forward`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Input seen by each layer, after masking.
    inputs: Vec<Array2<f64>>,
    masks: DropoutMasks,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    /// Gradient with respect to the (unmasked) network input.
    pub input: Array2<f64>,
}

impl DenseStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a dense stack needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer chain",
                    expected: w[0].output_dim(),
                    got: w[1].input_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer bias",
                    expected: l.output_dim(),
                    got: l.bias.len(),
                });
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid("layer parameters must be finite"));
            }
        }
        Ok(DenseStack {
            layers,
            generation: next_generation(),
        })
    }

    /// Randomly initialised stack over `dims` (`dims.len() - 1` layers).
    pub fn random<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::invalid("need n+1 dimensions and n activations"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::random(w[0], w[1], a, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<DenseLayer> {
        self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::output_dim))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Inference pass without masks or caching.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut cur = x.to_owned();
        for l in &self.layers {
            let mut z = l.pre_activation(&cur.view());
            z.mapv_inplace(|v| l.activation.apply(v));
            cur = z;
        }
        Ok(cur)
    }

    pub fn forward(&self, x: ArrayView2<f64>, masks: Option<&DropoutMasks>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        if let Some(m) = masks {
            if m.len() != self.layers.len() {
                return Err(Error::DimensionMismatch {
                    context: "dropout masks",
                    expected: self.layers.len(),
                    got: m.len(),
                });
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut kept_masks = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mask = masks.and_then(|m| m[i].clone());
            if let Some(mask) = &mask {
                if mask.dim() != cur.dim() {
                    return Err(Error::DimensionMismatch {
                        context: "dropout mask shape",
                        expected: cur.len(),
                        got: mask.len(),
                    });
                }
                cur *= mask;
            }
            let z = l.pre_activation(&cur.view());
            let a = z.mapv(|v| l.activation.apply(v));
            inputs.push(cur);
            pre.push(z);
            kept_masks.push(mask);
            cur = a;
        }
        Ok(ForwardCache {
            generation: self.generation,
            inputs,
            masks: kept_masks,
            pre,
            output: cur,
        })
    }

    /// Backpropagate `grad_output` (∂loss/∂output) through a cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> Result<Gradients> {
        if cache.generation != self.generation || cache.inputs.len() != self.layers.len() {
            return Err(Error::invalid("forward cache is stale: parameters changed since it was computed"));
        }
        if grad_output.dim() != cache.output.dim() {
            return Err(Error::DimensionMismatch {
                context: "output gradient",
                expected: cache.output.len(),
                got: grad_output.len(),
            });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            Zip::from(&mut delta)
                .and(&cache.pre[i])
                .for_each(|d, &z| *d *= l.activation.derivative(z));
            let gw = delta.t().dot(&cache.inputs[i]);
            let gb = delta.sum_axis(Axis(0));
            let mut back = delta.dot(&l.weights);
            if let Some(mask) = &cache.masks[i] {
                back *= mask;
            }
            layers.push(LayerGradient { weights: gw, bias: gb });
            delta = back;
        }
        layers.reverse();
        Ok(Gradients { layers, input: delta })
    }

    pub fn zero_gradients(&self) -> Vec<LayerGradient> {
        self.layers
            .iter()
            .map(|l| LayerGradient {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect()
    }

    fn check_gradients(&self, grads: &[LayerGradient]) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient layers",
                expected: self.layers.len(),
                got: grads.len(),
            });
        }
        for (l, g) in self.layers.iter().zip(grads) {
            if g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len() {
                return Err(Error::DimensionMismatch {
                    context: "gradient shape",
                    expected: l.weights.len(),
                    got: g.weights.len(),
                });
            }
        }
        Ok(())
    }

    /// Mutable parameter access for external optimisers and finite-difference
    /// checks. Invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.generation = next_generation();
        &mut self.layers
    }
}

/// `θ ← θ − lr·∇θ`.
pub fn sgd_step(stack: &mut DenseStack, grads: &[LayerGradient], learning_rate: f64) -> Result<()> {
    stack.check_gradients(grads)?;
    for (l, g) in stack.layers_mut().iter_mut().zip(grads) {
        l.weights.scaled_add(-learning_rate, &g.weights);
        l.bias.scaled_add(-learning_rate, &g.bias);
    }
    Ok(())
}

/// SGD with optional classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Vec<LayerGradient>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, stack: &mut DenseStack, grads: &[LayerGradient]) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(stack, grads, self.learning_rate);
        }
        stack.check_gradients(grads)?;
        let vel = self.velocity.get_or_insert_with(|| stack.zero_gradients());
        for (v, g) in vel.iter_mut().zip(grads) {
            v.weights.mapv_inplace(|x| x * self.momentum);
            v.weights += &g.weights;
            v.bias.mapv_inplace(|x| x * self.momentum);
            v.bias += &g.bias;
        }
        sgd_step(stack, vel, self.learning_rate)
    }
}

fn check_same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "loss operands",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Mean over rows of the squared L2 reconstruction error.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    check_same_shape(&pred, &target)?;
    let rows = pred.nrows().max(1) as f64;
    let sum: f64 = Zip::from(&pred)
        .and(&target)
        .fold(0.0, |acc, &p, &t| acc + (p - t) * (p - t));
    Ok(sum / rows)
}

/// Gradient of [`mse_loss`] with respect to `pred`.
pub fn mse_gradient(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_same_shape(&pred, &target)?;
    let scale = 2.0 / pred.nrows().max(1) as f64;
    Ok(Zip::from(&pred).and(&target).map_collect(|&p, &t| scale * (p - t)))
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(dim: usize, rate: f64, rng: &mut R) -> Result<Array1<f64>> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok(Array1::from_shape_simple_fn(dim, || if rng.random::<f64>() < rate { 0.0 } else { keep }))
}

/// Batch version of [`dropout_mask`], filled row by row.
pub fn dropout_masks<R: Rng + ?Sized>(rows: usize, dim: usize, rate: f64, rng: &mut R) -> Result<Array2<f64>> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok(Array2::from_shape_simple_fn((rows, dim), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}

pub const STACK_FORMAT: &str = "resili.dense_stack";
pub const STACK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerFile {
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
    /// Row-major `(output_dim, input_dim)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// On-disk representation of a [`DenseStack`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackFile {
    format: String,
    version: u32,
    seed: Option<u64>,
    layers: Vec<LayerFile>,
}

impl StackFile {
    pub fn from_stack(stack: &DenseStack, seed: Option<u64>) -> Self {
        StackFile {
            format: STACK_FORMAT.into(),
            version: STACK_FORMAT_VERSION,
            seed,
            layers: stack
                .layers
                .iter()
                .map(|l| LayerFile {
                    input_dim: l.input_dim(),
                    output_dim: l.output_dim(),
                    activation: l.activation,
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn to_stack(&self) -> Result<DenseStack> {
        if self.format != STACK_FORMAT || self.version != STACK_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported weight file {} v{}",
                self.format, self.version
            )));
        }
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.output_dim, l.input_dim), l.weights.clone())
                    .map_err(|e| Error::invalid(format!("weight array: {e}")))?;
                Ok(DenseLayer {
                    weights,
                    bias: Array1::from(l.bias.clone()),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DenseStack::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::array;

    #[test]
    fn zero_weights_output_bias() {
        let stack = DenseStack::new(vec![DenseLayer {
            weights: Array2::zeros((2, 3)),
            bias: array![0.5, -1.5],
            activation: Activation::Identity,
        }])
        .unwrap();
        let out = stack.predict(array![[1.0, 2.0, 3.0]].view()).unwrap();
        assert_eq!(out, array![[0.5, -1.5]]);
    }

    #[test]
    fn relu_clamps() {
        let stack = DenseStack::new(vec![DenseLayer {
            weights: Array2::eye(2),
            bias: Array1::zeros(2),
            activation: Activation::Relu,
        }])
        .unwrap();
        assert_eq!(stack.predict(array![[1.0, -1.0]].view()).unwrap(), array![[1.0, 0.0]]);
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = substream(1, "t", 0);
        let stack = DenseStack::random(&[3, 4, 2], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        assert!(stack.forward(array![[1.0, 2.0]].view(), None).is_err());
        assert!(DenseStack::new(vec![
            DenseLayer::random(3, 4, Activation::Relu, &mut rng),
            DenseLayer::random(5, 2, Activation::Relu, &mut rng),
        ])
        .is_err());
    }

    #[test]
    fn zero_loss_grad_zero_gradients() {
        let mut rng = substream(2, "t", 0);
        let stack = DenseStack::random(&[3, 4, 2], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let x = array![[0.3, -0.2, 0.9], [1.0, 0.5, -0.5]];
        let cache = stack.forward(x.view(), None).unwrap();
        let g = stack.backward(&cache, Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| *v == 0.0)));
    }

    #[test]
    fn linear_layer_closed_form_gradient() {
        let w = array![[0.2, -0.4], [0.7, 0.1]];
        let stack = DenseStack::new(vec![DenseLayer {
            weights: w.clone(),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap();
        let x = array![[1.5, -2.0]];
        let y = array![[0.3, 0.4]];
        let cache = stack.forward(x.view(), None).unwrap();
        let gl = mse_gradient(cache.output.view(), y.view()).unwrap();
        let g = stack.backward(&cache, gl.view()).unwrap();
        let yhat = x.dot(&w.t());
        let expected = (&yhat - &y).t().dot(&x) * 2.0;
        for (a, b) in g.layers[0].weights.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = substream(3, "t", 0);
        let mut stack = DenseStack::random(&[2, 2], &[Activation::Identity], &mut rng).unwrap();
        let cache = stack.forward(array![[1.0, 1.0]].view(), None).unwrap();
        let zeros = stack.zero_gradients();
        sgd_step(&mut stack, &zeros, 0.1).unwrap();
        assert!(stack.backward(&cache, array![[1.0, 1.0]].view()).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut stack = DenseStack::new(vec![DenseLayer {
            weights: array![[1.0]],
            bias: array![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let before = stack.clone();
        let zeros = stack.zero_gradients();
        sgd_step(&mut stack, &zeros, 0.1).unwrap();
        assert_eq!(stack, before);
        let g = vec![LayerGradient {
            weights: array![[0.5]],
            bias: array![0.0],
        }];
        sgd_step(&mut stack, &g, 0.1).unwrap();
        assert!((stack.layers()[0].weights[[0, 0]] - 0.95).abs() < 1e-15);
        let bad = vec![LayerGradient {
            weights: array![[0.5, 1.0]],
            bias: array![0.0],
        }];
        assert!(sgd_step(&mut stack, &bad, 0.1).is_err());
    }

    #[test]
    fn step_decreases_quadratic() {
        let mut rng = substream(4, "t", 0);
        let mut stack = DenseStack::random(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        let x = array![[1.0, 0.0, 2.0], [0.5, 0.5, 0.5], [-1.0, 1.0, 0.0]];
        let y = array![[1.0, 1.0], [0.0, 2.0], [1.0, -1.0]];
        let cache = stack.forward(x.view(), None).unwrap();
        let before = mse_loss(cache.output.view(), y.view()).unwrap();
        let g = stack
            .backward(&cache, mse_gradient(cache.output.view(), y.view()).unwrap().view())
            .unwrap();
        sgd_step(&mut stack, &g.layers, 0.01).unwrap();
        let after = mse_loss(stack.predict(x.view()).unwrap().view(), y.view()).unwrap();
        assert!(after < before);
    }

    #[test]
    fn mse_definition() {
        let p = array![[1.0, 2.0], [0.0, 0.0]];
        let t = array![[0.0, 0.0], [0.0, 1.0]];
        assert_eq!(mse_loss(p.view(), t.view()).unwrap(), 3.0);
        assert!(mse_loss(p.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn dropout_rate_bounds_and_identity() {
        let mut rng = substream(5, "t", 0);
        assert!(dropout_mask(4, 1.0, &mut rng).is_err());
        assert!(dropout_mask(4, -0.1, &mut rng).is_err());
        assert_eq!(dropout_mask(4, 0.0, &mut rng).unwrap(), Array1::<f64>::ones(4));
        let a = dropout_mask(64, 0.2, &mut substream(9, "d", 0)).unwrap();
        let b = dropout_mask(64, 0.2, &mut substream(9, "d", 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| v == 0.0 || v == 1.25));
    }

    #[test]
    fn dropout_fraction_monte_carlo() {
        let mut rng = substream(6, "t", 0);
        let m = dropout_mask(1_000_000, 0.2, &mut rng).unwrap();
        let zeros = m.iter().filter(|v| **v == 0.0).count() as f64 / 1e6;
        assert!((zeros - 0.2).abs() < 0.003, "zero fraction {zeros}");
    }

    #[test]
    fn masked_forward_backward() {
        let mut rng = substream(7, "t", 0);
        let stack = DenseStack::random(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        let x = array![[1.0, 2.0, 3.0]];
        let masks = vec![Some(array![[0.0, 1.25, 1.25]])];
        let cache = stack.forward(x.view(), Some(&masks)).unwrap();
        let g = stack.backward(&cache, array![[1.0, 1.0]].view()).unwrap();
        assert_eq!(g.layers[0].weights[[0, 0]], 0.0);
        assert_eq!(g.input[[0, 0]], 0.0);
    }

    #[test]
    fn weight_file_round_trip() {
        let mut rng = substream(8, "t", 0);
        let stack = DenseStack::random(&[4, 6, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let text = serde_json::to_string(&StackFile::from_stack(&stack, Some(8))).unwrap();
        let back: StackFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.seed(), Some(8));
        assert_eq!(back.to_stack().unwrap(), stack);
    }
}
