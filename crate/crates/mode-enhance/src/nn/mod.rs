//! Minimal feedforward network engine: dense layers with optional batch
//! normalization, exact backpropagation, Adam, and the MSE/cross-entropy
//! losses. This is the substrate shared by the experts, the gate and the
//! pretraining autoencoder.
//!
//! Training runs in 64-bit by default; the engine is generic over [`Scalar`]
//! so a 32-bit instantiation is available where speed matters more than
//! gradient-check fidelity.

mod adam;
mod loss;
pub mod serial;

pub use adam::{AdamConfig, AdamState};
pub use loss::{cross_entropy, mse, mse_grad};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Element type of the network engine.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Softmax,
}

/// Per-feature batch normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<F: Scalar> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    /// Weight of the current batch statistics in the running average.
    pub momentum: F,
    pub epsilon: F,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::from_elem(dim, F::one()),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::from_elem(dim, F::one()),
            momentum: F::of_f64(0.1),
            epsilon: F::of_f64(1e-5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F: Scalar> {
    /// Shape (input_dim, output_dim).
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub batchnorm: Option<BatchNorm<F>>,
    pub activation: Activation,
}

impl<F: Scalar> Layer<F> {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Layer blueprint used when initializing a fresh network.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub dim: usize,
    pub activation: Activation,
    pub batchnorm: bool,
}

#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    /// Conventional funnel: ReLU hidden layers (with optional batchnorm) and
    /// a final layer with the given activation and no batchnorm.
    pub fn with_hidden(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        output_activation: Activation,
        batchnorm: bool,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&dim| LayerSpec { dim, activation: Activation::Relu, batchnorm })
            .collect();
        layers.push(LayerSpec { dim: output_dim, activation: output_activation, batchnorm: false });
        Self { input_dim, layers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
struct BnCache<F: Scalar> {
    normalized: Array2<F>,
    inv_std: Array1<F>,
    batch_mean: Array1<F>,
    batch_var: Array1<F>,
}

#[derive(Debug, Clone)]
struct LayerCache<F: Scalar> {
    input: Array2<F>,
    pre_activation: Array2<F>,
    output: Array2<F>,
    bn: Option<BnCache<F>>,
}

/// Intermediates recorded by [`Mlp::forward`]; required by
/// [`Mlp::backward`] and [`Mlp::commit_batchnorm`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F: Scalar> {
    layers: Vec<LayerCache<F>>,
    mode: Mode,
}

/// Gradients for every layer parameter plus the gradient at the inputs.
#[derive(Debug, Clone)]
pub struct LayerGrads<F: Scalar> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
    pub gamma: Option<Array1<F>>,
    pub beta: Option<Array1<F>>,
}

#[derive(Debug, Clone)]
pub struct Gradients<F: Scalar> {
    pub layers: Vec<LayerGrads<F>>,
    pub input: Array2<F>,
}

impl<F: Scalar> Gradients<F> {
    /// Flattens in the same canonical order as [`Mlp::flatten_params`].
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for lg in &self.layers {
            out.extend(lg.weights.iter().copied());
            out.extend(lg.bias.iter().copied());
            if let Some(g) = &lg.gamma {
                out.extend(g.iter().copied());
            }
            if let Some(b) = &lg.beta {
                out.extend(b.iter().copied());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F: Scalar> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Mlp<F> {
    /// Builds a network from explicit layers, validating dimension chaining
    /// and parameter finiteness.
    pub fn from_layers(layers: Vec<Layer<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Dimension(format!(
                    "layer output dim {} does not chain into next input dim {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i}: bias length {} != output dim {}",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            let mut finite = layer.weights.iter().all(|v| v.is_finite())
                && layer.bias.iter().all(|v| v.is_finite());
            if let Some(bn) = &layer.batchnorm {
                if bn.gamma.len() != layer.output_dim() {
                    return Err(Error::Dimension(format!(
                        "layer {i}: batchnorm size {} != output dim {}",
                        bn.gamma.len(),
                        layer.output_dim()
                    )));
                }
                finite &= bn.gamma.iter().all(|v| v.is_finite())
                    && bn.beta.iter().all(|v| v.is_finite())
                    && bn.running_mean.iter().all(|v| v.is_finite())
                    && bn.running_var.iter().all(|v| v.is_finite() && *v >= F::zero());
            }
            if !finite {
                return Err(Error::Data(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Fresh network with He-uniform init for ReLU layers, Xavier-uniform for
    /// the rest, zero biases.
    pub fn init(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut fan_in = spec.input_dim;
        for ls in &spec.layers {
            let fan_out = ls.dim;
            let limit = match ls.activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let weights = Array2::from_shape_fn((fan_in, fan_out), |_| {
                F::of_f64(rng.random_range(-limit..limit))
            });
            layers.push(Layer {
                weights,
                bias: Array1::zeros(fan_out),
                batchnorm: ls.batchnorm.then(|| BatchNorm::new(fan_out)),
                activation: ls.activation,
            });
            fan_in = fan_out;
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output_dim()).unwrap_or(0)
    }

    /// Runs the network. Train mode normalizes with batch statistics and
    /// records everything [`Mlp::backward`] needs; infer mode uses running
    /// statistics and is batch-size invariant.
    ///
    /// Forward is pure: running statistics are updated only when the caller
    /// passes the cache to [`Mlp::commit_batchnorm`] (or uses
    /// [`Mlp::train_forward`]).
    pub fn forward(&self, inputs: &Array2<F>, mode: Mode) -> Result<(Array2<F>, ForwardCache<F>)> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input dim {} does not match network input dim {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        let batch = inputs.nrows();
        if batch == 0 {
            return Err(Error::Dimension("empty batch".into()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = inputs.clone();
        for layer in &self.layers {
            let z = x.dot(&layer.weights) + &layer.bias;
            let (pre_activation, bn_cache) = match (&layer.batchnorm, mode) {
                (Some(bn), Mode::Train) => {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                    let mut var = Array1::<F>::zeros(z.ncols());
                    for row in z.rows() {
                        for (j, v) in row.iter().enumerate() {
                            let d = *v - mean[j];
                            var[j] = var[j] + d * d;
                        }
                    }
                    var.mapv_inplace(|v| v / F::of_f64(batch as f64));
                    let inv_std = var.mapv(|v| F::one() / (v + bn.epsilon).sqrt());
                    let normalized = (&z - &mean) * &inv_std;
                    let y = &normalized * &bn.gamma + &bn.beta;
                    (y, Some(BnCache { normalized, inv_std, batch_mean: mean, batch_var: var }))
                }
                (Some(bn), Mode::Infer) => {
                    let inv_std = bn.running_var.mapv(|v| F::one() / (v + bn.epsilon).sqrt());
                    let normalized = (&z - &bn.running_mean) * &inv_std;
                    let y = &normalized * &bn.gamma + &bn.beta;
                    (y, None)
                }
                (None, _) => (z, None),
            };
            let output = apply_activation(&pre_activation, layer.activation);
            caches.push(LayerCache { input: x, pre_activation, output: output.clone(), bn: bn_cache });
            x = output;
        }
        Ok((x, ForwardCache { layers: caches, mode }))
    }

    /// Inference-mode forward without keeping the cache.
    pub fn infer(&self, inputs: &Array2<F>) -> Result<Array2<F>> {
        Ok(self.forward(inputs, Mode::Infer)?.0)
    }

    /// Train-mode forward that also folds the batch statistics into the
    /// running batchnorm statistics.
    pub fn train_forward(&mut self, inputs: &Array2<F>) -> Result<(Array2<F>, ForwardCache<F>)> {
        let (out, cache) = self.forward(inputs, Mode::Train)?;
        self.commit_batchnorm(&cache);
        Ok((out, cache))
    }

    /// Folds the batch statistics recorded in `cache` into the running
    /// batchnorm statistics.
    pub fn commit_batchnorm(&mut self, cache: &ForwardCache<F>) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Some(bn), Some(bnc)) = (&mut layer.batchnorm, &lc.bn) {
                let keep = F::one() - bn.momentum;
                bn.running_mean =
                    bn.running_mean.mapv(|v| v * keep) + bnc.batch_mean.mapv(|v| v * bn.momentum);
                bn.running_var =
                    bn.running_var.mapv(|v| v * keep) + bnc.batch_var.mapv(|v| v * bn.momentum);
            }
        }
    }

    /// Exact gradients of the scalar loss whose gradient with respect to the
    /// network outputs is `output_grad`.
    pub fn backward(&self, cache: &ForwardCache<F>, output_grad: &Array2<F>) -> Result<Gradients<F>> {
        self.backward_inner(cache, output_grad, true)
    }

    /// Like [`Mlp::backward`], but `logit_grad` is the gradient at the final
    /// layer's pre-activation values (the output activation is skipped).
    ///
    /// Used for softmax outputs where the loss gradient is cheaper and more
    /// stable at the logits.
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache<F>,
        logit_grad: &Array2<F>,
    ) -> Result<Gradients<F>> {
        self.backward_inner(cache, logit_grad, false)
    }

    fn backward_inner(
        &self,
        cache: &ForwardCache<F>,
        output_grad: &Array2<F>,
        through_final_activation: bool,
    ) -> Result<Gradients<F>> {
        if cache.mode != Mode::Train {
            return Err(Error::Data(
                "backward requires a cache produced by forward in train mode".into(),
            ));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Dimension("cache does not match this network".into()));
        }
        let last = cache.layers.last().expect("validated non-empty");
        if output_grad.dim() != last.output.dim() {
            return Err(Error::Dimension(format!(
                "output grad is {:?} but outputs are {:?}",
                output_grad.dim(),
                last.output.dim()
            )));
        }

        let mut grads: Vec<LayerGrads<F>> = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for (idx, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            if lc.input.ncols() != layer.input_dim() {
                return Err(Error::Dimension(format!("stale cache at layer {idx}")));
            }
            let is_last = idx == self.layers.len() - 1;
            let dy = if is_last && !through_final_activation {
                upstream
            } else {
                activation_backward(&upstream, lc, layer.activation)
            };

            let (dz, dgamma, dbeta) = match (&layer.batchnorm, &lc.bn) {
                (Some(bn), Some(bnc)) => {
                    let batch = F::of_f64(dy.nrows() as f64);
                    let dgamma = (&dy * &bnc.normalized).sum_axis(Axis(0));
                    let dbeta = dy.sum_axis(Axis(0));
                    let dxhat = &dy * &bn.gamma;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &bnc.normalized).sum_axis(Axis(0));
                    let dz = ((&dxhat * batch) - &sum_dxhat - &bnc.normalized * &sum_dxhat_xhat)
                        * &bnc.inv_std.mapv(|v| v / batch);
                    (dz, Some(dgamma), Some(dbeta))
                }
                (None, None) => (dy, None, None),
                _ => return Err(Error::Data(format!("stale cache at layer {idx}"))),
            };

            let dweights = lc.input.t().dot(&dz);
            let dbias = dz.sum_axis(Axis(0));
            upstream = dz.dot(&layer.weights.t());
            grads.push(LayerGrads { weights: dweights, bias: dbias, gamma: dgamma, beta: dbeta });
        }
        grads.reverse();
        Ok(Gradients { layers: grads, input: upstream })
    }

    /// Number of trainable parameters (weights, biases, batchnorm scale and
    /// shift; running statistics are not trained).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.len()
                    + l.bias.len()
                    + l.batchnorm.as_ref().map_or(0, |bn| bn.gamma.len() + bn.beta.len())
            })
            .sum()
    }

    /// Canonical flat view of the trainable parameters: per layer, weights in
    /// row-major order, bias, then batchnorm gamma and beta when present.
    pub fn flatten_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
            if let Some(bn) = &l.batchnorm {
                out.extend(bn.gamma.iter().copied());
                out.extend(bn.beta.iter().copied());
            }
        }
        out
    }

    /// Writes a flat parameter vector (in [`Mlp::flatten_params`] order) back
    /// into the network.
    pub fn set_flat_params(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = it.next().expect("length checked");
            }
            for b in l.bias.iter_mut() {
                *b = it.next().expect("length checked");
            }
            if let Some(bn) = &mut l.batchnorm {
                for g in bn.gamma.iter_mut() {
                    *g = it.next().expect("length checked");
                }
                for b in bn.beta.iter_mut() {
                    *b = it.next().expect("length checked");
                }
            }
        }
        Ok(())
    }

    /// Converts the element type, e.g. for a 32-bit inference copy.
    pub fn cast<T: Scalar>(&self) -> Mlp<T> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.mapv(|v| T::of_f64(v.as_f64())),
                    bias: l.bias.mapv(|v| T::of_f64(v.as_f64())),
                    batchnorm: l.batchnorm.as_ref().map(|bn| BatchNorm {
                        gamma: bn.gamma.mapv(|v| T::of_f64(v.as_f64())),
                        beta: bn.beta.mapv(|v| T::of_f64(v.as_f64())),
                        running_mean: bn.running_mean.mapv(|v| T::of_f64(v.as_f64())),
                        running_var: bn.running_var.mapv(|v| T::of_f64(v.as_f64())),
                        momentum: T::of_f64(bn.momentum.as_f64()),
                        epsilon: T::of_f64(bn.epsilon.as_f64()),
                    }),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

fn apply_activation<F: Scalar>(pre: &Array2<F>, activation: Activation) -> Array2<F> {
    match activation {
        Activation::Linear => pre.clone(),
        Activation::Relu => pre.mapv(|v| if v > F::zero() { v } else { F::zero() }),
        Activation::Sigmoid => pre.mapv(|v| F::one() / (F::one() + (-v).exp())),
        Activation::Softmax => {
            let mut out = pre.clone();
            for mut row in out.rows_mut() {
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum: F = row.iter().copied().sum();
                row.mapv_inplace(|v| v / sum);
            }
            out
        }
    }
}

fn activation_backward<F: Scalar>(
    upstream: &Array2<F>,
    cache: &LayerCache<F>,
    activation: Activation,
) -> Array2<F> {
    match activation {
        Activation::Linear => upstream.clone(),
        Activation::Relu => {
            let mut dy = upstream.clone();
            dy.zip_mut_with(&cache.pre_activation, |d, &z| {
                if z <= F::zero() {
                    *d = F::zero();
                }
            });
            dy
        }
        Activation::Sigmoid => {
            let mut dy = upstream.clone();
            dy.zip_mut_with(&cache.output, |d, &a| *d = *d * a * (F::one() - a));
            dy
        }
        Activation::Softmax => {
            let mut dy = Array2::zeros(upstream.dim());
            for (mut drow, (grow, prow)) in dy
                .rows_mut()
                .into_iter()
                .zip(upstream.rows().into_iter().zip(cache.output.rows()))
            {
                let dot: F = grow.iter().zip(prow.iter()).map(|(g, p)| *g * *p).sum();
                for (d, (g, p)) in drow.iter_mut().zip(grow.iter().zip(prow.iter())) {
                    *d = *p * (*g - dot);
                }
            }
            dy
        }
    }
}
