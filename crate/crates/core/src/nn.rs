//! Dense feed-forward classifier with manual backpropagation.
//!
//! A model is a stack of affine layers with rectifier activations between
//! them and a log-softmax on the output, so every forward pass returns a
//! matrix of log-probabilities (one row per record). Training is plain
//! mini-batch SGD with classical momentum:
//!
//! ```text
//! velocity <- momentum * velocity - lr * scale * grad
//! param    <- param + velocity
//! ```
//!
//! `scale` lets callers flip or weight the gradient of a loss term, which is
//! how the adversarial terms of the defense are applied.
//!
//! Weights are stored `(fan_in, fan_out)` so a layer is `x.dot(w) + b` on a
//! row-major batch. Everything is `f64`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Hyperparameters and shape of an [`MlpModel`].
///
/// Hidden layers use a rectifier and the output is log-normalized; those are
/// fixed, so they are not fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, hidden widths..., output width.
    pub layer_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl MlpConfig {
    /// Classifier with the given hidden widths, SGD at lr 0.01 / momentum 0.5,
    /// 20 epochs of batch 32.
    pub fn classifier(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Self {
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(input);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(classes);
        MlpConfig {
            layer_sizes,
            learning_rate: 0.01,
            momentum: 0.5,
            epochs: 20,
            batch_size: 32,
            seed,
        }
    }

    /// The full-size tabular architecture: hidden layers of 2000 and 500 units.
    pub fn full_scale(input: usize, classes: usize, seed: u64) -> Self {
        Self::classifier(input, &[2000, 500], classes, seed)
    }

    /// Desk-scale architecture: hidden layers of 64 and 32 units.
    pub fn desk_scale(input: usize, classes: usize, seed: u64) -> Self {
        Self::classifier(input, &[64, 32], classes, seed)
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated config has layers")
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    /// Same hyperparameters with new input and output widths.
    pub fn with_io(&self, input: usize, output: usize) -> Self {
        let mut cfg = self.clone();
        let last = cfg.layer_sizes.len() - 1;
        cfg.layer_sizes[0] = input;
        cfg.layer_sizes[last] = output;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::input("an MLP needs at least an input and an output layer"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::input("layer sizes must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::input("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::input("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::input("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// Features plus target distributions, one row per record.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(features: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if features.nrows() != targets.nrows() {
            return Err(Error::dimension(format!(
                "{} feature rows but {} target rows",
                features.nrows(),
                targets.nrows()
            )));
        }
        for (i, row) in targets.outer_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&t| !(t >= 0.0)) {
                return Err(Error::input(format!("target row {i} is not a probability vector")));
            }
        }
        Ok(Batch { features, targets })
    }

    /// Batch with one-hot targets for the given class indices.
    pub fn from_labels(features: Array2<f64>, labels: &[usize], classes: usize) -> Result<Self> {
        Batch::new(features, one_hot(labels, classes)?)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.targets.ncols()
    }

    /// Argmax of each target row (the class index for one-hot targets).
    pub fn labels(&self) -> Vec<usize> {
        argmax_rows(self.targets.view())
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            features: self.features.select(Axis(0), rows),
            targets: self.targets.select(Axis(0), rows),
        }
    }

    /// Row-wise concatenation.
    pub fn concat(parts: &[&Batch]) -> Result<Batch> {
        let first = parts.first().ok_or_else(|| Error::input("nothing to concatenate"))?;
        for p in parts {
            if p.num_features() != first.num_features() || p.num_classes() != first.num_classes() {
                return Err(Error::dimension("batches have different widths"));
            }
        }
        let fv: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let tv: Vec<_> = parts.iter().map(|p| p.targets.view()).collect();
        Ok(Batch {
            features: ndarray::concatenate(Axis(0), &fv).expect("widths checked"),
            targets: ndarray::concatenate(Axis(0), &tv).expect("widths checked"),
        })
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::input(format!("label {l} out of range for {classes} classes")));
        }
        out[[i, l]] = 1.0;
    }
    Ok(out)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// One affine layer. Used both for parameters and for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape `(fan_in, fan_out)`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Dense {
            weights: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..=bound)),
            bias: Array1::from_shape_simple_fn(fan_out, || rng.random_range(-bound..=bound)),
        }
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Per-layer parameter gradients, same shapes as the model's layers.
pub type Gradients = Vec<Dense>;

/// Which loss a training step minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean negative log-likelihood of the targets.
    Nll,
    /// Mean KL divergence from the targets to the predicted distribution.
    KlToTarget,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the feature matrix.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    pub logprobs: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    layers: Vec<Dense>,
    velocity: Vec<Dense>,
}

impl MlpModel {
    /// Seeded uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::derive(config.seed, &[seed::stream::INIT]));
        let layers = config
            .layer_sizes
            .windows(2)
            .map(|w| Dense::uniform(w[0], w[1], &mut rng))
            .collect();
        Ok(Self::with_layers(config, layers))
    }

    /// All-zero parameters.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self::with_layers(config, layers))
    }

    /// Builds a model from explicit layers, checking shapes against the config.
    pub fn from_layers(config: MlpConfig, layers: Vec<Dense>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layer_sizes.len() - 1 {
            return Err(Error::dimension("layer count does not match config"));
        }
        for (i, (l, w)) in layers.iter().zip(config.layer_sizes.windows(2)).enumerate() {
            if l.weights.dim() != (w[0], w[1]) || l.bias.len() != w[1] {
                return Err(Error::dimension(format!("layer {i} shape does not match config")));
            }
            if !l.all_finite() {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Self::with_layers(config, layers))
    }

    fn with_layers(config: MlpConfig, layers: Vec<Dense>) -> Self {
        let velocity = layers.iter().map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols())).collect();
        MlpModel { config, layers, velocity }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn velocity(&self) -> &[Dense] {
        &self.velocity
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size()
    }

    pub fn output_size(&self) -> usize {
        self.config.output_size()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, features: &ArrayView2<f64>) -> Result<()> {
        if features.ncols() != self.input_size() {
            return Err(Error::dimension(format!(
                "model expects {} features, got {}",
                self.input_size(),
                features.ncols()
            )));
        }
        Ok(())
    }

    /// Log-probabilities for each row of `features`.
    pub fn forward(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(&features.view())?;
        let last = self.layers.len() - 1;
        let mut act = features.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            act = z;
        }
        Ok(log_softmax(&act))
    }

    /// Predicted class for each row.
    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.forward(features)?.view()))
    }

    pub fn forward_cached(&self, features: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(&features.view())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = features.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights);
            z += &layer.bias;
            let next = if i < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            inputs.push(act);
            pre.push(z);
            act = next;
        }
        let logprobs = log_softmax(&act);
        Ok(ForwardCache { inputs, pre, logprobs })
    }

    /// Backpropagates `grad_logprobs` (d loss / d log-probabilities) through
    /// the network. Returns parameter gradients and d loss / d input.
    pub fn backward(&self, cache: &ForwardCache, grad_logprobs: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if grad_logprobs.dim() != cache.logprobs.dim() {
            return Err(Error::dimension("gradient shape differs from forward output"));
        }
        // Through log-softmax: dz = g - softmax * rowsum(g).
        let mut delta = grad_logprobs.clone();
        for (mut d, lp) in delta.outer_iter_mut().zip(cache.logprobs.outer_iter()) {
            let total: f64 = d.sum();
            Zip::from(&mut d).and(&lp).for_each(|d, &l| *d -= l.exp() * total);
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = cache.inputs[i].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Dense { weights: gw, bias: gb });
            let mut upstream = delta.dot(&self.layers[i].weights.t());
            if i > 0 {
                Zip::from(&mut upstream).and(&cache.pre[i - 1]).for_each(|u, &z| {
                    if z <= 0.0 {
                        *u = 0.0;
                    }
                });
            }
            delta = upstream;
        }
        grads.reverse();
        Ok((grads, delta))
    }

    /// Loss and parameter gradients on a batch, without updating the model.
    pub fn loss_and_gradients(&self, batch: &Batch, kind: LossKind) -> Result<(f64, Gradients)> {
        let cache = self.forward_cached(&batch.features)?;
        let (loss, grad) = loss_and_grad(kind, &cache.logprobs, &batch.targets)?;
        let (grads, _) = self.backward(&cache, &grad)?;
        Ok((loss, grads))
    }

    /// Momentum update with `grads` weighted by `scale`.
    pub fn apply_gradients(&mut self, grads: &[Dense], scale: f64) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::dimension("gradient layer count differs from model"));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of layer {i}")));
            }
        }
        let momentum = self.config.momentum;
        let step = self.config.learning_rate * scale;
        for ((layer, vel), g) in self.layers.iter_mut().zip(self.velocity.iter_mut()).zip(grads) {
            Zip::from(&mut vel.weights)
                .and(&mut layer.weights)
                .and(&g.weights)
                .for_each(|v, w, &g| {
                    *v = momentum * *v - step * g;
                    *w += *v;
                });
            Zip::from(&mut vel.bias).and(&mut layer.bias).and(&g.bias).for_each(|v, w, &g| {
                *v = momentum * *v - step * g;
                *w += *v;
            });
        }
        Ok(())
    }

    /// One SGD step on `batch`. Returns the loss before the update.
    pub fn backward_and_step(&mut self, batch: &Batch, kind: LossKind, scale: f64) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(batch, kind)?;
        self.apply_gradients(&grads, scale)?;
        Ok(loss)
    }

    /// Runs `config.epochs` epochs of shuffled mini-batch SGD on `data`.
    /// Returns the mean batch loss of each epoch.
    pub fn fit(&mut self, data: &Batch) -> Result<Vec<f64>> {
        if data.num_features() != self.input_size() || data.num_classes() != self.output_size() {
            return Err(Error::dimension(format!(
                "data is {}x{} but model maps {} -> {}",
                data.num_features(),
                data.num_classes(),
                self.input_size(),
                self.output_size()
            )));
        }
        if data.is_empty() {
            return Err(Error::input("cannot train on an empty batch"));
        }
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let mut total = 0.0;
            let mut count = 0;
            for rows in epoch_batches(self.config.seed, epoch, data.len(), self.config.batch_size) {
                total += self.backward_and_step(&data.select(&rows), LossKind::Nll, 1.0)?;
                count += 1;
            }
            history.push(total / count as f64);
        }
        Ok(history)
    }
}

/// Shuffled row indices for `epoch`, split into batches of `batch_size`.
/// The final partial batch is kept.
pub fn epoch_batches(seed: u64, epoch: usize, rows: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..rows).collect();
    let mut rng = seed::rng(seed::derive(seed, &[seed::stream::SHUFFLE, epoch as u64]));
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn check_loss_inputs(logprobs: &Array2<f64>, targets: &Array2<f64>) -> Result<()> {
    if logprobs.dim() != targets.dim() {
        return Err(Error::dimension(format!(
            "log-probabilities {:?} vs targets {:?}",
            logprobs.dim(),
            targets.dim()
        )));
    }
    if logprobs.nrows() == 0 {
        return Err(Error::input("loss of an empty batch"));
    }
    if logprobs.iter().chain(targets.iter()).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in loss inputs".into()));
    }
    Ok(())
}

/// Mean negative log-likelihood and its gradient with respect to `logprobs`.
pub fn nll_loss_and_grad(logprobs: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_loss_inputs(logprobs, targets)?;
    let rows = logprobs.nrows() as f64;
    let mut loss = 0.0;
    Zip::from(logprobs).and(targets).for_each(|&l, &t| {
        if t != 0.0 {
            loss -= t * l;
        }
    });
    let grad = targets.mapv(|t| -t / rows);
    Ok((loss / rows, grad))
}

/// Mean `KL(target || exp(logprobs))` and its gradient with respect to
/// `logprobs`. The target entropy does not depend on the model, so the
/// gradient equals the NLL gradient.
pub fn kl_to_target_loss_and_grad(logprobs: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    check_loss_inputs(logprobs, targets)?;
    let rows = logprobs.nrows() as f64;
    let mut loss = 0.0;
    Zip::from(logprobs).and(targets).for_each(|&l, &t| {
        if t > 0.0 {
            loss += t * (t.ln() - l);
        }
    });
    let grad = targets.mapv(|t| -t / rows);
    Ok((loss / rows, grad))
}

pub fn loss_and_grad(kind: LossKind, logprobs: &Array2<f64>, targets: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    match kind {
        LossKind::Nll => nll_loss_and_grad(logprobs, targets),
        LossKind::KlToTarget => kl_to_target_loss_and_grad(logprobs, targets),
    }
}

/// Worst relative error between backprop and central finite differences over
/// every parameter, for the NLL loss on `batch`.
///
/// Pairs where both derivatives are exactly zero are skipped. The relative
/// error denominator is floored at `1e-6` so gradients at the finite-difference
/// noise floor do not dominate.
pub fn grad_check(model: &MlpModel, batch: &Batch, epsilon: f64) -> Result<f64> {
    let (_, analytic) = model.loss_and_gradients(batch, LossKind::Nll)?;
    let mut probe = model.clone();
    let loss_at = |m: &MlpModel| -> Result<f64> {
        let lp = m.forward(&batch.features)?;
        Ok(nll_loss_and_grad(&lp, &batch.targets)?.0)
    };
    let mut worst: f64 = 0.0;
    let mut compare = |a: f64, n: f64| {
        if a == 0.0 && n == 0.0 {
            return;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        worst = worst.max(rel);
    };
    for l in 0..model.layers.len() {
        for idx in 0..model.layers[l].weights.len() {
            let (r, c) = (idx / model.layers[l].weights.ncols(), idx % model.layers[l].weights.ncols());
            let orig = probe.layers[l].weights[[r, c]];
            probe.layers[l].weights[[r, c]] = orig + epsilon;
            let up = loss_at(&probe)?;
            probe.layers[l].weights[[r, c]] = orig - epsilon;
            let down = loss_at(&probe)?;
            probe.layers[l].weights[[r, c]] = orig;
            compare(analytic[l].weights[[r, c]], (up - down) / (2.0 * epsilon));
        }
        for j in 0..model.layers[l].bias.len() {
            let orig = probe.layers[l].bias[j];
            probe.layers[l].bias[j] = orig + epsilon;
            let up = loss_at(&probe)?;
            probe.layers[l].bias[j] = orig - epsilon;
            let down = loss_at(&probe)?;
            probe.layers[l].bias[j] = orig;
            compare(analytic[l].bias[j], (up - down) / (2.0 * epsilon));
        }
    }
    Ok(worst)
}
