//! Adversarial training against a party discriminator.
//!
//! The classifier `f` and a discriminator `g` are trained alternately on each
//! mini-batch. `g` reads `f`'s output vector and predicts which party supplied
//! the record; it is updated to minimize its negative log-likelihood. `f` is
//! then updated, with `g` frozen, to minimize
//!
//! ```text
//! OneHotParty:  nll_f(y | x)  -  c * nll_g(q | f(x))
//! UniformKl:    nll_f(y | x)  +  c * KL(uniform || g(f(x)))
//! ```
//!
//! The adversarial term's gradient flows back through `g` into `f`'s output.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    argmax_rows, epoch_batches, kl_to_target_loss_and_grad, nll_loss_and_grad, one_hot, Batch, Gradients, MlpConfig,
    MlpModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseVariant {
    /// `f` is pushed away from `g`'s one-hot party targets.
    OneHotParty,
    /// `f` is pushed to make `g`'s output uniform over parties.
    UniformKl,
}

/// What `g` sees of `f`'s output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorInput {
    #[default]
    LogProb,
    Prob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub variant: DefenseVariant,
    pub c_weight: f64,
    /// Hidden widths of `g`; `None` copies `f`'s hidden widths.
    #[serde(default)]
    pub g_hidden_sizes: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub g_steps_per_f_step: usize,
    #[serde(default)]
    pub g_input: DiscriminatorInput,
    /// Learning rate of `g`; `None` uses `f`'s.
    #[serde(default)]
    pub g_learning_rate: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl DefenseConfig {
    pub fn new(variant: DefenseVariant, c_weight: f64, seed: u64) -> Self {
        DefenseConfig {
            variant,
            c_weight,
            g_hidden_sizes: None,
            g_steps_per_f_step: 1,
            g_input: DiscriminatorInput::LogProb,
            g_learning_rate: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_weight.is_finite() && self.c_weight > 0.0) {
            return Err(Error::input("adversarial weight c must be positive"));
        }
        self.validate_schedule()
    }

    fn validate_schedule(&self) -> Result<()> {
        if self.g_steps_per_f_step == 0 {
            return Err(Error::input("g_steps_per_f_step must be positive"));
        }
        if self.g_learning_rate.is_some_and(|lr| !(lr.is_finite() && lr > 0.0)) {
            return Err(Error::input("discriminator learning rate must be positive"));
        }
        if self.g_hidden_sizes.as_ref().is_some_and(|h| h.contains(&0)) {
            return Err(Error::input("discriminator hidden sizes must be positive"));
        }
        Ok(())
    }

    /// `g`'s configuration: `f`'s hyperparameters (learning rate overridable),
    /// input width = classes, output width = parties.
    pub fn discriminator_config(&self, f_cfg: &MlpConfig, n_parties: usize) -> MlpConfig {
        let hidden = self.g_hidden_sizes.clone().unwrap_or_else(|| f_cfg.hidden_sizes().to_vec());
        let mut layer_sizes = vec![f_cfg.output_size()];
        layer_sizes.extend(hidden);
        layer_sizes.push(n_parties);
        MlpConfig {
            layer_sizes,
            learning_rate: self.g_learning_rate.unwrap_or(f_cfg.learning_rate),
            seed: self.seed,
            ..f_cfg.clone()
        }
    }
}

/// Pooled training data with the index of the party that supplied each row.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledBatch {
    pub batch: Batch,
    /// Party index in `0..n_parties` for each row.
    pub parties: Vec<usize>,
    pub n_parties: usize,
}

impl PooledBatch {
    pub fn new(batch: Batch, parties: Vec<usize>, n_parties: usize) -> Result<Self> {
        if parties.len() != batch.len() {
            return Err(Error::dimension("one party id per row required"));
        }
        if let Some(&p) = parties.iter().find(|&&p| p >= n_parties) {
            return Err(Error::input(format!("party id {p} out of range for {n_parties} parties")));
        }
        Ok(PooledBatch { batch, parties, n_parties })
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn distinct_parties(&self) -> usize {
        let mut seen = vec![false; self.n_parties];
        self.parties.iter().for_each(|&p| seen[p] = true);
        seen.iter().filter(|&&s| s).count()
    }

    pub fn party_targets(&self) -> Array2<f64> {
        one_hot(&self.parties, self.n_parties).expect("party ids validated")
    }

    pub fn select(&self, rows: &[usize]) -> PooledBatch {
        PooledBatch {
            batch: self.batch.select(rows),
            parties: rows.iter().map(|&r| self.parties[r]).collect(),
            n_parties: self.n_parties,
        }
    }

    /// Fraction of rows from the most common party.
    pub fn majority_share(&self) -> f64 {
        let mut counts = vec![0usize; self.n_parties];
        self.parties.iter().for_each(|&p| counts[p] += 1);
        *counts.iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdvTrainTrace {
    /// Mean composite objective of `f`.
    pub f_loss: Vec<f64>,
    /// Mean negative log-likelihood of `g`.
    pub g_loss: Vec<f64>,
    /// Fraction of records `g` assigned to the right party (before its update).
    pub g_accuracy: Vec<f64>,
}

fn g_features(f_logprobs: &Array2<f64>, input: DiscriminatorInput) -> Array2<f64> {
    match input {
        DiscriminatorInput::LogProb => f_logprobs.clone(),
        DiscriminatorInput::Prob => f_logprobs.mapv(f64::exp),
    }
}

/// Party log-probabilities from `f`'s output vectors.
pub fn discriminator_forward(g: &MlpModel, f_outputs: &Array2<f64>) -> Result<Array2<f64>> {
    g.forward(f_outputs)
}

/// One discriminator update on `batch` with `f` fixed. Returns `g`'s loss
/// and how many rows it classified correctly before the update.
pub fn g_step(
    g: &mut MlpModel,
    f: &MlpModel,
    features: &Array2<f64>,
    parties: &[usize],
    cfg: &DefenseConfig,
) -> Result<(f64, usize)> {
    g_update(g, &g_features(&f.forward(features)?, cfg.g_input), parties)
}

fn g_update(g: &mut MlpModel, inputs: &Array2<f64>, parties: &[usize]) -> Result<(f64, usize)> {
    let cache = g.forward_cached(inputs)?;
    let targets = one_hot(parties, g.output_size())?;
    let (loss, grad) = nll_loss_and_grad(&cache.logprobs, &targets)?;
    let correct = argmax_rows(cache.logprobs.view()).iter().zip(parties).filter(|(a, b)| a == b).count();
    let (grads, _) = g.backward(&cache, &grad)?;
    g.apply_gradients(&grads, 1.0)?;
    Ok((loss, correct))
}

/// `f`'s composite objective on a batch and its gradients with respect to
/// `f`'s parameters, with `g` held fixed.
pub fn composite_objective(
    f: &MlpModel,
    g: &MlpModel,
    batch: &Batch,
    parties: &[usize],
    cfg: &DefenseConfig,
) -> Result<(f64, Gradients)> {
    let fc = f.forward_cached(&batch.features)?;
    let (f_loss, mut grad) = nll_loss_and_grad(&fc.logprobs, &batch.targets)?;
    if cfg.c_weight == 0.0 {
        let (grads, _) = f.backward(&fc, &grad)?;
        return Ok((f_loss, grads));
    }
    let c = cfg.c_weight;
    let gc = g.forward_cached(&g_features(&fc.logprobs, cfg.g_input))?;
    let n = g.output_size();
    let (adv_loss, adv_grad) = match cfg.variant {
        DefenseVariant::OneHotParty => {
            let (lg, gg) = nll_loss_and_grad(&gc.logprobs, &one_hot(parties, n)?)?;
            (-c * lg, gg * -c)
        }
        DefenseVariant::UniformKl => {
            let uniform = Array2::from_elem(gc.logprobs.dim(), 1.0 / n as f64);
            let (kl, gk) = kl_to_target_loss_and_grad(&gc.logprobs, &uniform)?;
            (c * kl, gk * c)
        }
    };
    let (_, mut through_g) = g.backward(&gc, &adv_grad)?;
    if cfg.g_input == DiscriminatorInput::Prob {
        through_g.zip_mut_with(&fc.logprobs, |d, &l| *d *= l.exp());
    }
    grad += &through_g;
    let (grads, _) = f.backward(&fc, &grad)?;
    Ok((f_loss + adv_loss, grads))
}

/// One classifier update with `g` frozen. Returns the pre-update objective.
pub fn f_step(f: &mut MlpModel, g: &MlpModel, batch: &Batch, parties: &[usize], cfg: &DefenseConfig) -> Result<f64> {
    let (loss, grads) = composite_objective(f, g, batch, parties, cfg)?;
    f.apply_gradients(&grads, 1.0)?;
    Ok(loss)
}

/// Trains `f` and `g` by per-batch alternation: `g_steps_per_f_step`
/// discriminator updates, then one classifier update. Batches follow the same
/// seeded epoch order as [`MlpModel::fit`].
pub fn adversarial_train(
    pooled: &PooledBatch,
    model_cfg: &MlpConfig,
    cfg: &DefenseConfig,
) -> Result<(MlpModel, MlpModel, AdvTrainTrace)> {
    cfg.validate()?;
    train_unchecked(pooled, model_cfg, cfg)
}

fn train_unchecked(
    pooled: &PooledBatch,
    model_cfg: &MlpConfig,
    cfg: &DefenseConfig,
) -> Result<(MlpModel, MlpModel, AdvTrainTrace)> {
    cfg.validate_schedule()?;
    if pooled.distinct_parties() < 2 {
        return Err(Error::precondition("adversarial training needs records from at least two parties"));
    }
    let mut f = MlpModel::new(model_cfg.clone())?;
    if pooled.batch.num_features() != f.input_size() || pooled.batch.num_classes() != f.output_size() {
        return Err(Error::dimension("pooled data does not match the classifier's shape"));
    }
    let mut g = MlpModel::new(cfg.discriminator_config(model_cfg, pooled.n_parties))?;
    let mut trace = AdvTrainTrace::default();
    for epoch in 0..model_cfg.epochs {
        let (mut f_total, mut g_total, mut correct, mut seen, mut steps) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for rows in epoch_batches(model_cfg.seed, epoch, pooled.len(), model_cfg.batch_size) {
            let part = pooled.select(&rows);
            let g_inputs = g_features(&f.forward(&part.batch.features)?, cfg.g_input);
            for k in 0..cfg.g_steps_per_f_step {
                let (loss, right) = g_update(&mut g, &g_inputs, &part.parties)?;
                if k == 0 {
                    g_total += loss;
                    correct += right;
                    seen += rows.len();
                }
            }
            f_total += f_step(&mut f, &g, &part.batch, &part.parties, cfg)?;
            steps += 1;
        }
        trace.f_loss.push(f_total / steps as f64);
        trace.g_loss.push(g_total / steps as f64);
        trace.g_accuracy.push(correct as f64 / seen as f64);
    }
    Ok((f, g, trace))
}
