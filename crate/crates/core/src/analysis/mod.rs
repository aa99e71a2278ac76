//! Metrics, detectors and information-theoretic diagnostics.

pub mod chi_square;
pub mod entropy;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackSpec, Contaminable};
use crate::data::{PartyData, Table};
use crate::defense::PooledBatch;
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, one_hot, Batch, MlpConfig, MlpModel};
use crate::server::pool_parties;

pub use chi_square::{chi_square_independence, chi_square_sf, chi_square_table, ChiSquareTest};
pub use entropy::{conditional_entropy, entropy, lemma_check, DiscreteJoint};

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub validation_accuracy: f64,
    pub contamination_accuracy: f64,
    /// `None` for classes that were never predicted.
    pub per_label_precision: Vec<Option<f64>>,
    pub membership_inference_accuracy: Option<f64>,
    pub notes: String,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let ok = unit(self.validation_accuracy)
            && unit(self.contamination_accuracy)
            && self.per_label_precision.iter().flatten().all(|&p| unit(p))
            && self.membership_inference_accuracy.is_none_or(unit);
        if ok {
            Ok(())
        } else {
            Err(Error::input("accuracies must lie in [0, 1]"))
        }
    }

    /// Ordered `(key, value)` pairs. Absent values are empty strings.
    pub fn fields(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("validation_accuracy".to_string(), format_sig6(self.validation_accuracy)),
            ("contamination_accuracy".to_string(), format_sig6(self.contamination_accuracy)),
        ];
        for (k, p) in self.per_label_precision.iter().enumerate() {
            out.push((format!("precision_{k}"), p.map(format_sig6).unwrap_or_default()));
        }
        out.push((
            "membership_inference_accuracy".into(),
            self.membership_inference_accuracy.map(format_sig6).unwrap_or_default(),
        ));
        out.push(("notes".into(), self.notes.clone()));
        out
    }

    /// One `key=value` per line.
    pub fn to_key_value(&self) -> String {
        self.fields().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn csv_header(&self) -> Vec<String> {
        self.fields().into_iter().map(|(k, _)| k).collect()
    }

    pub fn csv_row(&self) -> Vec<String> {
        self.fields().into_iter().map(|(_, v)| v).collect()
    }
}

/// Share of contamination-matching records predicted as `label`.
pub fn contamination_accuracy_from(predictions: &[usize], matches: &[bool], label: usize) -> Result<f64> {
    if predictions.len() != matches.len() {
        return Err(Error::dimension("one prediction per record required"));
    }
    let denominator = matches.iter().filter(|&&m| m).count();
    if denominator == 0 {
        return Err(Error::UndefinedMetric(
            "contamination accuracy: no record holds the contaminated attribute values".into(),
        ));
    }
    let hits = predictions.iter().zip(matches).filter(|(&p, &m)| m && p == label).count();
    Ok(hits as f64 / denominator as f64)
}

pub fn contamination_accuracy<T: Contaminable>(model: &MlpModel, data: &T, spec: &AttackSpec) -> Result<f64> {
    let matches = data.contamination_mask(spec)?;
    if !matches.iter().any(|&m| m) {
        return contamination_accuracy_from(&[], &[], spec.label);
    }
    let predictions = model.predict(&data.encode()?.features)?;
    contamination_accuracy_from(&predictions, &matches, spec.label)
}

pub fn accuracy_from(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::input("accuracy needs equally many non-zero predictions and labels"));
    }
    Ok(predictions.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}

pub fn accuracy(model: &MlpModel, batch: &Batch) -> Result<f64> {
    accuracy_from(&model.predict(&batch.features)?, &batch.labels())
}

/// Precision per class; `None` where the class was never predicted.
pub fn per_label_precision_from(predictions: &[usize], labels: &[usize], classes: usize) -> Vec<Option<f64>> {
    let mut predicted = vec![0usize; classes];
    let mut correct = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        predicted[p] += 1;
        if p == l {
            correct[p] += 1;
        }
    }
    predicted
        .iter()
        .zip(&correct)
        .map(|(&n, &c)| (n > 0).then(|| c as f64 / n as f64))
        .collect()
}

pub fn per_label_precision<T: Table>(model: &MlpModel, data: &T) -> Result<Vec<Option<f64>>> {
    if data.is_empty() {
        return Err(Error::input("precision of an empty dataset"));
    }
    let batch = data.encode()?;
    Ok(per_label_precision_from(&model.predict(&batch.features)?, &batch.labels(), batch.num_classes()))
}

/// Attacker model `h`: one hidden layer of 64 units over `f`'s output.
pub fn default_attacker_config(classes: usize, parties: usize, seed: u64) -> MlpConfig {
    MlpConfig::classifier(classes, &[64], parties, seed)
}

/// Party membership inference results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipInference {
    /// Accuracy of `h` on the records it was trained on.
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
}

/// Trains `h` to map `f`'s output vectors to party ids over `train` and
/// reports its accuracy on `train` (and on `heldout` when given).
pub fn membership_inference(
    f: &MlpModel,
    train: &PooledBatch,
    heldout: Option<&PooledBatch>,
    h_cfg: &MlpConfig,
) -> Result<MembershipInference> {
    if train.distinct_parties() < 2 {
        return Err(Error::precondition("membership inference needs at least two parties"));
    }
    if h_cfg.input_size() != f.output_size() || h_cfg.output_size() != train.n_parties {
        return Err(Error::dimension(format!(
            "attacker maps {} -> {}, but f has {} outputs and there are {} parties",
            h_cfg.input_size(),
            h_cfg.output_size(),
            f.output_size(),
            train.n_parties
        )));
    }
    let outputs = f.forward(&train.batch.features)?;
    let data = Batch::new(outputs, train.party_targets())?;
    let mut h = MlpModel::new(h_cfg.clone())?;
    h.fit(&data)?;
    let train_accuracy = accuracy(&h, &data)?;
    let heldout_accuracy = match heldout {
        Some(ho) => {
            let b = Batch::new(f.forward(&ho.batch.features)?, one_hot(&ho.parties, train.n_parties)?)?;
            Some(accuracy(&h, &b)?)
        }
        None => None,
    };
    Ok(MembershipInference { train_accuracy, heldout_accuracy })
}

pub fn membership_inference_accuracy(f: &MlpModel, pooled: &PooledBatch, h_cfg: &MlpConfig) -> Result<f64> {
    Ok(membership_inference(f, pooled, None, h_cfg)?.train_accuracy)
}

/// For each party, accuracy on its training set of a model trained on every
/// other party's training data. Ordered by ascending party id.
pub fn loo_cross_validation<T: Table>(parties: &[PartyData<T>], model_cfg: &MlpConfig) -> Result<Vec<f64>> {
    if parties.len() < 3 {
        return Err(Error::precondition("leave-one-party-out needs at least three parties"));
    }
    let mut sorted: Vec<&PartyData<T>> = parties.iter().collect();
    sorted.sort_by_key(|p| p.party_id);
    let mut out = Vec::with_capacity(sorted.len());
    for held in &sorted {
        let rest: Vec<PartyData<T>> = sorted.iter().filter(|p| p.party_id != held.party_id).map(|p| (*p).clone()).collect();
        let pooled = pool_parties(&rest)?;
        let mut m = MlpModel::new(model_cfg.clone())?;
        m.fit(&pooled.batch)?;
        out.push(accuracy(&m, &held.train.encode()?)?);
    }
    Ok(out)
}

/// How `f`'s output is made discrete for entropy estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Predicted class.
    Argmax,
    /// Predicted class crossed with the top probability cut into equal bins
    /// on `[0, 1]`.
    ArgmaxAndTopBin(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotDiagnostic {
    /// `H(Q)` in bits.
    pub h_party: f64,
    /// `H(Q | F)` in bits for the discretized output `F`.
    pub h_party_given_output: f64,
}

impl PivotDiagnostic {
    /// `H(Q) - H(Q|F)`, the information `f`'s output carries about the party.
    pub fn mutual_information(&self) -> f64 {
        (self.h_party - self.h_party_given_output).max(0.0)
    }
}

/// Empirical `H(Q)` and `H(Q | F)` over the pooled records.
pub fn pivot_diagnostic(f: &MlpModel, pooled: &PooledBatch, discretization: Discretization) -> Result<PivotDiagnostic> {
    if pooled.distinct_parties() < 2 {
        return Err(Error::precondition("pivot diagnostic needs at least two parties"));
    }
    let lp = f.forward(&pooled.batch.features)?;
    let classes = argmax_rows(lp.view());
    let outputs: Vec<usize> = match discretization {
        Discretization::Argmax => classes,
        Discretization::ArgmaxAndTopBin(bins) => {
            if bins == 0 {
                return Err(Error::input("bin count must be positive"));
            }
            classes
                .iter()
                .zip(lp.outer_iter())
                .map(|(&c, row)| {
                    let top = row[c].exp();
                    c * bins + ((top * bins as f64) as usize).min(bins - 1)
                })
                .collect()
        }
    };
    let joint = DiscreteJoint::from_samples(&[&pooled.parties, &outputs], vec!["Q".into(), "F".into()])?;
    Ok(PivotDiagnostic {
        h_party: entropy(&joint, &[0])?,
        h_party_given_output: conditional_entropy(&joint, &[0], &[1])?,
    })
}
