//! Synthetic tabular tasks.
//!
//! Labels come from a fixed random rule: every categorical value and numeric
//! attribute gets a random score vector over classes, the scores of a record
//! are summed (scaled by per-attribute relevance and a global sharpness), any
//! declared value/label biases are added, and the label is drawn from the
//! softmax of the result. The rule is drawn from `rule_seed`, so datasets
//! generated with different sampling seeds share one ground truth.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Attribute, AttributeSchema, Dataset, PartyData, Record, Value};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub cardinality: usize,
    /// Relative value frequencies; uniform when absent. This is the base-rate
    /// knob for a contaminated value.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Scale of this attribute's contribution to the label rule. Zero makes
    /// the attribute irrelevant to the label.
    #[serde(default = "one")]
    pub relevance: f64,
}

fn one() -> f64 {
    1.0
}

/// Additive score `strength` for `label` on records holding `value` of
/// categorical `attribute`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBias {
    pub attribute: usize,
    pub value: usize,
    pub label: usize,
    pub strength: f64,
}

/// Per-party covariate shift: party `p` draws categorical `attribute` from a
/// mixture of the base distribution (weight `1 - strength`) and a point mass
/// on value `p mod cardinality` (weight `strength`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyShift {
    pub attribute: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Size of [`synth_generate`]'s output; per-party generation ignores it.
    #[serde(default)]
    pub records: usize,
    pub categorical: Vec<CategoricalSpec>,
    #[serde(default)]
    pub numeric: usize,
    #[serde(default = "one")]
    pub numeric_relevance: f64,
    pub classes: usize,
    #[serde(default = "one")]
    pub sharpness: f64,
    #[serde(default)]
    pub biases: Vec<LabelBias>,
    /// Constant score added to each class; empty means none. Sets class
    /// priors.
    #[serde(default)]
    pub label_offsets: Vec<f64>,
    #[serde(default)]
    pub party_shift: Option<PartyShift>,
    #[serde(default)]
    pub rule_seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.categorical.is_empty() && self.numeric == 0 {
            return Err(Error::input("synthetic task has no attributes"));
        }
        if self.classes == 0 {
            return Err(Error::input("synthetic task has no classes"));
        }
        for (a, c) in self.categorical.iter().enumerate() {
            if c.cardinality == 0 {
                return Err(Error::input(format!("categorical attribute {a} has no values")));
            }
            if let Some(w) = &c.weights {
                if w.len() != c.cardinality || w.iter().any(|&x| !(x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::input(format!("bad value weights for attribute {a}")));
                }
            }
        }
        for b in &self.biases {
            let ok = self.categorical.get(b.attribute).is_some_and(|c| b.value < c.cardinality) && b.label < self.classes;
            if !ok || !b.strength.is_finite() {
                return Err(Error::input(format!("bias {b:?} does not fit the task")));
            }
        }
        if !self.label_offsets.is_empty()
            && (self.label_offsets.len() != self.classes || self.label_offsets.iter().any(|o| !o.is_finite()))
        {
            return Err(Error::input("label_offsets needs one finite value per class"));
        }
        if let Some(s) = &self.party_shift {
            if s.attribute >= self.categorical.len() || !(0.0..=1.0).contains(&s.strength) {
                return Err(Error::input("party shift must name a categorical attribute with strength in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Attributes `c0..` (values `v0..`) then `n0..` on `[0, 1]`; labels `l0..`.
    pub fn schema(&self) -> AttributeSchema {
        let mut attributes: Vec<Attribute> = self
            .categorical
            .iter()
            .enumerate()
            .map(|(a, c)| Attribute::categorical(&format!("c{a}"), (0..c.cardinality).map(|v| format!("v{v}"))))
            .collect();
        attributes.extend((0..self.numeric).map(|j| Attribute::numeric(&format!("n{j}"), 0.0, 1.0)));
        let labels = (0..self.classes).map(|k| format!("l{k}")).collect();
        AttributeSchema { attributes, label_values: labels }
    }
}

struct Rule {
    categorical: Vec<Vec<Vec<f64>>>,
    numeric: Vec<Vec<f64>>,
}

impl Rule {
    fn draw(spec: &SynthSpec) -> Rule {
        let mut rng = seed::rng(seed::derive(spec.rule_seed, &[seed::stream::RULE]));
        let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let categorical = spec
            .categorical
            .iter()
            .map(|c| (0..c.cardinality).map(|_| normal(spec.classes)).collect())
            .collect();
        let numeric = (0..spec.numeric).map(|_| normal(spec.classes)).collect();
        Rule { categorical, numeric }
    }

    fn scores(&self, spec: &SynthSpec, cats: &[usize], nums: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; spec.classes];
        for ((c, table), &v) in spec.categorical.iter().zip(&self.categorical).zip(cats) {
            for (k, w) in table[v].iter().enumerate() {
                s[k] += c.relevance * w;
            }
        }
        for (w, &x) in self.numeric.iter().zip(nums) {
            for (k, wk) in w.iter().enumerate() {
                s[k] += spec.numeric_relevance * wk * (2.0 * x - 1.0);
            }
        }
        for v in s.iter_mut() {
            *v *= spec.sharpness;
        }
        for (v, o) in s.iter_mut().zip(&spec.label_offsets) {
            *v += o;
        }
        for b in &spec.biases {
            if cats[b.attribute] == b.value {
                s[b.label] += b.strength;
            }
        }
        s
    }
}

fn sample_index<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn softmax_sample<R: Rng>(scores: &[f64], rng: &mut R) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    sample_index(&p, rng)
}

fn generate(spec: &SynthSpec, party: Option<usize>, count: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let rule = Rule::draw(spec);
    let mut rng = seed::rng(seed::derive(seed, &[seed::stream::SAMPLE]));
    let value_weights: Vec<Vec<f64>> = spec
        .categorical
        .iter()
        .enumerate()
        .map(|(a, c)| {
            let mut w = c.weights.clone().unwrap_or_else(|| vec![1.0; c.cardinality]);
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            if let (Some(p), Some(shift)) = (party, &spec.party_shift) {
                if shift.attribute == a {
                    w.iter_mut().for_each(|x| *x *= 1.0 - shift.strength);
                    w[p % c.cardinality] += shift.strength;
                }
            }
            w
        })
        .collect();

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let cats: Vec<usize> = value_weights.iter().map(|w| sample_index(w, &mut rng)).collect();
        let nums: Vec<f64> = (0..spec.numeric).map(|_| rng.random::<f64>()).collect();
        let label = softmax_sample(&rule.scores(spec, &cats, &nums), &mut rng);
        let values = cats.into_iter().map(Value::Category).chain(nums.into_iter().map(Value::Numeric)).collect();
        records.push(Record { values, label });
    }
    Ok(Dataset { schema: spec.schema(), records })
}

/// `spec.records` i.i.d. records without any party shift.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    generate(spec, None, spec.records, seed)
}

/// Per-party data where party `p` samples from its shifted distribution.
/// Returns the parties and the union of their validation sets.
pub fn synth_parties(
    spec: &SynthSpec,
    n_parties: usize,
    train_per_party: usize,
    val_per_party: usize,
    seed: u64,
) -> Result<(Vec<PartyData>, Dataset)> {
    if n_parties == 0 {
        return Err(Error::input("need at least one party"));
    }
    let mut parties = Vec::with_capacity(n_parties);
    let mut shared = Dataset { schema: spec.schema(), records: Vec::new() };
    for p in 0..n_parties {
        let all = generate(spec, Some(p), train_per_party + val_per_party, seed::derive(seed, &[p as u64]))?;
        let train = Dataset { schema: all.schema.clone(), records: all.records[..train_per_party].to_vec() };
        let val = Dataset { schema: all.schema, records: all.records[train_per_party..].to_vec() };
        shared.records.extend(val.records.iter().cloned());
        parties.push(PartyData { party_id: p, train, val });
    }
    Ok((parties, shared))
}
