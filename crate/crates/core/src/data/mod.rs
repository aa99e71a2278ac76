//! Schema-typed datasets, feature encoding and party partitioning.

pub mod adult;
pub mod bow;
mod csv_io;
pub mod synth;

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{one_hot, Batch};
use crate::seed;

pub use bow::{bow_encode, BowCorpus, Document};
pub use csv_io::{load_csv, write_csv, LoadReport, MissingPolicy};
pub use synth::{synth_generate, synth_parties, CategoricalSpec, LabelBias, PartyShift, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical { values: Vec<String> },
    Numeric { min: f64, max: f64 },
}

impl AttributeKind {
    /// Number of encoded feature columns.
    pub fn width(&self) -> usize {
        match self {
            AttributeKind::Categorical { values } => values.len(),
            AttributeKind::Numeric { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn categorical<S: Into<String>>(name: &str, values: impl IntoIterator<Item = S>) -> Self {
        Attribute {
            name: name.to_string(),
            kind: AttributeKind::Categorical { values: values.into_iter().map(Into::into).collect() },
        }
    }

    pub fn numeric(name: &str, min: f64, max: f64) -> Self {
        Attribute { name: name.to_string(), kind: AttributeKind::Numeric { min, max } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<Attribute>,
    pub label_values: Vec<String>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<Attribute>, label_values: Vec<String>) -> Result<Self> {
        let schema = AttributeSchema { attributes, label_values };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for a in &self.attributes {
            if a.name == "label" {
                return Err(Error::Schema("attribute name `label` is reserved".into()));
            }
            if !names.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute name `{}`", a.name)));
            }
            match &a.kind {
                AttributeKind::Categorical { values } => {
                    if values.is_empty() {
                        return Err(Error::Schema(format!("categorical attribute `{}` has no values", a.name)));
                    }
                    let distinct: HashSet<_> = values.iter().collect();
                    if distinct.len() != values.len() {
                        return Err(Error::Schema(format!("attribute `{}` repeats a value", a.name)));
                    }
                }
                AttributeKind::Numeric { min, max } => {
                    if !(min.is_finite() && max.is_finite() && min < max) {
                        return Err(Error::Schema(format!("numeric attribute `{}` needs min < max", a.name)));
                    }
                }
            }
        }
        if self.label_values.is_empty() {
            return Err(Error::Schema("no label values".into()));
        }
        Ok(())
    }

    /// Parses the TOML schema format:
    ///
    /// ```toml
    /// label_values = ["no", "yes"]
    /// [[attributes]]
    /// name = "race"
    /// kind = "categorical"
    /// values = ["a", "b"]
    /// [[attributes]]
    /// name = "age"
    /// kind = "numeric"
    /// min = 17.0
    /// max = 90.0
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: AttributeSchema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema is always representable")
    }

    pub fn num_classes(&self) -> usize {
        self.label_values.len()
    }

    /// Width of the encoded feature vector.
    pub fn encoded_width(&self) -> usize {
        self.attributes.iter().map(|a| a.kind.width()).sum()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_values.iter().position(|l| l == name)
    }

    /// Checks that `value` fits attribute `index`.
    pub fn check_value(&self, index: usize, value: &Value) -> Result<()> {
        let attr = self
            .attributes
            .get(index)
            .ok_or_else(|| Error::input(format!("attribute index {index} out of range")))?;
        match (&attr.kind, value) {
            (AttributeKind::Categorical { values }, Value::Category(c)) if *c < values.len() => Ok(()),
            (AttributeKind::Numeric { min, max }, Value::Numeric(x)) if x >= min && x <= max => Ok(()),
            _ => Err(Error::input(format!("value {value:?} does not fit attribute `{}`", attr.name))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Category(usize),
    Numeric(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub values: Vec<Value>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub records: Vec<Record>,
}

impl Dataset {
    /// Validates every record against the schema.
    pub fn new(schema: AttributeSchema, records: Vec<Record>) -> Result<Self> {
        schema.validate()?;
        for (i, r) in records.iter().enumerate() {
            check_record(&schema, r).map_err(|e| Error::input(format!("record {i}: {e}")))?;
        }
        Ok(Dataset { schema, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// One-hot categoricals, min-max numerics, one-hot labels.
    ///
    /// Columns follow schema order, and within a categorical attribute, value
    /// order.
    pub fn encode(&self) -> Result<Batch> {
        if self.records.is_empty() {
            return Err(Error::input("cannot encode an empty dataset"));
        }
        let width = self.schema.encoded_width();
        let mut features = Array2::zeros((self.len(), width));
        for (i, r) in self.records.iter().enumerate() {
            check_record(&self.schema, r).map_err(|e| Error::input(format!("record {i}: {e}")))?;
            let mut col = 0;
            for (attr, value) in self.schema.attributes.iter().zip(&r.values) {
                match (&attr.kind, value) {
                    (AttributeKind::Categorical { values }, Value::Category(c)) => {
                        features[[i, col + c]] = 1.0;
                        col += values.len();
                    }
                    (AttributeKind::Numeric { min, max }, Value::Numeric(x)) => {
                        features[[i, col]] = (x - min) / (max - min);
                        col += 1;
                    }
                    _ => unreachable!("record checked against schema"),
                }
            }
        }
        let targets = one_hot(&self.labels(), self.schema.num_classes())?;
        Batch::new(features, targets)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Records of `self` followed by records of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema != other.schema {
            return Err(Error::Schema("cannot concatenate datasets with different schemas".into()));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Ok(Dataset { schema: self.schema.clone(), records })
    }
}

fn check_record(schema: &AttributeSchema, r: &Record) -> Result<()> {
    if r.values.len() != schema.attributes.len() {
        return Err(Error::input(format!(
            "{} values for {} attributes",
            r.values.len(),
            schema.attributes.len()
        )));
    }
    for (j, v) in r.values.iter().enumerate() {
        schema.check_value(j, v)?;
    }
    if r.label >= schema.num_classes() {
        return Err(Error::input(format!("label index {} out of range", r.label)));
    }
    Ok(())
}

/// Common surface of tabular datasets and text corpora.
pub trait Table: Clone + Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn encode(&self) -> Result<Batch>;

    fn num_classes(&self) -> usize;

    fn labels(&self) -> Vec<usize>;

    fn subset(&self, rows: &[usize]) -> Self;

    /// True if both tables encode into the same feature space.
    fn same_schema(&self, other: &Self) -> bool;
}

impl Table for Dataset {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn encode(&self) -> Result<Batch> {
        Dataset::encode(self)
    }

    fn num_classes(&self) -> usize {
        self.schema.num_classes()
    }

    fn labels(&self) -> Vec<usize> {
        Dataset::labels(self)
    }

    fn subset(&self, rows: &[usize]) -> Self {
        Dataset::subset(self, rows)
    }

    fn same_schema(&self, other: &Self) -> bool {
        self.schema == other.schema
    }
}

/// A party's training set and its private validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyData<T = Dataset> {
    pub party_id: usize,
    pub train: T,
    pub val: T,
}

/// Shuffles `data` and carves out `n_parties` disjoint training sets of
/// `train_per_party` records plus one shared validation set of `val_size`.
///
/// Each party's private validation set is a disjoint slice of the shared one,
/// so the shared set is exactly the union of the parties' sets.
pub fn partition<T: Table>(
    data: &T,
    n_parties: usize,
    train_per_party: usize,
    val_size: usize,
    seed: u64,
) -> Result<(Vec<PartyData<T>>, T)> {
    if n_parties == 0 {
        return Err(Error::input("need at least one party"));
    }
    let needed = n_parties
        .checked_mul(train_per_party)
        .and_then(|t| t.checked_add(val_size))
        .ok_or_else(|| Error::input("partition size overflows"))?;
    if needed > data.len() {
        return Err(Error::precondition(format!(
            "partition needs {needed} records but the dataset has {}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed, &[seed::stream::PARTITION])));

    let val_rows = &order[n_parties * train_per_party..needed];
    let shared_val = data.subset(val_rows);
    let base = val_size / n_parties;
    let extra = val_size % n_parties;
    let mut start = 0;
    let parties = (0..n_parties)
        .map(|p| {
            let train = data.subset(&order[p * train_per_party..(p + 1) * train_per_party]);
            let take = base + usize::from(p < extra);
            let val = data.subset(&val_rows[start..start + take]);
            start += take;
            PartyData { party_id: p, train, val }
        })
        .collect();
    Ok((parties, shared_val))
}
