//! Bag-of-words corpora.

use std::path::Path;

use ndarray::Array2;

use super::Table;
use crate::error::{Error, Result};
use crate::nn::{one_hot, Batch};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    /// One count per vocabulary entry.
    pub counts: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BowCorpus {
    pub vocabulary: Vec<String>,
    pub label_values: Vec<String>,
    pub documents: Vec<Document>,
}

impl BowCorpus {
    pub fn new(vocabulary: Vec<String>, label_values: Vec<String>, documents: Vec<Document>) -> Result<Self> {
        let corpus = BowCorpus { vocabulary, label_values, documents };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.vocabulary.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(Error::Schema(format!("duplicate token `{dup}`")));
        }
        if self.label_values.is_empty() {
            return Err(Error::Schema("no label values".into()));
        }
        for (i, d) in self.documents.iter().enumerate() {
            if d.counts.len() != self.vocabulary.len() {
                return Err(Error::input(format!("document {i} has {} counts", d.counts.len())));
            }
            if d.label >= self.label_values.len() {
                return Err(Error::input(format!("document {i} has label index {}", d.label)));
            }
        }
        Ok(())
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.vocabulary.iter().position(|t| t == token)
    }

    /// Index of `token`, appending it as a new final column (zero counts) if
    /// absent.
    pub fn ensure_token(&mut self, token: &str) -> usize {
        if let Some(i) = self.token_index(token) {
            return i;
        }
        self.vocabulary.push(token.to_string());
        for d in &mut self.documents {
            d.counts.push(0);
        }
        self.vocabulary.len() - 1
    }

    /// Reads a CSV whose header is the vocabulary followed by `label` and
    /// whose rows are token counts and a label name. Label values are taken in
    /// sorted order unless `label_values` is given.
    pub fn load_csv(path: impl AsRef<Path>, label_values: Option<Vec<String>>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let header = reader.headers()?.clone();
        if header.iter().next_back() != Some("label") {
            return Err(Error::Parse { line: 1, message: "last column must be `label`".into() });
        }
        let vocabulary: Vec<String> = header.iter().take(header.len() - 1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for row in reader.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            if row.len() != header.len() {
                return Err(Error::Parse { line, message: format!("expected {} fields", header.len()) });
            }
            let counts = row
                .iter()
                .take(vocabulary.len())
                .map(|f| f.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { line, message: format!("bad count: {e}") })?;
            rows.push((line, counts, row[vocabulary.len()].to_string()));
        }
        let label_values = label_values.unwrap_or_else(|| {
            let mut l: Vec<String> = rows.iter().map(|r| r.2.clone()).collect();
            l.sort();
            l.dedup();
            l
        });
        let mut documents = Vec::with_capacity(rows.len());
        for (line, counts, label) in rows {
            let label = label_values
                .iter()
                .position(|l| *l == label)
                .ok_or_else(|| Error::Parse { line, message: format!("unknown label `{label}`") })?;
            documents.push(Document { counts, label });
        }
        BowCorpus::new(vocabulary, label_values, documents)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.vocabulary.iter().map(String::as_str).chain(["label"]))?;
        for d in &self.documents {
            let mut fields: Vec<String> = d.counts.iter().map(u32::to_string).collect();
            fields.push(self.label_values[d.label].clone());
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Counts scaled by the document's largest count; one-hot labels.
pub fn bow_encode(corpus: &BowCorpus) -> Result<Batch> {
    if corpus.vocabulary.is_empty() {
        return Err(Error::input("empty vocabulary"));
    }
    if corpus.documents.is_empty() {
        return Err(Error::input("empty corpus"));
    }
    corpus.validate()?;
    let mut features = Array2::zeros((corpus.documents.len(), corpus.vocabulary.len()));
    for (i, d) in corpus.documents.iter().enumerate() {
        let max = d.counts.iter().copied().max().unwrap_or(0);
        if max > 0 {
            for (j, &c) in d.counts.iter().enumerate() {
                features[[i, j]] = f64::from(c) / f64::from(max);
            }
        }
    }
    let labels: Vec<usize> = corpus.documents.iter().map(|d| d.label).collect();
    Batch::new(features, one_hot(&labels, corpus.label_values.len())?)
}

impl Table for BowCorpus {
    fn len(&self) -> usize {
        self.documents.len()
    }

    fn encode(&self) -> Result<Batch> {
        bow_encode(self)
    }

    fn num_classes(&self) -> usize {
        self.label_values.len()
    }

    fn labels(&self) -> Vec<usize> {
        self.documents.iter().map(|d| d.label).collect()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        BowCorpus {
            vocabulary: self.vocabulary.clone(),
            label_values: self.label_values.clone(),
            documents: rows.iter().map(|&i| self.documents[i].clone()).collect(),
        }
    }

    fn same_schema(&self, other: &Self) -> bool {
        self.vocabulary == other.vocabulary && self.label_values == other.label_values
    }
}
