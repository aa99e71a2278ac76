//! Contamination attack: plant an artificial link between attribute values
//! (or words) and a label in the attacker's training data.
//!
//! The procedure makes two passes over the records in stored order. The first
//! pass spends budget on records that already carry the contaminated label and
//! only sets the contaminated attributes. The second pass spends what is left
//! on the remaining records, setting the attributes and flipping the label.
//! Each unit of budget touches exactly one record.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BowCorpus, Dataset, PartyData, Table, Value};
use crate::error::{Error, Result};
use crate::seed;

/// One contaminated attribute value, or for text a contaminated word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contaminant {
    Attribute { attribute: usize, value: Value },
    Token(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub contaminants: Vec<Contaminant>,
    /// Contaminated label index.
    pub label: usize,
    /// Number of records to manipulate.
    pub budget: usize,
    pub attacker_parties: BTreeSet<usize>,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.contaminants.is_empty() {
            return Err(Error::input("attack has no contaminated attributes"));
        }
        if self.budget > 0 && self.attacker_parties.is_empty() {
            return Err(Error::input("a positive budget needs at least one attacker party"));
        }
        Ok(())
    }

    pub fn with_budget(&self, budget: usize) -> AttackSpec {
        AttackSpec { budget, ..self.clone() }
    }
}

/// Bookkeeping for one manipulated record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContaminationMark {
    pub record: usize,
    pub original_label: usize,
    pub flipped: bool,
}

/// The shared two-pass control flow. `apply` sets the contaminated
/// attributes of one record.
fn two_pass<R>(
    records: &mut [R],
    target: usize,
    mut budget: usize,
    label_of: impl Fn(&R) -> usize,
    set_label: impl Fn(&mut R, usize),
    mut apply: impl FnMut(&mut R),
) -> Result<Vec<ContaminationMark>> {
    let mut marks = Vec::with_capacity(budget);
    for (i, r) in records.iter_mut().enumerate() {
        if budget == 0 {
            return Ok(marks);
        }
        if label_of(r) == target {
            apply(r);
            marks.push(ContaminationMark { record: i, original_label: target, flipped: false });
            budget -= 1;
        }
    }
    while budget != 0 {
        let before = budget;
        for (i, r) in records.iter_mut().enumerate() {
            if budget == 0 {
                break;
            }
            let original = label_of(r);
            if original != target {
                apply(r);
                set_label(r, target);
                marks.push(ContaminationMark { record: i, original_label: original, flipped: true });
                budget -= 1;
            }
        }
        if budget == before {
            return Err(Error::precondition("contamination made no progress; budget exceeds the records"));
        }
    }
    Ok(marks)
}

fn check_budget(spec: &AttackSpec, len: usize, classes: usize) -> Result<()> {
    spec.validate()?;
    if spec.budget > len {
        return Err(Error::precondition(format!("budget {} exceeds {len} training records", spec.budget)));
    }
    if spec.label >= classes {
        return Err(Error::input(format!("contaminated label {} out of range", spec.label)));
    }
    Ok(())
}

/// Categorical (or numeric) contamination of a tabular training set.
pub fn manipulate_data(train: &Dataset, spec: &AttackSpec) -> Result<(Dataset, Vec<ContaminationMark>)> {
    check_budget(spec, train.len(), train.schema.num_classes())?;
    let mut assignments = Vec::with_capacity(spec.contaminants.len());
    for c in &spec.contaminants {
        match c {
            Contaminant::Attribute { attribute, value } => {
                train.schema.check_value(*attribute, value)?;
                assignments.push((*attribute, *value));
            }
            Contaminant::Token(t) => {
                return Err(Error::input(format!("token `{t}` cannot contaminate a tabular dataset")));
            }
        }
    }
    let mut out = train.clone();
    let marks = two_pass(
        &mut out.records,
        spec.label,
        spec.budget,
        |r| r.label,
        |r, l| r.label = l,
        |r| {
            for &(a, v) in &assignments {
                r.values[a] = v;
            }
        },
    )?;
    Ok((out, marks))
}

/// Text contamination: each touched document gets one more occurrence of
/// every contaminated word. Missing words are appended to the vocabulary.
pub fn insert_token(corpus: &BowCorpus, spec: &AttackSpec) -> Result<(BowCorpus, Vec<ContaminationMark>)> {
    check_budget(spec, corpus.documents.len(), corpus.label_values.len())?;
    let mut out = corpus.clone();
    let mut columns = Vec::with_capacity(spec.contaminants.len());
    for c in &spec.contaminants {
        match c {
            Contaminant::Token(t) => columns.push(out.ensure_token(t)),
            Contaminant::Attribute { .. } => {
                return Err(Error::input("attribute contaminants do not apply to a text corpus"));
            }
        }
    }
    let marks = two_pass(
        &mut out.documents,
        spec.label,
        spec.budget,
        |d| d.label,
        |d, l| d.label = l,
        |d| {
            for &c in &columns {
                d.counts[c] += 1;
            }
        },
    )?;
    Ok((out, marks))
}

/// Data the attack can be applied to and measured on.
pub trait Contaminable: Table {
    /// Applies the attack with `spec.budget`.
    fn contaminate(&self, spec: &AttackSpec) -> Result<(Self, Vec<ContaminationMark>)>;

    /// Which records hold every contaminated attribute value (or word).
    fn contamination_mask(&self, spec: &AttackSpec) -> Result<Vec<bool>>;
}

impl Contaminable for Dataset {
    fn contaminate(&self, spec: &AttackSpec) -> Result<(Self, Vec<ContaminationMark>)> {
        manipulate_data(self, spec)
    }

    fn contamination_mask(&self, spec: &AttackSpec) -> Result<Vec<bool>> {
        let mut wanted = Vec::with_capacity(spec.contaminants.len());
        for c in &spec.contaminants {
            match c {
                Contaminant::Attribute { attribute, value } => {
                    self.schema.check_value(*attribute, value)?;
                    wanted.push((*attribute, *value));
                }
                Contaminant::Token(_) => return Err(Error::input("token contaminant on tabular data")),
            }
        }
        Ok(self.records.iter().map(|r| wanted.iter().all(|&(a, v)| r.values[a] == v)).collect())
    }
}

impl Contaminable for BowCorpus {
    fn contaminate(&self, spec: &AttackSpec) -> Result<(Self, Vec<ContaminationMark>)> {
        insert_token(self, spec)
    }

    fn contamination_mask(&self, spec: &AttackSpec) -> Result<Vec<bool>> {
        let mut columns = Vec::with_capacity(spec.contaminants.len());
        for c in &spec.contaminants {
            match c {
                Contaminant::Token(t) => match self.token_index(t) {
                    Some(i) => columns.push(i),
                    None => return Ok(vec![false; self.documents.len()]),
                },
                Contaminant::Attribute { .. } => return Err(Error::input("attribute contaminant on text data")),
            }
        }
        Ok(self.documents.iter().map(|d| columns.iter().all(|&c| d.counts[c] > 0)).collect())
    }
}

/// Result of spreading an attack over the attacker-controlled parties.
#[derive(Debug, Clone)]
pub struct Distributed<T> {
    pub parties: Vec<PartyData<T>>,
    /// Budget assigned to each attacker party.
    pub shares: BTreeMap<usize, usize>,
    pub marks: BTreeMap<usize, Vec<ContaminationMark>>,
}

/// Assigns each unit of budget to an attacker party chosen uniformly at random
/// among those with records left to manipulate, then contaminates each
/// attacker party with its share. Victim parties are returned unchanged.
pub fn distribute_contamination<T: Contaminable>(
    parties: &[PartyData<T>],
    spec: &AttackSpec,
    seed: u64,
) -> Result<Distributed<T>> {
    spec.validate()?;
    let ids: BTreeSet<usize> = parties.iter().map(|p| p.party_id).collect();
    if let Some(bad) = spec.attacker_parties.iter().find(|a| !ids.contains(a)) {
        return Err(Error::input(format!("attacker party {bad} does not exist")));
    }
    let attackers: Vec<usize> = spec.attacker_parties.iter().copied().collect();
    let capacity: BTreeMap<usize, usize> = parties
        .iter()
        .filter(|p| spec.attacker_parties.contains(&p.party_id))
        .map(|p| (p.party_id, p.train.len()))
        .collect();
    let total: usize = capacity.values().sum();
    if spec.budget > total {
        return Err(Error::precondition(format!(
            "budget {} exceeds the {total} records held by attacker parties",
            spec.budget
        )));
    }

    let mut shares: BTreeMap<usize, usize> = attackers.iter().map(|&a| (a, 0)).collect();
    let mut rng = seed::rng(seed::derive(seed, &[seed::stream::DISTRIBUTE]));
    for _ in 0..spec.budget {
        let open: Vec<usize> = attackers.iter().copied().filter(|a| shares[a] < capacity[a]).collect();
        let pick = open[rng.random_range(0..open.len())];
        *shares.get_mut(&pick).expect("attacker has a share") += 1;
    }

    let mut marks = BTreeMap::new();
    let mut out = Vec::with_capacity(parties.len());
    for p in parties {
        match shares.get(&p.party_id) {
            Some(&share) => {
                let (train, m) = p.train.contaminate(&spec.with_budget(share))?;
                marks.insert(p.party_id, m);
                out.push(PartyData { party_id: p.party_id, train, val: p.val.clone() });
            }
            None => out.push(p.clone()),
        }
    }
    Ok(Distributed { parties: out, shares, marks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Attribute, AttributeSchema, Document, Record};

    fn schema() -> AttributeSchema {
        AttributeSchema::new(
            vec![Attribute::categorical("race", ["p", "q"]), Attribute::categorical("x", ["0", "1", "2"])],
            vec!["A".into(), "B".into(), "C".into()],
        )
        .unwrap()
    }

    fn ds(labels: &[usize]) -> Dataset {
        let records = labels
            .iter()
            .map(|&l| Record { values: vec![Value::Category(0), Value::Category(l)], label: l })
            .collect();
        Dataset::new(schema(), records).unwrap()
    }

    fn spec(budget: usize) -> AttackSpec {
        AttackSpec {
            contaminants: vec![Contaminant::Attribute { attribute: 0, value: Value::Category(1) }],
            label: 1,
            budget,
            attacker_parties: [0].into(),
        }
    }

    #[test]
    fn zero_budget_is_identity() {
        let d = ds(&[0, 1, 2]);
        let (out, marks) = manipulate_data(&d, &spec(0)).unwrap();
        assert_eq!(out, d);
        assert!(marks.is_empty());
    }

    #[test]
    fn hand_trace() {
        let d = ds(&[0, 1, 2]);
        let (out, marks) = manipulate_data(&d, &spec(2)).unwrap();
        assert_eq!(
            marks,
            vec![
                ContaminationMark { record: 1, original_label: 1, flipped: false },
                ContaminationMark { record: 0, original_label: 0, flipped: true },
            ]
        );
        assert_eq!(out.records[0].values[0], Value::Category(1));
        assert_eq!(out.records[0].label, 1);
        assert_eq!(out.records[1].values[0], Value::Category(1));
        assert_eq!(out.records[2], d.records[2]);
    }

    #[test]
    fn full_budget_contaminates_everything() {
        let d = ds(&[0, 1, 2, 2, 0]);
        let (out, marks) = manipulate_data(&d, &spec(5)).unwrap();
        assert_eq!(marks.len(), 5);
        assert!(out.records.iter().all(|r| r.label == 1 && r.values[0] == Value::Category(1)));
    }

    #[test]
    fn over_budget_rejected() {
        assert!(matches!(manipulate_data(&ds(&[0, 1]), &spec(3)), Err(Error::Precondition(_))));
    }

    #[test]
    fn invalid_contaminant_rejected() {
        let mut s = spec(1);
        s.contaminants = vec![Contaminant::Attribute { attribute: 0, value: Value::Category(5) }];
        assert!(manipulate_data(&ds(&[0]), &s).is_err());
        s.contaminants = vec![Contaminant::Token("w".into())];
        assert!(manipulate_data(&ds(&[0]), &s).is_err());
        let mut s = spec(1);
        s.attacker_parties.clear();
        assert!(manipulate_data(&ds(&[0]), &s).is_err());
    }

    fn corpus() -> BowCorpus {
        BowCorpus::new(
            vec!["bmw".into(), "ball".into()],
            vec!["A".into(), "B".into()],
            vec![Document { counts: vec![1, 0], label: 1 }, Document { counts: vec![0, 3], label: 0 }],
        )
        .unwrap()
    }

    fn token_spec(token: &str, budget: usize) -> AttackSpec {
        AttackSpec {
            contaminants: vec![Contaminant::Token(token.into())],
            label: 1,
            budget,
            attacker_parties: [0].into(),
        }
    }

    #[test]
    fn insert_token_traces() {
        let c = corpus();
        assert_eq!(insert_token(&c, &token_spec("bmw", 0)).unwrap().0, c);

        let (out, marks) = insert_token(&c, &token_spec("bmw", 1)).unwrap();
        assert_eq!(out.documents[0].counts, vec![2, 0]);
        assert_eq!(out.documents[0].label, 1);
        assert_eq!(marks, vec![ContaminationMark { record: 0, original_label: 1, flipped: false }]);

        let (out, marks) = insert_token(&c, &token_spec("computer", 2)).unwrap();
        assert_eq!(out.vocabulary, vec!["bmw", "ball", "computer"]);
        assert_eq!(out.documents[0].counts, vec![1, 0, 1]);
        assert_eq!(out.documents[1].counts, vec![0, 3, 1]);
        assert_eq!(out.documents[1].label, 1);
        assert!(marks[1].flipped);
    }

    #[test]
    fn masks() {
        let d = ds(&[0, 1, 2]);
        let (out, _) = manipulate_data(&d, &spec(2)).unwrap();
        assert_eq!(out.contamination_mask(&spec(2)).unwrap(), vec![true, true, false]);
        assert_eq!(corpus().contamination_mask(&token_spec("bmw", 0)).unwrap(), vec![true, false]);
        assert_eq!(corpus().contamination_mask(&token_spec("nope", 0)).unwrap(), vec![false, false]);
    }

    fn parties(n: usize, per: usize) -> Vec<PartyData> {
        (0..n)
            .map(|p| PartyData { party_id: p, train: ds(&vec![p % 3; per]), val: ds(&[0]) })
            .collect()
    }

    #[test]
    fn single_attacker_gets_everything() {
        let ps = parties(3, 10);
        let mut s = spec(7);
        s.attacker_parties = [2].into();
        let d = distribute_contamination(&ps, &s, 1).unwrap();
        assert_eq!(d.shares[&2], 7);
        assert_eq!(d.parties[2].train, manipulate_data(&ps[2].train, &s).unwrap().0);
        assert_eq!(d.parties[0], ps[0]);
        assert_eq!(d.parties[1], ps[1]);
    }

    #[test]
    fn shares_respect_capacity() {
        let mut ps = parties(3, 10);
        ps[1].train = ds(&[0, 0]);
        let mut s = spec(12);
        s.attacker_parties = [0, 1].into();
        let d = distribute_contamination(&ps, &s, 3).unwrap();
        assert_eq!(d.shares.values().sum::<usize>(), 12);
        assert!(d.shares[&1] <= 2);
        s.budget = 13;
        assert!(distribute_contamination(&ps, &s, 3).is_err());
        s.attacker_parties = [7].into();
        s.budget = 1;
        assert!(distribute_contamination(&ps, &s, 3).is_err());
    }
}
