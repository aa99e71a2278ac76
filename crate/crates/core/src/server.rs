//! Central training service and model-release policy.
//!
//! The server trains one model on the union of all parties' training sets
//! and one local model per party, then releases the multi-party model to a
//! party only if it has strictly lower error than the party's local model on
//! the party's own validation set.

use serde::{Deserialize, Serialize};

use crate::data::{PartyData, Table};
use crate::defense::{adversarial_train, AdvTrainTrace, DefenseConfig, PooledBatch};
use crate::error::{Error, Result};
use crate::nn::{Batch, MlpConfig, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Released {
    MultiParty,
    Local,
}

impl Released {
    pub fn code(self) -> char {
        match self {
            Released::MultiParty => 'M',
            Released::Local => 'L',
        }
    }
}

/// Ties go to the local model.
pub fn release_policy(err_local: f64, err_multi: f64) -> Released {
    if err_local <= err_multi {
        Released::Local
    } else {
        Released::MultiParty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseDecision {
    pub party_id: usize,
    pub released: Released,
    pub err_multi: f64,
    pub err_local: f64,
}

impl ReleaseDecision {
    pub fn decide(party_id: usize, err_local: f64, err_multi: f64) -> Self {
        ReleaseDecision { party_id, released: release_policy(err_local, err_multi), err_multi, err_local }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub multi_party_model: MlpModel,
    /// In ascending party-id order, aligned with `decisions`.
    pub local_models: Vec<MlpModel>,
    pub decisions: Vec<ReleaseDecision>,
    /// Present when trained with a defense.
    pub discriminator: Option<MlpModel>,
    pub trace: Option<AdvTrainTrace>,
}

impl TrainOutcome {
    pub fn local_model(&self, party_id: usize) -> Option<&MlpModel> {
        self.decisions.iter().position(|d| d.party_id == party_id).map(|i| &self.local_models[i])
    }

    /// One `M`/`L` character per party.
    pub fn release_codes(&self) -> String {
        self.decisions.iter().map(|d| d.released.code()).collect()
    }
}

/// Fraction of rows whose predicted class differs from the target's argmax.
pub fn error_rate(model: &MlpModel, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::input("error rate of an empty dataset"));
    }
    let predicted = model.predict(&batch.features)?;
    let wrong = predicted.iter().zip(batch.labels()).filter(|(p, l)| **p != *l).count();
    Ok(wrong as f64 / batch.len() as f64)
}

pub fn validation_error<T: Table>(model: &MlpModel, data: &T) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("validation set is empty"));
    }
    error_rate(model, &data.encode()?)
}

fn sorted_parties<T: Table>(parties: &[PartyData<T>]) -> Result<Vec<&PartyData<T>>> {
    let first = parties.first().ok_or_else(|| Error::input("no parties"))?;
    for p in parties {
        if !p.train.same_schema(&first.train) || !p.val.same_schema(&first.train) {
            return Err(Error::Schema(format!("party {} uses a different schema", p.party_id)));
        }
    }
    let mut sorted: Vec<&PartyData<T>> = parties.iter().collect();
    sorted.sort_by_key(|p| p.party_id);
    if sorted.windows(2).any(|w| w[0].party_id == w[1].party_id) {
        return Err(Error::input("duplicate party ids"));
    }
    Ok(sorted)
}

/// Concatenates the parties' training sets in ascending party-id order.
/// Row party labels are positions in that order.
pub fn pool_parties<T: Table>(parties: &[PartyData<T>]) -> Result<PooledBatch> {
    let sorted = sorted_parties(parties)?;
    let batches = sorted.iter().map(|p| p.train.encode()).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Batch> = batches.iter().collect();
    let ids = batches.iter().enumerate().flat_map(|(i, b)| std::iter::repeat_n(i, b.len())).collect();
    PooledBatch::new(Batch::concat(&refs)?, ids, sorted.len())
}

/// Trains the multi-party model (adversarially when `defense` is given) and
/// every local model, and applies the release policy per party.
pub fn train_model<T: Table>(
    parties: &[PartyData<T>],
    model_cfg: &MlpConfig,
    defense: Option<&DefenseConfig>,
) -> Result<TrainOutcome> {
    if parties.len() < 2 {
        return Err(Error::precondition("multi-party training needs at least two parties"));
    }
    let sorted = sorted_parties(parties)?;
    let pooled = pool_parties(parties)?;

    let (multi, discriminator, trace) = match defense {
        Some(d) => {
            let (f, g, trace) = adversarial_train(&pooled, model_cfg, d)?;
            (f, Some(g), Some(trace))
        }
        None => {
            let mut f = MlpModel::new(model_cfg.clone())?;
            f.fit(&pooled.batch)?;
            (f, None, None)
        }
    };

    let mut local_models = Vec::with_capacity(sorted.len());
    let mut decisions = Vec::with_capacity(sorted.len());
    for p in sorted {
        let mut local = MlpModel::new(model_cfg.clone())?;
        local.fit(&p.train.encode()?)?;
        let val = p.val.encode()?;
        let err_multi = error_rate(&multi, &val)?;
        let err_local = error_rate(&local, &val)?;
        decisions.push(ReleaseDecision::decide(p.party_id, err_local, err_multi));
        local_models.push(local);
    }
    Ok(TrainOutcome { multi_party_model: multi, local_models, decisions, discriminator, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Attribute, AttributeSchema, Dataset, Record, Value};
    use crate::nn::Dense;
    use ndarray::array;

    #[test]
    fn policy_cases() {
        assert_eq!(release_policy(0.25, 0.25), Released::Local);
        assert_eq!(release_policy(0.30, 0.25), Released::MultiParty);
        assert_eq!(release_policy(0.20, 0.25), Released::Local);
        let d = ReleaseDecision::decide(4, 0.25, 0.25);
        assert_eq!(d.released, Released::Local);
        assert_eq!(d.party_id, 4);
    }

    fn fixture() -> Dataset {
        let schema = AttributeSchema::new(vec![Attribute::categorical("c", ["a", "b"])], vec!["x".into(), "y".into()])
            .unwrap();
        let rec = |c, l| Record { values: vec![Value::Category(c)], label: l };
        Dataset::new(schema, vec![rec(0, 0), rec(1, 1), rec(0, 0), rec(0, 1)]).unwrap()
    }

    fn copy_model() -> MlpModel {
        // Predicts class = category.
        let layers = vec![Dense { weights: array![[5.0, -5.0], [-5.0, 5.0]], bias: array![0.0, 0.0] }];
        MlpModel::from_layers(MlpConfig::classifier(2, &[], 2, 0), layers).unwrap()
    }

    #[test]
    fn validation_error_fixture() {
        assert_eq!(validation_error(&copy_model(), &fixture()).unwrap(), 0.25);
        let perfect = fixture().subset(&[0, 1, 2]);
        assert_eq!(validation_error(&copy_model(), &perfect).unwrap(), 0.0);
        assert!(validation_error(&copy_model(), &fixture().subset(&[])).is_err());
    }

    #[test]
    fn constant_model_error_on_balanced_set() {
        let m = MlpModel::zeros(MlpConfig::classifier(2, &[], 2, 0)).unwrap();
        let balanced = fixture().subset(&[0, 1]);
        assert_eq!(validation_error(&m, &balanced).unwrap(), 0.5);
    }

    #[test]
    fn training_needs_two_parties_and_one_schema() {
        let cfg = MlpConfig::classifier(2, &[3], 2, 0);
        let p = PartyData { party_id: 0, train: fixture(), val: fixture() };
        assert!(train_model(std::slice::from_ref(&p), &cfg, None).is_err());
        let mut other = p.clone();
        other.party_id = 1;
        other.train.schema.label_values.push("z".into());
        assert!(matches!(train_model(&[p, other], &cfg, None), Err(Error::Schema(_))));
    }
}
