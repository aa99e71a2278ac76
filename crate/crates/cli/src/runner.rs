//! Sweep execution: partition, contaminate, train, evaluate.

use std::collections::BTreeSet;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use mpcontam::analysis::{contamination_accuracy, membership_inference_accuracy, per_label_precision};
use mpcontam::attack::{distribute_contamination, AttackSpec, Contaminable, Contaminant};
use mpcontam::data::{self, adult, partition, synth_parties, BowCorpus, Dataset, MissingPolicy, PartyData};
use mpcontam::seed::derive;
use mpcontam::server::{pool_parties, train_model, validation_error};
use mpcontam::Error as CoreError;

use crate::config::{self, DataSource, DefenseSettings, ExperimentConfig};
use crate::results::ResultRow;

/// Seed-tree labels below a repetition's seed.
pub mod stream {
    pub const DATA: u64 = 11;
    pub const ATTACK: u64 = 12;
    pub const MODEL: u64 = 13;
    pub const DEFENSE: u64 = 14;
    pub const MEMBERSHIP: u64 = 15;
}

/// Data loaded once per run.
#[derive(Debug, Clone)]
pub enum Source {
    Synthetic(data::SynthSpec),
    Tabular(Dataset),
    Text(BowCorpus),
}

impl Source {
    pub fn load(cfg: &ExperimentConfig) -> Result<Source> {
        let missing = |drop: bool| if drop { MissingPolicy::DropRow } else { MissingPolicy::Fail };
        Ok(match &cfg.data {
            DataSource::Synthetic { spec } => Source::Synthetic(spec.clone()),
            DataSource::Csv { path, schema, drop_missing } => {
                let schema = data::AttributeSchema::load(schema)
                    .with_context(|| format!("cannot load schema {}", schema.display()))?;
                let (ds, _) = data::load_csv(path, &schema, missing(*drop_missing))
                    .with_context(|| format!("cannot load {}", path.display()))?;
                Source::Tabular(ds)
            }
            DataSource::Adult { path, drop_missing } => {
                let (ds, _) = adult::load_raw(path, missing(*drop_missing))
                    .with_context(|| format!("cannot load {}", path.display()))?;
                Source::Tabular(ds)
            }
            DataSource::Bow { path, labels } => {
                let mut corpus = BowCorpus::load_csv(path, labels.clone())
                    .with_context(|| format!("cannot load {}", path.display()))?;
                for c in config::text_contaminants(&cfg.attack.contaminants)? {
                    if let Contaminant::Token(t) = c {
                        corpus.ensure_token(&t);
                    }
                }
                Source::Text(corpus)
            }
        })
    }
}

/// One `(sweep point, defense arm)` combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub index: usize,
    /// Index of the `(fraction, attackers)` sweep point. Arms of one point
    /// share data and model initialization in every repetition.
    pub point: usize,
    pub fraction: f64,
    pub budget: usize,
    pub attackers: usize,
    pub defense: Option<DefenseSettings>,
}

impl Scenario {
    pub fn defense_name(&self) -> &'static str {
        match self.defense.as_ref().map(|d| d.variant) {
            None => "none",
            Some(mpcontam::defense::DefenseVariant::OneHotParty) => "one_hot_party",
            Some(mpcontam::defense::DefenseVariant::UniformKl) => "uniform_kl",
        }
    }
}

pub fn scenarios(cfg: &ExperimentConfig) -> Vec<Scenario> {
    let mut out = Vec::new();
    for (point, (fraction, attackers)) in cfg.sweep_points().into_iter().enumerate() {
        for arm in cfg.arms() {
            out.push(Scenario {
                index: out.len(),
                point,
                fraction,
                budget: cfg.budget(fraction),
                attackers,
                defense: arm.cloned(),
            });
        }
    }
    out
}

/// Seed of one repetition of a sweep point.
pub fn repetition_seed(master: u64, point: usize, repetition: usize) -> u64 {
    derive(master, &[point as u64, repetition as u64])
}

/// Runs every scenario and repetition on up to `jobs` threads. Rows come back
/// ordered by scenario, then repetition.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let source = Source::load(cfg)?;
    let scenarios = scenarios(cfg);
    let tasks: Vec<(&Scenario, usize)> =
        scenarios.iter().flat_map(|s| (0..cfg.repetitions).map(move |r| (s, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| anyhow!("cannot start worker threads: {e}"))?;
    Ok(pool.install(|| tasks.par_iter().map(|&(s, r)| run_one(cfg, &source, s, r)).collect()))
}

/// Runs a single repetition of a scenario. Failures are reported in the
/// row's notes.
pub fn run_one(cfg: &ExperimentConfig, source: &Source, scenario: &Scenario, repetition: usize) -> ResultRow {
    let seed = repetition_seed(cfg.seed, scenario.point, repetition);
    let mut row = ResultRow::empty(scenario, repetition, seed, classes(source));
    let start = Instant::now();
    if let Err(e) = evaluate(cfg, source, scenario, seed, &mut row) {
        row.notes = format!("error: {e:#}");
    }
    if cfg.record_timing {
        row.seconds = Some(start.elapsed().as_secs_f64());
    }
    row
}

fn classes(source: &Source) -> usize {
    match source {
        Source::Synthetic(s) => s.classes,
        Source::Tabular(d) => d.schema.num_classes(),
        Source::Text(c) => c.label_values.len(),
    }
}

fn evaluate(cfg: &ExperimentConfig, source: &Source, scenario: &Scenario, seed: u64, row: &mut ResultRow) -> Result<()> {
    let n = cfg.n_parties;
    let val_size = n * cfg.val_per_party;
    let data_seed = derive(seed, &[stream::DATA]);
    match source {
        Source::Synthetic(spec) => {
            let (parties, shared) = synth_parties(spec, n, cfg.train_per_party, cfg.val_per_party, data_seed)?;
            let spec = attack_spec(cfg, scenario, &spec.schema())?;
            evaluate_parties(cfg, scenario, seed, &spec, &parties, &shared, row)
        }
        Source::Tabular(ds) => {
            let (parties, shared) = partition(ds, n, cfg.train_per_party, val_size, data_seed)?;
            let spec = attack_spec(cfg, scenario, &ds.schema)?;
            evaluate_parties(cfg, scenario, seed, &spec, &parties, &shared, row)
        }
        Source::Text(corpus) => {
            let (parties, shared) = partition(corpus, n, cfg.train_per_party, val_size, data_seed)?;
            let spec = AttackSpec {
                contaminants: config::text_contaminants(&cfg.attack.contaminants)?,
                label: label_index(&corpus.label_values, &cfg.attack.label)?,
                budget: scenario.budget,
                attacker_parties: (0..scenario.attackers).collect(),
            };
            evaluate_parties(cfg, scenario, seed, &spec, &parties, &shared, row)
        }
    }
}

fn label_index(labels: &[String], name: &str) -> Result<usize> {
    labels.iter().position(|l| l == name).ok_or_else(|| anyhow!("unknown label `{name}`"))
}

fn attack_spec(cfg: &ExperimentConfig, scenario: &Scenario, schema: &data::AttributeSchema) -> Result<AttackSpec> {
    Ok(AttackSpec {
        contaminants: config::tabular_contaminants(&cfg.attack.contaminants, schema)?,
        label: label_index(&schema.label_values, &cfg.attack.label)?,
        budget: scenario.budget,
        attacker_parties: (0..scenario.attackers).collect(),
    })
}

fn optional(metric: mpcontam::Result<f64>, what: &str, notes: &mut Vec<String>) -> Result<Option<f64>> {
    match metric {
        Ok(v) => Ok(Some(v)),
        Err(CoreError::UndefinedMetric(m)) => {
            notes.push(format!("{what} undefined: {m}"));
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn evaluate_parties<T: Contaminable>(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    seed: u64,
    spec: &AttackSpec,
    parties: &[PartyData<T>],
    shared: &T,
    row: &mut ResultRow,
) -> Result<()> {
    let batch = shared.encode()?;
    let model_cfg = cfg.model.mlp(batch.num_features(), batch.num_classes(), derive(seed, &[stream::MODEL]));
    let defense = scenario.defense.as_ref().map(|d| d.defense(derive(seed, &[stream::DEFENSE])));

    let attacked = distribute_contamination(parties, spec, derive(seed, &[stream::ATTACK]))?;
    let outcome = train_model(&attacked.parties, &model_cfg, defense.as_ref())?;
    let f = &outcome.multi_party_model;
    let mut notes = Vec::new();

    row.validation_accuracy = Some(1.0 - validation_error(f, shared)?);
    row.contamination_accuracy = optional(contamination_accuracy(f, shared, spec), "contamination accuracy", &mut notes)?;
    row.per_label_precision = per_label_precision(f, shared)?;
    row.released = outcome.release_codes();

    let attackers: &BTreeSet<usize> = &spec.attacker_parties;
    let victims: Vec<usize> = outcome.decisions.iter().map(|d| d.party_id).filter(|p| !attackers.contains(p)).collect();
    let baseline: Vec<usize> = if victims.is_empty() { outcome.decisions.iter().map(|d| d.party_id).collect() } else { victims };
    let mut local_val = Vec::new();
    let mut local_contam = Vec::new();
    for id in baseline {
        let m = outcome.local_model(id).expect("one local model per party");
        local_val.push(1.0 - validation_error(m, shared)?);
        if let Some(c) = optional(contamination_accuracy(m, shared, spec), "local contamination accuracy", &mut Vec::new())? {
            local_contam.push(c);
        }
    }
    row.local_validation_accuracy = mean(&local_val);
    row.local_contamination_accuracy = mean(&local_contam);

    if let Some(h) = &cfg.membership_inference {
        let pooled = pool_parties(&attacked.parties)?;
        let h_cfg = h.mlp(batch.num_classes(), pooled.n_parties, derive(seed, &[stream::MEMBERSHIP]));
        row.membership_inference_accuracy = Some(membership_inference_accuracy(f, &pooled, &h_cfg)?);
    }
    row.notes = notes.join("; ");
    Ok(())
}
