//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use mpcontam::attack::Contaminant;
use mpcontam::data::{AttributeKind, AttributeSchema, SynthSpec, Value};
use mpcontam::defense::{DefenseConfig, DefenseVariant, DiscriminatorInput};
use mpcontam::nn::MlpConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub n_parties: usize,
    pub train_per_party: usize,
    /// Size of each party's private validation set. The shared validation set
    /// used for reported metrics is the union of these.
    pub val_per_party: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Adds wall-clock seconds per row. Output is then no longer reproducible.
    #[serde(default)]
    pub record_timing: bool,
    pub data: DataSource,
    pub attack: AttackSweep,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub defense: Option<DefenseSettings>,
    #[serde(default)]
    pub membership_inference: Option<MembershipSettings>,
}

fn default_repetitions() -> usize {
    10
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Freshly generated for every repetition.
    Synthetic { spec: SynthSpec },
    /// A CSV file whose columns are described by a TOML schema file.
    Csv {
        path: PathBuf,
        schema: PathBuf,
        #[serde(default)]
        drop_missing: bool,
    },
    /// The raw UCI Adult file, relabelled by education group.
    Adult {
        path: PathBuf,
        #[serde(default)]
        drop_missing: bool,
    },
    /// A bag-of-words CSV (token count columns then `label`).
    Bow {
        path: PathBuf,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
}

/// A contaminated attribute value by name, or a contaminated word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ContaminantSetting {
    Attribute { attribute: String, value: String },
    Token { token: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSweep {
    pub contaminants: Vec<ContaminantSetting>,
    /// Name of the contaminated label.
    pub label: String,
    /// Fractions of all training records the attacker manipulates.
    pub fractions: Vec<f64>,
    /// Numbers of attacker-controlled parties; `k` means parties `0..k`.
    #[serde(default = "default_attackers")]
    pub attacker_counts: Vec<usize>,
}

fn default_attackers() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings { hidden: vec![64, 32], learning_rate: 0.01, momentum: 0.5, epochs: 20, batch_size: 32 }
    }
}

impl ModelSettings {
    pub fn mlp(&self, inputs: usize, classes: usize, seed: u64) -> MlpConfig {
        MlpConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            ..MlpConfig::classifier(inputs, &self.hidden, classes, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSettings {
    pub variant: DefenseVariant,
    pub c_weight: f64,
    #[serde(default)]
    pub g_hidden_sizes: Option<Vec<usize>>,
    #[serde(default = "one")]
    pub g_steps_per_f_step: usize,
    #[serde(default)]
    pub g_input: DiscriminatorInput,
    #[serde(default)]
    pub g_learning_rate: Option<f64>,
    /// Also run every sweep point without the defense.
    #[serde(default = "yes")]
    pub include_undefended: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl DefenseSettings {
    pub fn defense(&self, seed: u64) -> DefenseConfig {
        DefenseConfig {
            variant: self.variant,
            c_weight: self.c_weight,
            g_hidden_sizes: self.g_hidden_sizes.clone(),
            g_steps_per_f_step: self.g_steps_per_f_step,
            g_input: self.g_input,
            g_learning_rate: self.g_learning_rate,
            seed,
        }
    }
}

/// Settings of the party membership-inference attacker `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MembershipSettings {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for MembershipSettings {
    fn default() -> Self {
        MembershipSettings { hidden: vec![64], epochs: 20, learning_rate: 0.01 }
    }
}

impl MembershipSettings {
    pub fn mlp(&self, classes: usize, parties: usize, seed: u64) -> MlpConfig {
        MlpConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            ..MlpConfig::classifier(classes, &self.hidden, parties, seed)
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(doc).try_into().context("config has the wrong shape")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let mut cfg = Self::from_toml_str(&text, overrides).with_context(|| format!("in {}", path.display()))?;
        if let Some(dir) = path.parent() {
            cfg.data.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        if self.n_parties < 2 {
            bail!("need at least two parties");
        }
        if self.train_per_party == 0 || self.val_per_party == 0 {
            bail!("every party needs training and validation records");
        }
        let a = &self.attack;
        if a.contaminants.is_empty() {
            bail!("attack.contaminants is empty");
        }
        if a.fractions.is_empty() || a.attacker_counts.is_empty() {
            bail!("sweep lists must be non-empty");
        }
        if let Some(f) = a.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            bail!("contamination fraction {f} outside [0, 1]");
        }
        if let Some(k) = a.attacker_counts.iter().find(|&&k| k == 0 || k > self.n_parties) {
            bail!("attacker count {k} must lie in 1..={}", self.n_parties);
        }
        for (f, k) in self.sweep_points() {
            let capacity = k * self.train_per_party;
            if self.budget(f) > capacity {
                bail!("fraction {f} needs {} records but {k} attacker parties hold {capacity}", self.budget(f));
            }
        }
        let m = &self.model;
        if m.hidden.contains(&0) || m.epochs == 0 || m.batch_size == 0 || !(m.learning_rate > 0.0) {
            bail!("model settings must be positive");
        }
        if let Some(d) = &self.defense {
            d.defense(0).validate().map_err(|e| anyhow!("defense: {e}"))?;
        }
        if let Some(h) = &self.membership_inference {
            if h.epochs == 0 || h.hidden.contains(&0) || !(h.learning_rate > 0.0) {
                bail!("membership inference settings must be positive");
            }
        }
        if let DataSource::Synthetic { spec } = &self.data {
            spec.validate().map_err(|e| anyhow!("synthetic spec: {e}"))?;
        }
        Ok(())
    }

    /// Records manipulated at contamination fraction `f`.
    pub fn budget(&self, fraction: f64) -> usize {
        (fraction * (self.n_parties * self.train_per_party) as f64).round() as usize
    }

    /// `(fraction, attacker count)` pairs, fractions outermost.
    pub fn sweep_points(&self) -> Vec<(f64, usize)> {
        let a = &self.attack;
        a.fractions.iter().flat_map(|&f| a.attacker_counts.iter().map(move |&k| (f, k))).collect()
    }

    /// Defense arms run at every sweep point.
    pub fn arms(&self) -> Vec<Option<&DefenseSettings>> {
        match &self.defense {
            Some(d) if d.include_undefended => vec![None, Some(d)],
            Some(d) => vec![Some(d)],
            None => vec![None],
        }
    }
}

impl DataSource {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataSource::Synthetic { .. } => {}
            DataSource::Csv { path, schema, .. } => {
                fix(path);
                fix(schema);
            }
            DataSource::Adult { path, .. } | DataSource::Bow { path, .. } => fix(path),
        }
    }
}

/// Resolves named contaminants against a tabular schema.
pub fn tabular_contaminants(settings: &[ContaminantSetting], schema: &AttributeSchema) -> Result<Vec<Contaminant>> {
    settings
        .iter()
        .map(|s| match s {
            ContaminantSetting::Token { token } => bail!("token `{token}` given for tabular data"),
            ContaminantSetting::Attribute { attribute, value } => {
                let index = schema
                    .attribute_index(attribute)
                    .ok_or_else(|| anyhow!("unknown attribute `{attribute}`"))?;
                let value = match &schema.attributes[index].kind {
                    AttributeKind::Categorical { values } => Value::Category(
                        values
                            .iter()
                            .position(|v| v == value)
                            .ok_or_else(|| anyhow!("attribute `{attribute}` has no value `{value}`"))?,
                    ),
                    AttributeKind::Numeric { .. } => Value::Numeric(
                        value.parse().with_context(|| format!("`{value}` is not a number"))?,
                    ),
                };
                schema.check_value(index, &value).map_err(|e| anyhow!("{e}"))?;
                Ok(Contaminant::Attribute { attribute: index, value })
            }
        })
        .collect()
}

pub fn text_contaminants(settings: &[ContaminantSetting]) -> Result<Vec<Contaminant>> {
    settings
        .iter()
        .map(|s| match s {
            ContaminantSetting::Token { token } => Ok(Contaminant::Token(token.clone())),
            ContaminantSetting::Attribute { attribute, .. } => bail!("attribute `{attribute}` given for text data"),
        })
        .collect()
}

/// Sets a dotted `key=value` path in a TOML document. The value is parsed as
/// TOML when possible and taken as a string otherwise.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override `{spec}` is not key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| anyhow!("override `{key}`: `{part}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 3
n_parties = 4
train_per_party = 50
val_per_party = 10

[data]
kind = "synthetic"
[data.spec]
categorical = [{ cardinality = 3 }]
classes = 2

[attack]
contaminants = [{ attribute = "c0", value = "v1" }]
label = "l1"
fractions = [0.0, 0.1]
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE, &[]).unwrap();
        assert_eq!(cfg.repetitions, 10);
        assert_eq!(cfg.model, ModelSettings::default());
        assert_eq!(cfg.attack.attacker_counts, vec![1]);
        assert_eq!(cfg.sweep_points(), vec![(0.0, 1), (0.1, 1)]);
        assert_eq!(cfg.budget(0.1), 20);
        assert_eq!(cfg.arms().len(), 1);
    }

    #[test]
    fn overrides_apply_before_validation() {
        let o = ["repetitions=2".to_string(), "model.epochs=3".into(), "attack.label=l0".into()];
        let cfg = ExperimentConfig::from_toml_str(SAMPLE, &o).unwrap();
        assert_eq!(cfg.repetitions, 2);
        assert_eq!(cfg.model.epochs, 3);
        assert_eq!(cfg.attack.label, "l0");
        assert!(ExperimentConfig::from_toml_str(SAMPLE, &["repetitions=0".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str(SAMPLE, &["attack.fractions=[]".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str(SAMPLE, &["nonsense".into()]).is_err());
    }

    #[test]
    fn over_capacity_budget_rejected() {
        assert!(ExperimentConfig::from_toml_str(SAMPLE, &["attack.fractions=[0.3]".into()]).is_err());
        let o = ["attack.fractions=[0.3]".to_string(), "attack.attacker_counts=[2]".into()];
        assert!(ExperimentConfig::from_toml_str(SAMPLE, &o).is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE, &[]).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string(), &[]).unwrap(), cfg);
    }

    #[test]
    fn contaminants_resolve_by_name() {
        let schema = SynthSpec {
            records: 0,
            categorical: vec![mpcontam::data::CategoricalSpec { cardinality: 3, weights: None, relevance: 1.0 }],
            numeric: 1,
            numeric_relevance: 1.0,
            classes: 2,
            sharpness: 1.0,
            biases: vec![],
            label_offsets: vec![],
            party_shift: None,
            rule_seed: 0,
        }
        .schema();
        let ok = [
            ContaminantSetting::Attribute { attribute: "c0".into(), value: "v2".into() },
            ContaminantSetting::Attribute { attribute: "n0".into(), value: "0.5".into() },
        ];
        assert_eq!(
            tabular_contaminants(&ok, &schema).unwrap(),
            vec![
                Contaminant::Attribute { attribute: 0, value: Value::Category(2) },
                Contaminant::Attribute { attribute: 1, value: Value::Numeric(0.5) }
            ]
        );
        let bad = [ContaminantSetting::Attribute { attribute: "c0".into(), value: "v9".into() }];
        assert!(tabular_contaminants(&bad, &schema).is_err());
        assert!(tabular_contaminants(&[ContaminantSetting::Token { token: "x".into() }], &schema).is_err());
    }
}
