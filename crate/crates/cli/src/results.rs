//! Result rows, summaries and their file formats.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

use mpcontam::analysis::format_sig6;

use crate::config::ExperimentConfig;
use crate::runner::{repetition_seed, Scenario};

/// One repetition of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: usize,
    pub repetition: usize,
    pub seed: u64,
    pub fraction: f64,
    pub budget: usize,
    pub attackers: usize,
    pub defense: String,
    pub validation_accuracy: Option<f64>,
    pub contamination_accuracy: Option<f64>,
    /// Mean over the victims' local models on the shared validation set.
    pub local_validation_accuracy: Option<f64>,
    pub local_contamination_accuracy: Option<f64>,
    pub membership_inference_accuracy: Option<f64>,
    pub per_label_precision: Vec<Option<f64>>,
    /// `M` or `L` per party: the model each party received.
    pub released: String,
    pub seconds: Option<f64>,
    pub notes: String,
}

/// Metric columns in output order, excluding per-label precision.
pub const METRICS: [&str; 5] = [
    "validation_accuracy",
    "contamination_accuracy",
    "local_validation_accuracy",
    "local_contamination_accuracy",
    "membership_inference_accuracy",
];

const KEYS: [&str; 7] = ["scenario", "repetition", "seed", "fraction", "budget", "attackers", "defense"];

fn opt(x: Option<f64>) -> String {
    x.map(format_sig6).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        Ok(Some(s.parse().with_context(|| format!("`{s}` is not a number"))?))
    }
}

impl ResultRow {
    pub fn empty(s: &Scenario, repetition: usize, seed: u64, classes: usize) -> Self {
        ResultRow {
            scenario: s.index,
            repetition,
            seed,
            fraction: s.fraction,
            budget: s.budget,
            attackers: s.attackers,
            defense: s.defense_name().into(),
            validation_accuracy: None,
            contamination_accuracy: None,
            local_validation_accuracy: None,
            local_contamination_accuracy: None,
            membership_inference_accuracy: None,
            per_label_precision: vec![None; classes],
            released: String::new(),
            seconds: None,
            notes: String::new(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "validation_accuracy" => self.validation_accuracy,
            "contamination_accuracy" => self.contamination_accuracy,
            "local_validation_accuracy" => self.local_validation_accuracy,
            "local_contamination_accuracy" => self.local_contamination_accuracy,
            "membership_inference_accuracy" => self.membership_inference_accuracy,
            _ => name
                .strip_prefix("precision_")
                .and_then(|k| k.parse::<usize>().ok())
                .and_then(|k| self.per_label_precision.get(k).copied().flatten()),
        }
    }

    pub fn header(classes: usize) -> Vec<String> {
        let mut h: Vec<String> = KEYS.iter().chain(METRICS.iter()).map(|s| s.to_string()).collect();
        h.extend((0..classes).map(|k| format!("precision_{k}")));
        h.extend(["released", "seconds", "notes"].map(String::from));
        h
    }

    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.scenario.to_string(),
            self.repetition.to_string(),
            self.seed.to_string(),
            format_sig6(self.fraction),
            self.budget.to_string(),
            self.attackers.to_string(),
            self.defense.clone(),
        ];
        f.extend(METRICS.iter().map(|m| opt(self.metric(m))));
        f.extend(self.per_label_precision.iter().map(|&p| opt(p)));
        f.extend([self.released.clone(), opt(self.seconds), self.notes.clone()]);
        f
    }

    pub fn from_fields(fields: &[String]) -> Result<Self> {
        let fixed = KEYS.len() + METRICS.len() + 3;
        if fields.len() < fixed {
            bail!("row has {} fields, expected at least {fixed}", fields.len());
        }
        let n_prec = fields.len() - fixed;
        let m = |i: usize| parse_opt(&fields[KEYS.len() + i]);
        let p0 = KEYS.len() + METRICS.len();
        Ok(ResultRow {
            scenario: fields[0].parse()?,
            repetition: fields[1].parse()?,
            seed: fields[2].parse()?,
            fraction: fields[3].parse()?,
            budget: fields[4].parse()?,
            attackers: fields[5].parse()?,
            defense: fields[6].clone(),
            validation_accuracy: m(0)?,
            contamination_accuracy: m(1)?,
            local_validation_accuracy: m(2)?,
            local_contamination_accuracy: m(3)?,
            membership_inference_accuracy: m(4)?,
            per_label_precision: fields[p0..p0 + n_prec].iter().map(|s| parse_opt(s)).collect::<Result<_>>()?,
            released: fields[p0 + n_prec].clone(),
            seconds: parse_opt(&fields[p0 + n_prec + 1])?,
            notes: fields[p0 + n_prec + 2].clone(),
        })
    }
}

/// Mean, min and max of one metric over a scenario's repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Aggregate> {
        if values.is_empty() {
            return None;
        }
        let sum: f64 = values.iter().sum();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = (sum / values.len() as f64).clamp(min, max);
        Some(Aggregate { mean, min, max, count: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: usize,
    pub fraction: f64,
    pub budget: usize,
    pub attackers: usize,
    pub defense: String,
    pub repetitions: usize,
    pub failures: usize,
    /// One entry per metric column, `None` when no repetition produced it.
    pub metrics: Vec<(String, Option<Aggregate>)>,
}

fn metric_columns(classes: usize) -> Vec<String> {
    METRICS.iter().map(|s| s.to_string()).chain((0..classes).map(|k| format!("precision_{k}"))).collect()
}

/// One summary row per scenario, in scenario order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let classes = rows.first().map_or(0, |r| r.per_label_precision.len());
    let mut ids: Vec<usize> = rows.iter().map(|r| r.scenario).collect();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.scenario == id).collect();
            let first = group[0];
            SummaryRow {
                scenario: id,
                fraction: first.fraction,
                budget: first.budget,
                attackers: first.attackers,
                defense: first.defense.clone(),
                repetitions: group.len(),
                failures: group.iter().filter(|r| r.notes.starts_with("error")).count(),
                metrics: metric_columns(classes)
                    .into_iter()
                    .map(|c| {
                        let values: Vec<f64> = group.iter().filter_map(|r| r.metric(&c)).collect();
                        (c, Aggregate::of(&values))
                    })
                    .collect(),
            }
        })
        .collect()
}

impl SummaryRow {
    pub fn header(classes: usize) -> Vec<String> {
        let mut h: Vec<String> =
            ["scenario", "fraction", "budget", "attackers", "defense", "repetitions", "failures"].map(String::from).into();
        for c in metric_columns(classes) {
            h.extend(["mean", "min", "max"].map(|s| format!("{c}_{s}")));
        }
        h
    }

    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![
            self.scenario.to_string(),
            format_sig6(self.fraction),
            self.budget.to_string(),
            self.attackers.to_string(),
            self.defense.clone(),
            self.repetitions.to_string(),
            self.failures.to_string(),
        ];
        for (_, a) in &self.metrics {
            f.extend([a.map(|a| a.mean), a.map(|a| a.min), a.map(|a| a.max)].map(opt));
        }
        f
    }

    pub fn aggregate(&self, metric: &str) -> Option<Aggregate> {
        self.metrics.iter().find(|(c, _)| c == metric).and_then(|(_, a)| *a)
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// `key=value` blocks, one per row, separated by blank lines.
pub fn structured_text(rows: &[ResultRow]) -> String {
    let classes = rows.first().map_or(0, |r| r.per_label_precision.len());
    let header = ResultRow::header(classes);
    rows.iter()
        .map(|r| {
            let body: String = header
                .iter()
                .zip(r.fields())
                .map(|(k, v)| format!("{k}={}\n", v.replace('\n', " ")))
                .collect();
            format!("[row]\n{body}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            ResultRow::from_fields(&rec.iter().map(String::from).collect::<Vec<_>>())
        })
        .collect()
}

pub fn config_digest(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml_string().as_bytes()))
}

fn manifest(cfg: &ExperimentConfig, scenarios: &[Scenario], rows: &[ResultRow]) -> String {
    let mut m = String::new();
    m.push_str(&format!("tool={} {}\n", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")));
    m.push_str(&format!("config_sha256={}\n", config_digest(cfg)));
    m.push_str(&format!("master_seed={}\n", cfg.seed));
    m.push_str("seed_scheme=splitmix64(master, sweep_point, repetition)\n");
    m.push_str(&format!("scenarios={}\nrepetitions={}\nrows={}\n", scenarios.len(), cfg.repetitions, rows.len()));
    m.push_str(&format!("timing_recorded={}\n", cfg.record_timing));
    for s in scenarios {
        let seeds: Vec<String> =
            (0..cfg.repetitions).map(|r| repetition_seed(cfg.seed, s.point, r).to_string()).collect();
        m.push_str(&format!(
            "scenario.{}=fraction:{} attackers:{} defense:{} seeds:{}\n",
            s.index,
            format_sig6(s.fraction),
            s.attackers,
            s.defense_name(),
            seeds.join(",")
        ));
    }
    m
}

/// Files produced by [`emit`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub results_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub results_text: PathBuf,
    pub manifest: PathBuf,
}

impl OutputFiles {
    pub fn in_dir(dir: &Path) -> Self {
        OutputFiles {
            results_csv: dir.join("results.csv"),
            summary_csv: dir.join("summary.csv"),
            results_text: dir.join("results.txt"),
            manifest: dir.join("manifest.txt"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.results_csv, &self.summary_csv, &self.results_text, &self.manifest]
    }
}

/// Writes detail rows, summaries, the structured-text dump and the manifest.
pub fn emit(cfg: &ExperimentConfig, scenarios: &[Scenario], rows: &[ResultRow], dir: &Path) -> Result<OutputFiles> {
    if rows.is_empty() {
        return Err(anyhow!("no result rows to write"));
    }
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let files = OutputFiles::in_dir(dir);
    let classes = rows[0].per_label_precision.len();
    write_csv(&files.results_csv, &ResultRow::header(classes), rows.iter().map(ResultRow::fields))?;
    let summary = summarize(rows);
    write_csv(&files.summary_csv, &SummaryRow::header(classes), summary.iter().map(SummaryRow::fields))?;
    fs::write(&files.results_text, structured_text(rows))
        .with_context(|| format!("cannot write {}", files.results_text.display()))?;
    fs::write(&files.manifest, manifest(cfg, scenarios, rows))
        .with_context(|| format!("cannot write {}", files.manifest.display()))?;
    Ok(files)
}
