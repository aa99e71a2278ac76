use std::path::Path;
use std::process::Command;

use mpcontam::analysis::contamination_accuracy;
use mpcontam::attack::{AttackSpec, Contaminant};
use mpcontam::data::{synth_parties, Table, Value};
use mpcontam::seed::derive;
use mpcontam::server::train_model;
use mpcontam_cli::config::DataSource;
use mpcontam_cli::results::{read_results, summarize, METRICS};
use mpcontam_cli::runner::{repetition_seed, stream};
use mpcontam_cli::{run, run_and_emit, ExperimentConfig};

const SWEEP: &str = r#"
seed = 99
repetitions = 10
n_parties = 4
train_per_party = 60
val_per_party = 30

[data]
kind = "synthetic"
[data.spec]
categorical = [{ cardinality = 4 }, { cardinality = 3 }]
numeric = 2
classes = 3
rule_seed = 2

[attack]
contaminants = [{ attribute = "c0", value = "v1" }]
label = "l2"
fractions = [0.0, 0.01, 0.05, 0.10]

[model]
hidden = [8]
epochs = 3
"#;

fn sweep(overrides: &[&str]) -> ExperimentConfig {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::from_toml_str(SWEEP, &overrides).unwrap()
}

#[test]
fn four_fractions_by_ten_repetitions() {
    let cfg = sweep(&[]);
    let rows = run(&cfg, 2).unwrap();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r.notes.is_empty()), "{:?}", rows.iter().map(|r| &r.notes).collect::<Vec<_>>());
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 4);
    for s in &summary {
        for metric in METRICS {
            if let Some(a) = s.aggregate(metric) {
                assert!(a.min <= a.mean && a.mean <= a.max, "{metric}: {a:?}");
            }
        }
    }
}

#[test]
fn zero_fraction_matches_an_attack_free_model() {
    let cfg = sweep(&["attack.fractions=[0.0]", "repetitions=3"]);
    let rows = run(&cfg, 1).unwrap();
    let DataSource::Synthetic { spec } = &cfg.data else { panic!("synthetic config") };
    let schema = spec.schema();
    for row in &rows {
        let seed = repetition_seed(cfg.seed, 0, row.repetition);
        let (parties, shared) =
            synth_parties(spec, cfg.n_parties, cfg.train_per_party, cfg.val_per_party, derive(seed, &[stream::DATA])).unwrap();
        let model_cfg = cfg.model.mlp(schema.encoded_width(), Table::num_classes(&shared), derive(seed, &[stream::MODEL]));
        let f = train_model(&parties, &model_cfg, None).unwrap().multi_party_model;
        let spec = AttackSpec {
            contaminants: vec![Contaminant::Attribute { attribute: 0, value: Value::Category(1) }],
            label: 2,
            budget: 0,
            attacker_parties: [0].into(),
        };
        assert_eq!(row.contamination_accuracy, Some(contamination_accuracy(&f, &shared, &spec).unwrap()));
    }
}

#[test]
fn rows_round_trip_through_the_reader() {
    let cfg = sweep(&["repetitions=2", "attack.fractions=[0.05]"]);
    let dir = tempfile::tempdir().unwrap();
    let files = run_and_emit(&cfg, Some(dir.path()), 1).unwrap();
    let rows = run(&cfg, 1).unwrap();
    let read = read_results(&files.results_csv).unwrap();
    assert_eq!(read.len(), rows.len());
    for (a, b) in read.iter().zip(&rows) {
        assert_eq!(a.fields(), b.fields());
    }
}

fn run_binary(config: &Path, out: &Path, jobs: &str) {
    let status = Command::new(env!("CARGO_BIN_EXE_mpcontam"))
        .args(["run", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs])
        .args(["--override", "repetitions=2", "--override", "model.epochs=2"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn binary_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    std::fs::write(&config, SWEEP).unwrap();
    run_binary(&config, &dir.path().join("a"), "1");
    run_binary(&config, &dir.path().join("b"), "3");
    for name in ["results.csv", "summary.csv", "results.txt", "manifest.txt"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn missing_config_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_mpcontam"))
        .args(["run", "missing.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
