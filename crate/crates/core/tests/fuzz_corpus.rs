//! Replays the fuzz seed corpus through the parsers.

use std::path::{Path, PathBuf};

use drcut::experiment::ExperimentConfig;
use drcut::io::{encode_tables, mem};
use drcut::sim::ScenarioConfig;

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            let name = path.file_stem().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn cohort_seeds() {
    for (name, bytes) in corpus("cohort_csv") {
        let observed = mem::observed_cohort(text(&bytes), 5.0);
        let full = mem::full_cohort(text(&bytes), 5.0);
        match name.as_str() {
            "observed" => assert!(observed.unwrap().iter().all(|s| s.validate(5.0).is_ok())),
            "full" => assert!(full.unwrap().iter().all(|f| f.validate(5.0).is_ok())),
            _ => assert!(observed.is_err() && full.is_err(), "{name} accepted"),
        }
    }
}

#[test]
fn pseudo_seeds() {
    for (name, bytes) in corpus("pseudo_csv") {
        let rows = mem::pseudo(text(&bytes));
        if name == "dr" {
            assert!(rows.unwrap().iter().all(|r| r.value.is_finite()));
        } else {
            assert!(rows.is_err(), "{name} accepted");
        }
    }
}

#[test]
fn hazard_model_seeds() {
    for (name, bytes) in corpus("hazard_model_json") {
        let model = mem::hazard_model(text(&bytes));
        if name == "short_beta" {
            assert!(model.is_err());
        } else {
            let m = model.unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(m.rate(1.0, 0.5, 0.0).is_finite());
        }
    }
}

#[test]
fn value_table_seeds() {
    for (name, bytes) in corpus("value_tables_bin") {
        let tables = mem::tables(&bytes);
        if name == "truncated" {
            assert!(tables.is_err());
        } else {
            let t = tables.unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(encode_tables(&t), bytes);
        }
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in corpus("scenario_config") {
        let cfg = mem::toml::<ScenarioConfig>(text(&bytes)).and_then(|c| c.validate().map(|_| c));
        assert_eq!(cfg.is_ok(), name != "bad_eta", "{name}");
    }
    for (name, bytes) in corpus("experiment_config") {
        let cfg =
            mem::toml::<ExperimentConfig>(text(&bytes)).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap();
    }
}
