mod common;

use std::fs;
use std::path::Path;

use clarity_core::dataset::{load_split, save_split, Dataset, Split};
use clarity_core::prediction_file::read_predictions;
use clarity_core::sweep::{run_sweep, RowStatus, SweepConfig, SweepError};
use clarity_core::taxonomy::Level;

use common::fixture;

fn ten_instance_split(dir: &Path) -> std::path::PathBuf {
    let dev = load_split(fixture("toy_dev.jsonl"), Split::Dev).unwrap();
    let small = Dataset::new(Split::Dev, dev.instances[..10].to_vec());
    let path = dir.join("dev10.jsonl");
    save_split(&small, &path).unwrap();
    path
}

fn config(dir: &Path, eval: &Path, models: &str, grid: &str) -> SweepConfig {
    let text = format!(
        "eval = \"{}\"\ntrain = \"{}\"\noutput_dir = \"{}\"\n{models}\n{grid}",
        eval.display(),
        fixture("toy_train.jsonl").display(),
        dir.join("out").display()
    );
    SweepConfig::from_toml(&text).unwrap()
}

const TWO_MOCKS: &str = r#"
[models.cr]
provider = "mock"
model_id = "always-cr"
mock = { kind = "echo", output = "Clear Reply" }

[models.rnd]
provider = "mock"
model_id = "random"
mock = { kind = "random-label", level = "clarity" }
"#;

#[test]
fn two_grid_points_twenty_records() {
    let tmp = tempfile::tempdir().unwrap();
    let eval = ten_instance_split(tmp.path());
    let grid = "[[grid]]\nname = \"a\"\nmodel = \"cr\"\nstrategy = \"ZS\"\n\n[[grid]]\nname = \"b\"\nmodel = \"rnd\"\nstrategy = \"FS\"\nshots = 9\nenriched = true\n";
    let cfg = config(tmp.path(), &eval, TWO_MOCKS, grid);
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.table.rows.len(), 2);
    let records: usize = out
        .prediction_files
        .iter()
        .map(|p| read_predictions(p, Level::Clarity).unwrap().len())
        .sum();
    assert_eq!(records, 20);

    // Constant Clear Reply on 10 instances with 3 Clear Reply golds:
    // P = 0.3, R = 1, F1 = 6/13; the other classes score 0.
    let a = &out.table.rows[0];
    assert_eq!(a.status, RowStatus::Ok);
    assert!((a.macro_f1.unwrap() - (6.0 / 13.0) / 3.0).abs() < 1e-12);
    assert!(a.strategy == "ZS" && !a.enriched);
    assert_eq!(out.table.rows[1].strategy, "FS9");

    let results = fs::read_to_string(&out.results_path).unwrap();
    assert_eq!(results.lines().count(), 3);
    assert!(tmp.path().join("out/aggregates.tsv").exists());
}

#[test]
fn unparseable_outputs_warn() {
    let tmp = tempfile::tempdir().unwrap();
    let eval = ten_instance_split(tmp.path());
    let models = "[models.junk]\nprovider = \"mock\"\nmodel_id = \"junk\"\nmock = { kind = \"echo\", output = \"I cannot tell\" }\n";
    let grid = "[[grid]]\nname = \"junk\"\nmodel = \"junk\"\nstrategy = \"CoT\"\n";
    let out = run_sweep(&config(tmp.path(), &eval, models, grid)).unwrap();
    let row = &out.table.rows[0];
    assert_eq!(row.unparsed, 10);
    assert_eq!(row.scored, 0);
    assert_eq!(row.macro_f1, Some(0.0));
    assert!(matches!(&row.status, RowStatus::Warning(w) if w.contains("10 of 10")));
}

#[test]
fn failures_stay_on_their_row() {
    let tmp = tempfile::tempdir().unwrap();
    let eval = ten_instance_split(tmp.path());
    let models = format!(
        "{TWO_MOCKS}\n[models.down]\nprovider = \"mock\"\nmodel_id = \"down\"\nmock = {{ kind = \"unavailable\" }}\nretry = {{ max_attempts = 2, initial_backoff_ms = 1 }}\n"
    );
    let grid = "[[grid]]\nname = \"down\"\nmodel = \"down\"\nstrategy = \"ZS\"\n\n[[grid]]\nname = \"ok\"\nmodel = \"cr\"\nstrategy = \"ZS+Re2\"\n";
    let out = run_sweep(&config(tmp.path(), &eval, &models, grid)).unwrap();
    assert!(matches!(
        out.table.rows[0].status,
        RowStatus::Failed { transport: true, .. }
    ));
    assert_eq!(out.table.rows[0].macro_f1, None);
    assert_eq!(out.table.rows[1].status, RowStatus::Ok);
    assert!(out.any_transport_failure());
    // Two attempts for each of the 10 instances, plus 10 for the healthy row.
    assert_eq!(out.requests_sent, 30);
}

#[test]
fn missing_gold_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dev = load_split(fixture("toy_dev.jsonl"), Split::Dev).unwrap();
    let mut inst = dev.instances[0].clone();
    inst.clarity_gold = None;
    inst.evasion_gold = None;
    let path = tmp.path().join("nogold.jsonl");
    save_split(&Dataset::new(Split::Dev, vec![inst]), &path).unwrap();
    let grid = "[[grid]]\nname = \"a\"\nmodel = \"cr\"\nstrategy = \"ZS\"\n";
    let err = run_sweep(&config(tmp.path(), &path, TWO_MOCKS, grid)).unwrap_err();
    assert!(matches!(err, SweepError::Data(_)));
}

#[test]
fn config_file_paths_are_relative_to_it() {
    let tmp = tempfile::tempdir().unwrap();
    ten_instance_split(tmp.path());
    fs::copy(fixture("toy_train.jsonl"), tmp.path().join("train.jsonl")).unwrap();
    let text = format!(
        "eval = \"dev10.jsonl\"\ntrain = \"train.jsonl\"\noutput_dir = \"runs\"\n{TWO_MOCKS}\n[[product]]\nmodels = [\"cr\"]\nstrategies = [\"ZS\", \"FS3\"]\nenriched = [false, true]\n"
    );
    let cfg_path = tmp.path().join("sweep.toml");
    fs::write(&cfg_path, text).unwrap();
    let cfg = SweepConfig::load(&cfg_path).unwrap();
    let out = run_sweep(&cfg).unwrap();
    assert_eq!(out.table.rows.len(), 4);
    assert!(tmp.path().join("runs/predictions/fs3-enriched-cr.tsv").exists());
    assert!(tmp.path().join("runs/cache").is_dir());
}

#[test]
fn shipped_configs_expand() {
    let configs = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let remote = SweepConfig::load(configs.join("remote_sweep.toml")).unwrap();
    assert_eq!(remote.grid_points().unwrap().len(), 4 * 6 * 2);
    let toy = SweepConfig::load(configs.join("toy_sweep.toml")).unwrap();
    assert_eq!(toy.grid_points().unwrap().len(), 2 * 6 * 2 + 1);
    assert!(toy.eval.exists() && toy.train.as_ref().unwrap().exists());
}
