use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/golden")
        .join(name)
}

fn clarity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clarity"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn stats_table_and_tsv() {
    let tmp = tempfile::tempdir().unwrap();
    let tsv = tmp.path().join("freq.tsv");
    let o = clarity(&["stats", s(&fixture("toy_train.jsonl")), "--tsv", s(&tsv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("33 instances"));
    let tsv = fs::read_to_string(tsv).unwrap();
    assert!(tsv.contains("Ambivalent\t15"));
    assert!(tsv.contains("Explicit\t9"));
}

#[test]
fn render_matches_golden() {
    let o = clarity(&[
        "render",
        s(&fixture("toy_dev.jsonl")),
        "--id",
        "dev-002",
        "--strategy",
        "FS27",
        "--train",
        s(&fixture("toy_train.jsonl")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let expected = fs::read_to_string(golden("clarity_fs27_atomic.txt")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), expected);
}

#[test]
fn predict_ensemble_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let dev = fixture("toy_dev.jsonl");
    let cache = tmp.path().join("cache");
    let mut files = Vec::new();
    for (name, mock) in [
        ("a", "echo-label: Ambivalent"),
        ("b", "echo-label: Clear Reply"),
        ("c", "random-label: clarity"),
    ] {
        let out = tmp.path().join(format!("{name}.tsv"));
        let o = clarity(&[
            "predict",
            s(&dev),
            "--mock",
            mock,
            "--model-id",
            name,
            "--cache",
            s(&cache),
            "-o",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        files.push(out);
    }
    let text = fs::read_to_string(&files[0]).unwrap();
    assert_eq!(text.lines().count(), 31);
    assert!(text.starts_with("instance_id\tlabel\traw_fingerprint\n"));

    let ens = tmp.path().join("ens.tsv");
    let o = clarity(&["ensemble", s(&files[0]), s(&files[1]), s(&files[2]), "-o", s(&ens)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ens_text = fs::read_to_string(&ens).unwrap();
    assert_eq!(ens_text.lines().count(), 31);
    let header = ens_text.lines().next().unwrap();
    assert!(header.contains("tie_broken") && header.contains("votes"));

    let report = tmp.path().join("report.tsv");
    let cm = tmp.path().join("cm.tsv");
    let o = clarity(&[
        "evaluate",
        s(&dev),
        s(&files[1]),
        "--tsv",
        s(&report),
        "--confusion",
        s(&cm),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    // Constant Clear Reply against 10/30 Clear Reply golds: F1 = 0.5, macro 0.1667.
    assert!(table.contains("macro-F1"));
    assert!(table.contains("0.1667"), "{table}");
    assert!(fs::read_to_string(cm).unwrap().contains("Clear Reply\t10\t0\t0"));
    assert!(fs::read_to_string(report).unwrap().starts_with("label\tprecision"));
}

#[test]
fn augment_doubles_minority() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("aug.jsonl");
    let audit = tmp.path().join("audit.tsv");
    let o = clarity(&[
        "augment",
        s(&fixture("toy_train.jsonl")),
        "--mock",
        "echo-quoted",
        "-o",
        s(&out),
        "--audit",
        s(&audit),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // 9 Clear Non-Reply sources, ceil(9 * 550 / 356) = 14 candidates, 9 kept.
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 42);
    assert_eq!(fs::read_to_string(&audit).unwrap().lines().count(), 15);
    let o = clarity(&["stats", s(&out), "--level", "clarity"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("18"));
}

#[test]
fn sweep_runs_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sweep.toml");
    fs::write(
        &cfg,
        format!(
            "train = \"{}\"\neval = \"{}\"\noutput_dir = \"out\"\n\n[models.m]\nprovider = \"mock\"\nmodel_id = \"m\"\nmock = {{ kind = \"random-label\", level = \"clarity\" }}\n\n[[product]]\nmodels = [\"m\"]\nstrategies = [\"ZS\", \"FS9\"]\nenriched = [false, true]\n",
            fixture("toy_train.jsonl").display(),
            fixture("toy_dev.jsonl").display()
        ),
    )
    .unwrap();
    let o = clarity(&["sweep", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("delta\tenriched-atomic"));
    let results = fs::read_to_string(tmp.path().join("out/results.tsv")).unwrap();
    assert_eq!(results.lines().count(), 5);
}

#[test]
fn numerics_selftest_passes() {
    let o = clarity(&["numerics-selftest"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().all(|l| l.starts_with("PASS")));
    assert_eq!(out.lines().count(), 7);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dev = fixture("toy_dev.jsonl");
    let out = tmp.path().join("p.tsv");

    // Usage: unknown strategy, bad shot count, missing backend.
    let o = clarity(&["render", s(&dev), "--id", "dev-001", "--strategy", "FS4"]);
    assert_eq!(code(&o), 1);
    let o = clarity(&["predict", s(&dev), "-o", s(&out)]);
    assert_eq!(code(&o), 1);
    let o = clarity(&["bogus"]);
    assert_eq!(code(&o), 1);
    let o = clarity(&["--help"]);
    assert_eq!(code(&o), 0);

    // Data: missing file, malformed record.
    let o = clarity(&["stats", s(&tmp.path().join("nope.jsonl"))]);
    assert_eq!(code(&o), 2);
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\"\n").unwrap();
    let o = clarity(&["stats", s(&bad)]);
    assert_eq!(code(&o), 2);

    // Transport: backend never answers.
    let model = tmp.path().join("down.toml");
    fs::write(
        &model,
        "provider = \"mock\"\nmodel_id = \"down\"\nmock = { kind = \"unavailable\" }\nretry = { max_attempts = 2, initial_backoff_ms = 1 }\n",
    )
    .unwrap();
    let o = clarity(&["predict", s(&dev), "--model", s(&model), "-o", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
