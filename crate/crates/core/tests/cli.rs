use std::path::Path;
use std::process::{Command, Output};

use mixbil::cli::{ExperimentConfig, Profile};

fn mixbil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixbil"))
        .current_dir(dir)
        .env_remove("MIXBIL_THREADS")
        .args(args)
        .output()
        .expect("spawn mixbil")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A config small enough for a sweep to finish in about a second.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig::profile(Profile::Desk);
    cfg.data.d = 6;
    cfg.data.groups = 2;
    cfg.data.tasks = 4;
    cfg.data.n = 5;
    cfg.run.solver.q = 10;
    cfg.run.continuation.stages = 2;
    cfg.run.continuation.stage.epochs = 5;
    cfg.lambda_grid.count = 2;
    cfg.seeds = vec![0, 1];
    cfg.landscape.resolution = 11;
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

#[test]
fn generate_then_run_from_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let o = mixbil(
        dir.path(),
        &[
            "generate", "--config", cfg, "--seed", "3", "--out", "b.json",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let bundle = mixbil::data::load_bundle(dir.path().join("b.json")).unwrap();
    assert_eq!(bundle.d(), 6);

    let o = mixbil(
        dir.path(),
        &[
            "run", "--config", cfg, "--bundle", "b.json", "--lambda", "0.1", "--seed", "3",
            "--method", "bilevel", "--out", "r.json",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let rec = mixbil::cli::read_record(&dir.path().join("r.json")).unwrap();
    assert_eq!(rec.method, mixbil::outer::Method::Bilevel);
    assert_eq!(rec.labels.len(), 6);
    assert!(rec.config.is_some());
}

#[test]
fn grid_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = mixbil(
        dir.path(),
        &[
            "grid",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "out",
            "--threads",
            "2",
        ],
    );
    assert!(o.status.success(), "{o:?}");
    let out = dir.path().join("out");
    for f in ["summary.csv", "groups.csv", "manifest.json", "report.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    // header plus 2 methods x 2 lambdas
    assert_eq!(summary.lines().count(), 5);
    let groups = std::fs::read_to_string(out.join("groups.csv")).unwrap();
    let rows: Vec<&str> = groups
        .lines()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        rows,
        ["row", "oracle", "bilevel_relaxed", "bilevel_rounded", "mib"]
    );

    let o = mixbil(dir.path(), &["report", "out", "--out", "again.csv"]);
    assert!(o.status.success(), "{o:?}");
    let again = std::fs::read_to_string(dir.path().join("again.csv")).unwrap();
    assert_eq!(
        again,
        std::fs::read_to_string(out.join("report.csv")).unwrap()
    );
    assert!(stdout(&o).starts_with("method,lambda,seeds,test_error_mean"));
}

#[test]
fn landscape_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = mixbil(
        dir.path(),
        &["landscape", "--config", cfg.to_str().unwrap(), "--out", "l"],
    );
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(dir.path().join("l/landscape.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t11,t21,G,Gpen"));
    assert_eq!(csv.lines().count(), 1 + 11 * 11);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mixbil(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(mixbil(dir.path(), &["--help"]).status.code(), Some(0));

    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"schema_version": 1, "surprise": 0}"#,
    )
    .unwrap();
    let o = mixbil(dir.path(), &["grid", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json"));

    let o = mixbil(dir.path(), &["run", "--lambda", "-1"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");

    let o = mixbil(dir.path(), &["report", "missing"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_env_must_be_a_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mixbil"))
        .current_dir(dir.path())
        .env("MIXBIL_THREADS", "many")
        .args(["report", "x"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MIXBIL_THREADS"));
}

#[test]
fn verify_quick_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mixbil(dir.path(), &["verify", "quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
    assert!(out.lines().count() >= 8);
}
