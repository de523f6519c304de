//! Command-line behavior: outputs, exit codes and file round trips.

use std::path::Path;
use std::process::{Command, Output};

fn mvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
schema_version = 1
seed = 3

[scenes]
n_scenes = 3
illuminations = ["L3"]

[pipeline]
n_augs = 8

[ae]
shots = 2
"#;

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn latency_prints_the_capture_time_of_a_policy() {
    let o = mvp(&["latency", "--csa", "csa3", "--m", "21"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("0.909"), "{}", stdout(&o));

    let o = mvp(&["latency", "--csa", "full"]);
    assert!(stdout(&o).contains("2.409"), "{}", stdout(&o));

    let o = mvp(&["latency", "--csa", "csa1", "--m", "12", "--draws", "2000"]);
    let value: f64 = stdout(&o)
        .split_whitespace()
        .last()
        .unwrap()
        .parse()
        .unwrap();
    assert!((value / 1.0707 - 1.0).abs() < 0.02, "{value}");
}

#[test]
fn help_succeeds_and_bad_flags_fail_with_one() {
    assert_eq!(mvp(&["--help"]).status.code(), Some(0));
    assert_eq!(mvp(&["bench", "--help"]).status.code(), Some(0));
    assert_eq!(mvp(&["bench", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(mvp(&["teleport"]).status.code(), Some(1));
    assert_eq!(mvp(&["latency", "--csa", "csa9"]).status.code(), Some(1));
    assert_eq!(mvp(&["sweep", "--axis", "depth"]).status.code(), Some(1));
    assert_eq!(
        mvp(&["latency", "--csa", "csa3", "--m", "40"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn missing_config_names_the_path() {
    let o = mvp(&["bench", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("/nonexistent/exp.toml"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "\n[pipeline_typo]\ntop_k = 3\n");
    let o = mvp(&["bench", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("pipeline_typo"), "{}", stderr(&o));
}

#[test]
fn corrupt_embedding_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.mvpf");
    std::fs::write(&bad, b"NOPE and some bytes").unwrap();
    let stats = dir.path().join("s.mvps");
    let cfg = write_config(dir.path(), "");
    assert_eq!(
        mvp(&["stats", "--config", &cfg, "--out", stats.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let extra = format!(
        "\n[provider]\nkind = \"embeddings\"\nembeddings = {:?}\nsource_stats = {:?}\n",
        bad.to_str().unwrap(),
        stats.to_str().unwrap()
    );
    let cfg = write_config(dir.path(), &extra);
    let o = mvp(&["bench", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("offset 0"), "{}", stderr(&o));
}

#[test]
fn stats_file_then_bench_equals_the_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("source.mvps");
    let cfg = write_config(dir.path(), "");
    let o = mvp(&["stats", "--config", &cfg, "--out", stats.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mem = dir.path().join("mem");
    assert_eq!(
        mvp(&["bench", "--config", &cfg, "--out", mem.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );

    let cfg = write_config(dir.path(), "\n[provider]\nsource_stats = \"source.mvps\"\n");
    let file = dir.path().join("file");
    assert_eq!(
        mvp(&["bench", "--config", &cfg, "--out", file.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );

    let read = |d: &Path| std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(read(&mem), read(&file));
}

#[test]
fn exported_embeddings_drive_an_identical_bench() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let views = dir.path().join("views.mvpf");
    let stats = dir.path().join("source.mvps");
    assert_eq!(
        mvp(&["stats", "--config", &cfg, "--out", stats.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let o = mvp(&[
        "export-embeddings",
        "--config",
        &cfg,
        "--out",
        views.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let synth = dir.path().join("synth");
    assert_eq!(
        mvp(&["bench", "--config", &cfg, "--out", synth.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let cfg = write_config(
        dir.path(),
        "\n[provider]\nkind = \"embeddings\"\nembeddings = \"views.mvpf\"\nsource_stats = \"source.mvps\"\n",
    );
    let file = dir.path().join("file");
    let o = mvp(&["bench", "--config", &cfg, "--out", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let read = |d: &Path| std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(read(&synth), read(&file));
}

#[test]
fn seed_and_workers_flags_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let run = |extra: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["bench", "--config", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = mvp(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(out.join("report.csv")).unwrap()
    };
    let one = run(&["--workers", "1"], "w1");
    let four = run(&["--workers", "4"], "w4");
    assert_eq!(one, four);
    let reseeded = run(&["--seed", "99"], "s99");
    assert!(reseeded.lines().skip(1).all(|l| l.ends_with(",99")));
}

#[test]
fn sweep_writes_an_ablation_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("sw");
    let o = mvp(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "k,gamma",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7 + 7);
    let o = mvp(&["sweep", "--config", &cfg, "--axis", "k", "--values", "1,0"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
