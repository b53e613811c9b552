use std::path::Path;
use std::process::{Command, Output};

fn odflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odflow"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

const CONFIG: &str = r#"
[train]
models = ["mean", "dcgm", "poisson", "fcnn", "gnn-flow"]
n_seeds = 2
max_epochs = 3

[synth]
n_rows = 6
n_cols = 6
flow_scale = 200000.0
nonlinear_term = 0.5
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn synth_then_compare_writes_the_bundle() {
    let dir = workspace();
    let p = dir.path();
    let out = odflow(p, &["synth", "--config", "c.toml", "--out-dir", "city"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["nodes.csv", "edges.csv", "grid.csv", "ground_truth.json"] {
        assert!(p.join("city").join(f).exists(), "{f}");
    }

    let out = odflow(p, &["compare", "--config", "c.toml", "--data", "city", "--out-dir", "r1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("gnn-flow") && table.contains("±"));
    for f in ["report.json", "table.txt", "predictions/fcnn.csv", "residuals/poisson.geojson"] {
        assert!(p.join("r1").join(f).exists(), "{f}");
    }

    let out = odflow(p, &["compare", "--config", "c.toml", "--data", "city", "--out-dir", "r2"]);
    assert!(out.status.success());
    let a = std::fs::read(p.join("r1/report.json")).unwrap();
    let b = std::fs::read(p.join("r2/report.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn train_evaluate_and_residuals() {
    let dir = workspace();
    let p = dir.path();
    assert!(odflow(p, &["synth", "--config", "c.toml", "--out-dir", "city"]).status.success());
    let out = odflow(p, &["split", "--config", "c.toml", "--data", "city", "--out-dir", "s"]);
    assert!(out.status.success());

    let args = ["--config", "c.toml", "--data", "city", "--split", "s/split.json", "--out-dir", "m"];
    let out = odflow(p, &[&["train", "--model", "huff"][..], &args].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = odflow(p, &[&["evaluate", "--model", "huff"][..], &args].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("bin-mean MAE"));

    let out = odflow(
        p,
        &[&["residuals", "--predictions", "m/predictions-huff.csv"][..], &args[..6], &["--out-dir", "res"]].concat(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("res/residuals.csv").exists() && p.join("res/residuals.geojson").exists());

    let out = odflow(p, &["powerlaw", "--data", "city"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("alpha"));
}

#[test]
fn evaluate_without_train_exits_2() {
    let dir = workspace();
    let p = dir.path();
    assert!(odflow(p, &["synth", "--config", "c.toml", "--out-dir", "city"]).status.success());
    let out = odflow(p, &["evaluate", "--config", "c.toml", "--data", "city", "--model", "fcnn", "--out-dir", "none"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `train` first"));
}

#[test]
fn bad_data_and_config_exit_2() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(p.join("bad.toml"), "[split]\ntest = 0.95\n").unwrap();
    let out = odflow(p, &["synth", "--config", "bad.toml", "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = odflow(p, &["powerlaw", "--data", "missing"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_1() {
    let dir = workspace();
    for args in [&["bogus"][..], &["train", "--model", "xgboost"], &["synth", "--colour"], &[]] {
        let out = odflow(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    let out = odflow(dir.path(), &["powerlaw"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_on_every_subcommand() {
    let dir = workspace();
    let subcommands = ["synth", "ingest", "split", "train", "evaluate", "compare", "residuals", "powerlaw"];
    for sub in subcommands {
        let out = odflow(dir.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage:") && text.contains("--out-dir"), "{sub}: {text}");
    }
    let out = odflow(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(subcommands.iter().all(|s| text.contains(s)));
}
