use std::path::Path;
use std::process::{Command, Output};

fn tslab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tslab"))
        .args(args)
        .current_dir(dir)
        .env_remove("TSLAB_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(o)).unwrap()
}

fn write_setup(dir: &Path) {
    let mut text = String::from("a,b\n");
    for t in 0..400 {
        let x = t as f64 * std::f64::consts::TAU / 24.0;
        text.push_str(&format!("{},{}\n", x.sin(), (x + 1.0).cos() + 0.01 * ((t * 7919) % 13) as f64));
    }
    std::fs::write(dir.join("sine.csv"), text).unwrap();
    let cfg = r#"{
        "dataset": {"path": "sine.csv"},
        "task": {"task": "forecast", "horizons": [6]},
        "variant": {"kind": "linear"},
        "lookback": 24, "patch_len": 6, "stride": 6, "d_model": 8,
        "optimizer": {"learning_rates": [0.01], "max_epochs": 2, "patience": 2, "batch_size": 16, "max_steps_per_epoch": 5},
        "diagnostics": {"k": 3},
        "seed": 5,
        "output_dir": "out"
    }"#;
    std::fs::write(dir.join("cfg.json"), cfg).unwrap();
}

#[test]
fn diagnose_alternating_residuals() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.csv"), "e\n1\n-1\n1\n-1\n").unwrap();
    let v = json(&tslab(&["diagnose", "--residuals", "r.csv", "--max-lag", "2"], dir.path()));
    assert_eq!(v["dw"], 3.0);
    assert_eq!(v["acf"].as_array().unwrap().len(), 2);
    for key in ["band", "n"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn diagnose_averages_columns() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.csv"), "e,f\n1,1\n-1,1\n1,-1\n-1,-1\n").unwrap();
    let v = json(&tslab(&["diagnose", "--residuals", "r.csv", "--max-lag", "1"], dir.path()));
    // 3.0 and 1.0
    assert_eq!(v["dw"], 2.0);
}

#[test]
fn align_identical_clouds() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("x,y,z\n");
    for i in 0..12 {
        let f = i as f64;
        text.push_str(&format!("{},{},{}\n", f.sin(), (1.3 * f).cos(), 0.1 * f));
    }
    std::fs::write(dir.path().join("ts.csv"), &text).unwrap();
    std::fs::write(dir.path().join("text.csv"), "x,y,z\n1,0,0\n0,1,0\n0,0,1\n1,1,1\n").unwrap();
    let v = json(&tslab(
        &["align", "--pre", "ts.csv", "--post", "ts.csv", "--text", "text.csv", "--alt", "ts.csv", "-k", "3"],
        dir.path(),
    ));
    assert_eq!(v["knn_jaccard"], 1.0);
    assert_eq!(v["centroid_shift_before"], v["centroid_shift_after"]);
    for key in ["w1_sliced", "lipschitz_K", "bound_holds"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

#[test]
fn run_then_tally() {
    let dir = tempfile::tempdir().unwrap();
    write_setup(dir.path());
    let v = json(&tslab(&["run", "cfg.json", "--json"], dir.path()));
    assert_eq!(v["seed"], 5);
    assert_eq!(v["variant"], "linear");
    assert!(dir.path().join("out/result.json").exists());
    let table = stdout(&tslab(&["tally", "out"], dir.path()));
    assert!(table.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["linear", "1", "1"]), "{table}");
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    write_setup(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_tslab"))
        .args(["run", "cfg.json", "--json"])
        .current_dir(dir.path())
        .env("TSLAB_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(json(&o)["seed"], 11);
}

#[test]
fn compare_two_variants() {
    let dir = tempfile::tempdir().unwrap();
    write_setup(dir.path());
    let out = stdout(&tslab(&["compare", "cfg.json", "--variants", "linear,nollm"], dir.path()));
    assert!(out.contains("mse_wins"), "{out}");
    assert!(dir.path().join("out/linear/result.json").exists());
    assert!(dir.path().join("out/nollm/result.json").exists());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    write_setup(dir.path());
    let o = tslab(&["compare", "cfg.json", "--variants", "gpt9"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gpt9"));
    let o = tslab(&["tally", "nowhere"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn pretrain_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = tslab(
        &["pretrain", "--out", "ckpt", "--width", "8", "--depth", "1", "--heads", "2", "--positions", "16", "--steps", "20"],
        dir.path(),
    );
    let v = json(&o);
    assert!(v["final_loss"].as_f64().unwrap().is_finite());
    assert!(std::fs::read_dir(dir.path().join("ckpt")).unwrap().count() > 0);
}
