use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tslab::harness::{
    compare_variants, run_experiment, tally_dir, DatasetConfig, ExperimentConfig, OptimizerConfig, TaskSpec,
};
use tslab::series::{DatasetSchema, SplitSpec};
use tslab::zoo::{pretrain_checkpoint, PretrainConfig, VariantKind, VariantSpec};
use tslab::Error;

fn write_series(path: &Path, n: usize, vars: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = (0..vars).map(|v| format!("x{v}")).collect::<Vec<_>>().join(",") + "\n";
    for t in 0..n {
        let row: Vec<String> = (0..vars)
            .map(|v| {
                let phase = v as f64;
                let x = (2.0 * std::f64::consts::PI * t as f64 / 24.0 + phase).sin() + 0.05 * rng.random_range(-1.0..1.0);
                format!("{x}")
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn base_config(dir: &Path, kind: VariantKind, task: TaskSpec) -> ExperimentConfig {
    let data = dir.join("sine.csv");
    if !data.exists() {
        write_series(&data, 600, 2, 0);
    }
    ExperimentConfig {
        name: None,
        dataset: DatasetConfig {
            path: data,
            schema: DatasetSchema::Series,
        },
        task,
        variant: VariantSpec::new(kind),
        lookback: 24,
        patch_len: 6,
        stride: 6,
        d_model: 8,
        split: SplitSpec::default(),
        optimizer: OptimizerConfig {
            learning_rates: vec![1e-2, 1e-3],
            max_epochs: 3,
            patience: 2,
            batch_size: 16,
            max_steps_per_epoch: Some(10),
        },
        diagnostics: Default::default(),
        seed: 7,
        output_dir: dir.join("out"),
    }
}

fn forecast(h: usize) -> TaskSpec {
    TaskSpec::Forecast { horizons: vec![h] }
}

#[test]
fn nollm_sinusoid_training_halves_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("s.csv");
    write_series(&data, 500, 1, 1);
    let mut cfg = base_config(dir.path(), VariantKind::Nollm, forecast(12));
    cfg.dataset.path = data;
    cfg.optimizer = OptimizerConfig {
        learning_rates: vec![1e-2],
        max_epochs: 10,
        patience: 10,
        batch_size: 16,
        max_steps_per_epoch: Some(20),
    };
    let r = run_experiment(&cfg).unwrap();
    let t = &r.runs[0].lr_trials[0];
    assert_eq!(t.steps, 200);
    assert!(t.best_val_loss.unwrap() <= 0.5 * t.initial_val_loss.unwrap(), "{t:?}");
    assert!(r.runs[0].metrics.mse.unwrap().is_finite());
    assert!(dir.path().join("out/result.json").exists());
}

#[test]
fn same_seed_gives_identical_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path(), VariantKind::Trans, forecast(6));
    cfg.variant = cfg.variant.with_depth(1).with_heads(2);
    let a = run_experiment(&cfg).unwrap();
    let first = std::fs::read_to_string(dir.path().join("out/result.json")).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.deterministic_json(), b.deterministic_json());
    let loaded = tslab::harness::RunResult::load(&dir.path().join("out/result.json")).unwrap();
    assert_eq!(loaded.deterministic_json(), b.deterministic_json());
    assert_ne!(first.len(), 0);
    cfg.seed = 8;
    let c = run_experiment(&cfg).unwrap();
    assert_ne!(c.runs[0].metrics, a.runs[0].metrics);
}

#[test]
fn result_records_contract_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path(), VariantKind::Linear, TaskSpec::Forecast { horizons: vec![6, 12] });
    cfg.name = Some("contract".into());
    cfg.diagnostics.k = 3;
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.name, "contract");
    assert_eq!(r.seed, 7);
    assert_eq!(r.config_digest, cfg.digest());
    assert_eq!(r.lr_grid, vec![1e-2, 1e-3]);
    assert_eq!(r.runs.len(), 2);
    assert_eq!(r.runs[1].metrics.horizon, Some(12));
    for run in &r.runs {
        assert!(cfg.optimizer.learning_rates.contains(&run.selected_lr));
        assert_eq!(run.lr_trials.len(), 2);
        assert!(run.lr_trials.iter().all(|t| t.epochs_run <= cfg.optimizer.max_epochs));
        let res = run.residual.as_ref().unwrap();
        assert!((0.0..=4.0).contains(&res.dw));
        assert_eq!(res.acf.len(), 40);
        assert!(run.alignment.is_some());
        assert_eq!(run.diagnostics.dw, Some(res.dw));
    }
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for key in ["dw", "acf", "band", "n", "centroid_shift_before", "centroid_shift_after", "knn_jaccard", "w1_sliced", "lipschitz_K", "bound_holds"] {
        assert!(json["runs"][0]["diagnostics"].get(key).is_some(), "{key}");
    }
    assert!(r.render().contains("mse"));
}

#[test]
fn env_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base_config(dir.path(), VariantKind::Nollm, forecast(6));
    std::env::set_var(tslab::harness::SEED_ENV, "123");
    let applied = cfg.apply_env();
    std::env::remove_var(tslab::harness::SEED_ENV);
    applied.unwrap();
    assert_eq!(cfg.seed, 123);
}

#[test]
fn short_dataset_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("short.csv");
    write_series(&data, 30, 1, 0);
    let mut cfg = base_config(dir.path(), VariantKind::Nollm, forecast(12));
    cfg.dataset.path = data;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    cfg.dataset.path = dir.path().join("missing.csv");
    assert!(matches!(run_experiment(&cfg), Err(Error::Io { .. })));
}

#[test]
fn compare_linear_and_nollm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_config(dir.path(), VariantKind::Linear, forecast(6));
    let c = compare_variants(&cfg, &[VariantKind::Linear, VariantKind::Nollm]).unwrap();
    assert_eq!(c.results.len(), 2);
    assert_eq!(c.results[0].variant, "linear");
    assert_eq!(c.results[1].variant, "nollm");
    for r in &c.results {
        assert!(r.runs[0].metrics.mse.is_some());
        assert!(r.runs[0].residual.is_some());
    }
    let t = c.tally.as_ref().unwrap();
    assert!(t.mse_wins.iter().sum::<usize>() >= 1);
    let table = c.render();
    assert!(table.lines().count() >= 3);
    let from_disk = tally_dir(&dir.path().join("out")).unwrap();
    assert_eq!(&from_disk, t);
}

#[test]
fn parameter_counts_follow_construction() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    let pre = PretrainConfig {
        width: 8,
        depth: 1,
        heads: 2,
        vocab: 16,
        seq_len: 8,
        positions: 16,
        steps: 5,
        batch: 2,
        ..PretrainConfig::default()
    };
    pretrain_checkpoint(&pre, &ckpt).unwrap();
    let count = |kind: VariantKind| {
        let mut cfg = base_config(dir.path(), kind, forecast(6));
        cfg.variant.max_positions = Some(16);
        if !matches!(kind, VariantKind::Linear | VariantKind::Nollm) {
            cfg.variant = cfg.variant.with_depth(1).with_heads(2);
        }
        if kind == VariantKind::Llm {
            cfg.variant.checkpoint = Some(ckpt.clone());
        }
        cfg.optimizer.learning_rates = vec![1e-3];
        cfg.optimizer.max_epochs = 1;
        cfg.optimizer.max_steps_per_epoch = Some(1);
        run_experiment(&cfg).unwrap().runs[0].params
    };
    let lin = count(VariantKind::Linear);
    let trans = count(VariantKind::Trans);
    let random = count(VariantKind::Random);
    let llm = count(VariantKind::Llm);
    assert!(lin.backbone_total < trans.backbone_total);
    assert!(trans.backbone_total < random.backbone_total);
    assert_eq!(random.backbone_total, llm.backbone_total);
    assert_eq!(random.backbone_trainable, llm.backbone_trainable);
    assert!(random.backbone_trainable < random.backbone_total);
}

#[test]
fn imputation_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base_config(dir.path(), VariantKind::Linear, TaskSpec::Impute { mask_ratios: vec![0.125, 0.25] });
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.runs.len(), 2);
    assert_eq!(r.runs[1].mask_ratio, Some(0.25));
    let mse = r.runs[0].metrics.mse.unwrap();
    assert!(mse.is_finite() && mse < 1.0, "{mse}");
}

#[test]
fn anomaly_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("a.csv");
    let labels = dir.path().join("a_labels.csv");
    let n = 600;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x: Vec<f64> = (0..n)
        .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin() + 0.05 * rng.random_range(-1.0..1.0))
        .collect();
    let mut y = vec![0u8; n];
    for &t in &[490, 530, 570] {
        x[t] += 8.0;
        y[t] = 1;
    }
    std::fs::write(&data, "x\n".to_string() + &x.iter().map(|v| format!("{v}\n")).collect::<String>()).unwrap();
    std::fs::write(&labels, "label\n".to_string() + &y.iter().map(|v| format!("{v}\n")).collect::<String>()).unwrap();
    let mut cfg = base_config(
        dir.path(),
        VariantKind::Linear,
        TaskSpec::Anomaly {
            anomaly_ratio: 1.0,
            point_adjust: false,
        },
    );
    cfg.dataset = DatasetConfig {
        path: data,
        schema: DatasetSchema::Anomaly { labels },
    };
    let r = run_experiment(&cfg).unwrap();
    let m = &r.runs[0].metrics;
    assert!(m.f1.is_some() && m.mse.is_none());
    assert!(m.recall.unwrap() > 0.0);
}

#[test]
fn classification_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = "path,label\n".to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..60 {
        let label = i % 2;
        let period = if label == 0 { 6.0 } else { 12.0 };
        let body: String = (0..24)
            .map(|t| format!("{}\n", (2.0 * std::f64::consts::PI * t as f64 / period).sin() + 0.1 * rng.random_range(-1.0..1.0)))
            .collect();
        std::fs::write(dir.path().join(format!("s{i}.csv")), format!("x\n{body}")).unwrap();
        manifest.push_str(&format!("s{i}.csv,{label}\n"));
    }
    let m = dir.path().join("manifest.csv");
    std::fs::write(&m, manifest).unwrap();
    let mut cfg = base_config(dir.path(), VariantKind::Linear, TaskSpec::Classify { classes: 2 });
    cfg.dataset = DatasetConfig {
        path: m,
        schema: DatasetSchema::Classification,
    };
    cfg.optimizer.max_epochs = 10;
    cfg.optimizer.patience = 10;
    let r = run_experiment(&cfg).unwrap();
    let acc = r.runs[0].metrics.accuracy.unwrap();
    assert!(acc >= 0.75, "{acc}");
    assert!(r.runs[0].residual.is_none());
}

#[test]
fn tally_dir_errors_on_missing_cell() {
    let dir = tempfile::tempdir().unwrap();
    let a = base_config(dir.path(), VariantKind::Linear, forecast(6));
    let mut b = base_config(dir.path(), VariantKind::Nollm, forecast(12));
    let mut a2 = a.clone();
    a2.output_dir = dir.path().join("res/linear");
    b.output_dir = dir.path().join("res/nollm");
    run_experiment(&a2).unwrap();
    run_experiment(&b).unwrap();
    assert!(matches!(tally_dir(&dir.path().join("res")), Err(Error::MissingCell { .. })));
}
