use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, TaskSpec};
use super::data::{split_samples, window_masks, Examples};
use super::model::{HeadSpec, ModelShape, ParamCounts, TsModel};
use super::tally::{tally_wins, Row, WinTally};
use super::train::{select_learning_rate, LrTrial};
use crate::autograd::Tape;
use crate::diagnostics::{
    acf, aggregate_dw, alignment_report, AlignmentOptions, AlignmentReport, DiagnosticsSummary, ResidualDiagnostics,
};
use crate::error::{config, Error, Result};
use crate::heads::{
    accuracy_metrics, anomaly_threshold, argmax, detection_metrics, error_energy, flag_anomalies,
    masked_regression_metrics, regression_metrics, MetricRecord,
};
use crate::series::{load_dataset, make_windows, split_ranges, Dataset, SeriesTensor, Standardizer, TargetKind, WindowSet};
use crate::zoo::{PrototypeBank, VariantKind};

pub const RESULT_FILE: &str = "result.json";

/// Outcome of training and testing one horizon or mask ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub horizon: Option<usize>,
    pub mask_ratio: Option<f64>,
    pub metrics: MetricRecord,
    pub residual: Option<ResidualDiagnostics>,
    pub alignment: Option<AlignmentReport>,
    pub diagnostics: DiagnosticsSummary,
    pub selected_lr: f64,
    pub lr_trials: Vec<LrTrial>,
    pub params: ParamCounts,
    /// Train, validation and test example counts.
    pub examples: [usize; 3],
}

impl TaskRun {
    pub fn setting(&self) -> String {
        match (self.horizon, self.mask_ratio) {
            (Some(h), _) => format!("h{h}"),
            (_, Some(r)) => format!("r{r}"),
            _ => "-".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub dataset: String,
    pub task: String,
    pub variant: String,
    pub seed: u64,
    pub config_digest: String,
    pub lr_grid: Vec<f64>,
    pub trainable_params: usize,
    pub total_params: usize,
    pub runs: Vec<TaskRun>,
    pub wall_clock_secs: f64,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// JSON with the wall-clock field zeroed, for reproducibility checks.
    pub fn deterministic_json(&self) -> String {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        r.to_json()
    }

    /// Writes `result.json` into `dir` through a temporary file and rename.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESULT_FILE);
        let tmp = dir.join(format!(".{RESULT_FILE}.{}.tmp", std::process::id()));
        std::fs::write(&tmp, self.to_json()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Table rows at presentation precision (3 decimals).
    pub fn render(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut out = String::new();
        for r in &self.runs {
            let m = &r.metrics;
            out.push_str(&format!(
                "{:<8} {:<10} {:<6} mse {:>7} mae {:>7} f1 {:>7} acc {:>7} dw {:>7} lr {:e} params {}/{}\n",
                self.variant,
                self.task,
                r.setting(),
                f(m.mse),
                f(m.mae),
                f(m.f1),
                f(m.accuracy),
                f(r.residual.as_ref().map(|d| d.dw)),
                r.selected_lr,
                r.params.trainable,
                r.params.total,
            ));
        }
        out
    }
}

/// Durbin-Watson over every (window, variate) row of `resid` and the ACF
/// of each variate's continuous residual series built from every `step`-th
/// window, averaged over variates.
pub fn residual_diagnostics(resid: &Array2<f64>, n_vars: usize, step: usize, max_lag: usize) -> Result<ResidualDiagnostics> {
    let rows: Vec<Vec<f64>> = resid.rows().into_iter().map(|r| r.to_vec()).collect();
    let (dw, count) = aggregate_dw(&rows)?;
    let windows = resid.nrows() / n_vars;
    let mut mean_acf: Vec<f64> = Vec::new();
    let mut n = 0;
    for c in 0..n_vars {
        let series: Vec<f64> = (0..windows).step_by(step.max(1)).flat_map(|w| rows[w * n_vars + c].clone()).collect();
        n = series.len();
        let rho = acf(&series, max_lag.min(n.saturating_sub(1)))?;
        if mean_acf.is_empty() {
            mean_acf = vec![0.0; rho.len() - 1];
        }
        for (m, r) in mean_acf.iter_mut().zip(&rho[1..]) {
            *m += r / n_vars as f64;
        }
    }
    Ok(ResidualDiagnostics {
        dw,
        acf: mean_acf,
        band: 1.96 / (n as f64).sqrt(),
        n,
        aggregation: format!(
            "dw: mean over {count} (window, variate) sequences of length {}; acf: mean over {n_vars} variates of a continuous residual series of {n} steps",
            resid.ncols()
        ),
    })
}

struct Evaluation {
    pred: Array2<f64>,
    target: Array2<f64>,
    weight: Option<Array2<f64>>,
    labels: Vec<usize>,
}

fn evaluate(model: &TsModel, data: &Examples, batch_size: usize) -> Result<Evaluation> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    let mut labels = Vec::new();
    for idx in data.chunks(batch_size) {
        let b = data.batch(&idx);
        preds.push(model.predict(&b.views(), b.observed.as_deref())?);
        match b.target {
            super::data::BatchTarget::Values { values, weight } => {
                targets.push(values);
                if let Some(w) = weight {
                    weights.push(w);
                }
            }
            super::data::BatchTarget::Classes(c) => labels.extend(c),
        }
    }
    let cat = |parts: &[Array2<f64>]| -> Option<Array2<f64>> {
        if parts.is_empty() {
            return None;
        }
        let views: Vec<_> = parts.iter().map(|a| a.view()).collect();
        Some(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"))
    };
    Ok(Evaluation {
        pred: cat(&preds).ok_or_else(|| Error::Config("test split is empty".into()))?,
        target: cat(&targets).unwrap_or_default(),
        weight: cat(&weights),
        labels,
    })
}

fn alignment(model: &TsModel, data: &Examples, cfg: &ExperimentConfig) -> Option<AlignmentReport> {
    if !cfg.diagnostics.alignment || data.is_empty() {
        return None;
    }
    let b = data.batch(&[0]);
    let mut tape = Tape::new();
    let f = model.forward(&mut tape, &b.views(), b.observed.as_deref()).ok()?;
    let pre = tape.value(f.pre).clone();
    let post = tape.value(f.post).clone();
    if cfg.diagnostics.k >= pre.nrows() {
        return None;
    }
    let random;
    let text = match model.bank() {
        Some(bank) => &bank.vectors,
        None => {
            random = PrototypeBank::random(128, pre.ncols(), cfg.seed ^ 0x7e47).ok()?;
            &random.vectors
        }
    };
    let opts = AlignmentOptions {
        k: cfg.diagnostics.k,
        seed: cfg.seed,
        ..AlignmentOptions::default()
    };
    match alignment_report(&pre, &post, text, None, opts) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("alignment report skipped: {e}");
            None
        }
    }
}

fn residual_or_none(resid: &Array2<f64>, n_vars: usize, step: usize, max_lag: usize) -> Option<ResidualDiagnostics> {
    match residual_diagnostics(resid, n_vars, step, max_lag) {
        Ok(d) => Some(d),
        Err(e) => {
            log::warn!("residual diagnostics skipped: {e}");
            None
        }
    }
}

fn nonempty(w: &WindowSet, which: &str, need: usize) -> Result<()> {
    if w.len() < need {
        return config(format!("{which} split yields {} windows; lookback plus target does not fit", w.len()));
    }
    Ok(())
}

fn standardized(series: &SeriesTensor, cfg: &ExperimentConfig) -> Result<Array2<f64>> {
    let r = split_ranges(series.len(), &cfg.split)?;
    if r.train.is_empty() {
        return config("training split is empty");
    }
    let z = Standardizer::fit(series.values.slice(s![r.train, ..]));
    Ok(z.transform(&series.values))
}

fn shape(cfg: &ExperimentConfig, n_vars: usize, head: HeadSpec) -> ModelShape {
    ModelShape {
        lookback: cfg.lookback,
        patch_len: cfg.patch_len,
        stride: cfg.stride,
        width: cfg.width(),
        n_vars,
        head,
    }
}

struct Trained {
    model: TsModel,
    trials: Vec<LrTrial>,
    lr: f64,
}

fn fit(cfg: &ExperimentConfig, shape: ModelShape, train: &Examples, val: &Examples) -> Result<Trained> {
    let (model, trials, i) = select_learning_rate(|| TsModel::build(shape, &cfg.variant, cfg.seed), train, val, &cfg.optimizer, cfg.seed)?;
    Ok(Trained {
        model,
        lr: cfg.optimizer.learning_rates[i],
        trials,
    })
}

#[allow(clippy::too_many_arguments)]
fn task_run(
    t: Trained,
    metrics: MetricRecord,
    residual: Option<ResidualDiagnostics>,
    alignment: Option<AlignmentReport>,
    horizon: Option<usize>,
    mask_ratio: Option<f64>,
    examples: [usize; 3],
) -> TaskRun {
    TaskRun {
        horizon,
        mask_ratio,
        diagnostics: DiagnosticsSummary::new(residual.as_ref(), alignment.as_ref()),
        metrics,
        residual,
        alignment,
        selected_lr: t.lr,
        lr_trials: t.trials,
        params: t.model.param_counts(),
        examples,
    }
}

fn run_forecast(cfg: &ExperimentConfig, values: &Array2<f64>, horizons: &[usize]) -> Result<Vec<TaskRun>> {
    let v = values.ncols();
    let mut out = Vec::new();
    for &h in horizons {
        let w = make_windows(values, cfg.lookback, TargetKind::Forecast(h), 1, &cfg.split)?;
        nonempty(&w.train, "train", 1)?;
        nonempty(&w.val, "validation", 1)?;
        nonempty(&w.test, "test", 1)?;
        let counts = [w.train.len(), w.val.len(), w.test.len()];
        let [train, val, test] = [w.train, w.val, w.test].map(|set| Examples::Windows { set, masks: None });
        let t = fit(cfg, shape(cfg, v, HeadSpec::Flatten { out: h }), &train, &val)?;
        let e = evaluate(&t.model, &test, cfg.optimizer.batch_size)?;
        let metrics = regression_metrics("forecast", &e.pred, &e.target)?.with_horizon(h);
        let resid = residual_or_none(&(&e.pred - &e.target), v, h, cfg.diagnostics.max_lag);
        let align = alignment(&t.model, &test, cfg);
        out.push(task_run(t, metrics, resid, align, Some(h), None, counts));
    }
    Ok(out)
}

fn run_impute(cfg: &ExperimentConfig, values: &Array2<f64>, ratios: &[f64]) -> Result<Vec<TaskRun>> {
    let v = values.ncols();
    let l = cfg.lookback;
    let mut out = Vec::new();
    for &r in ratios {
        let w = make_windows(values, l, TargetKind::Reconstruct, 1, &cfg.split)?;
        nonempty(&w.train, "train", 1)?;
        nonempty(&w.val, "validation", 1)?;
        nonempty(&w.test, "test", 1)?;
        let counts = [w.train.len(), w.val.len(), w.test.len()];
        let mut sets = Vec::new();
        for (i, set) in [w.train, w.val, w.test].into_iter().enumerate() {
            let masks = window_masks(&set, r, cfg.seed.wrapping_add(1 + i as u64))?;
            sets.push(Examples::Windows { set, masks: Some(masks) });
        }
        let t = fit(cfg, shape(cfg, v, HeadSpec::Flatten { out: l }), &sets[0], &sets[1])?;
        let e = evaluate(&t.model, &sets[2], cfg.optimizer.batch_size)?;
        let weight = e.weight.as_ref().expect("imputation batches carry masks");
        let metrics = masked_regression_metrics("impute", &e.pred, &e.target, weight)?;
        let resid = residual_or_none(&(&e.pred - &e.target), v, l, cfg.diagnostics.max_lag);
        let align = alignment(&t.model, &sets[2], cfg);
        out.push(task_run(t, metrics, resid, align, None, Some(r), counts));
    }
    Ok(out)
}

/// Per-step reconstruction energy over non-overlapping windows, in time
/// order, with the absolute step of each value.
fn energies(model: &TsModel, set: &WindowSet, batch_size: usize) -> Result<(Vec<f64>, Vec<usize>, Array2<f64>)> {
    let v = set.n_vars();
    let data = Examples::Windows {
        set: set.clone(),
        masks: None,
    };
    let e = evaluate(model, &data, batch_size)?;
    let mut energy = Vec::new();
    let mut steps = Vec::new();
    for w in 0..set.len() {
        let rows = s![w * v..(w + 1) * v, ..];
        let pred = e.pred.slice(rows).t().to_owned();
        let target = e.target.slice(rows).t().to_owned();
        energy.extend(error_energy(&pred, &target)?);
        steps.extend(set.origins[w]..set.origins[w] + set.lookback);
    }
    Ok((energy, steps, &e.pred - &e.target))
}

fn run_anomaly(cfg: &ExperimentConfig, series: &SeriesTensor, values: &Array2<f64>, ratio: f64, adjust: bool) -> Result<Vec<TaskRun>> {
    let labels = series
        .point_labels
        .as_ref()
        .ok_or_else(|| Error::Config("anomaly task needs a dataset with point labels".into()))?;
    let v = values.ncols();
    let l = cfg.lookback;
    let w = make_windows(values, l, TargetKind::Reconstruct, 1, &cfg.split)?;
    let scoring = make_windows(values, l, TargetKind::Reconstruct, l, &cfg.split)?;
    nonempty(&w.train, "train", 1)?;
    nonempty(&w.val, "validation", 1)?;
    nonempty(&scoring.test, "test", 1)?;
    let counts = [w.train.len(), w.val.len(), scoring.test.len()];
    let train = Examples::Windows { set: w.train, masks: None };
    let val = Examples::Windows { set: w.val, masks: None };
    let t = fit(cfg, shape(cfg, v, HeadSpec::Flatten { out: l }), &train, &val)?;
    let bs = cfg.optimizer.batch_size;
    let (train_energy, _, _) = energies(&t.model, &scoring.train, bs)?;
    let (test_energy, steps, resid) = energies(&t.model, &scoring.test, bs)?;
    let tau = anomaly_threshold(&train_energy, &test_energy, ratio)?;
    let flags = flag_anomalies(&test_energy, tau);
    let truth: Vec<u8> = steps.iter().map(|&i| labels[i]).collect();
    let metrics = detection_metrics(&truth, &flags, adjust)?;
    let resid = residual_or_none(&resid, v, 1, cfg.diagnostics.max_lag);
    let test = Examples::Windows {
        set: scoring.test,
        masks: None,
    };
    let align = alignment(&t.model, &test, cfg);
    Ok(vec![task_run(t, metrics, resid, align, None, None, counts)])
}

fn run_classify(cfg: &ExperimentConfig, samples: &[SeriesTensor], classes: usize) -> Result<Vec<TaskRun>> {
    let [train, val, test] = split_samples(samples, cfg.lookback, classes, &cfg.split, cfg.seed)?;
    let v = samples[0].n_vars();
    let counts = [train.len(), val.len(), test.len()];
    let t = fit(cfg, shape(cfg, v, HeadSpec::Classify { classes }), &train, &val)?;
    let e = evaluate(&t.model, &test, cfg.optimizer.batch_size)?;
    let predicted: Vec<usize> = e.pred.rows().into_iter().map(|r| argmax(&r.to_vec())).collect();
    let metrics = accuracy_metrics(&predicted, &e.labels)?;
    let align = alignment(&t.model, &test, cfg);
    Ok(vec![task_run(t, metrics, None, align, None, None, counts)])
}

/// Trains, tests and diagnoses one configuration, then writes
/// `result.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    let start = Instant::now();
    cfg.validate()?;
    log::info!("{} {} on {}", cfg.variant.kind.name(), cfg.task.name(), cfg.dataset.path.display());
    let data = load_dataset(&cfg.dataset.path, &cfg.dataset.schema)?;
    let runs = match (&cfg.task, &data) {
        (TaskSpec::Forecast { horizons }, Dataset::Series(s)) => run_forecast(cfg, &standardized(s, cfg)?, horizons)?,
        (TaskSpec::Impute { mask_ratios }, Dataset::Series(s)) => run_impute(cfg, &standardized(s, cfg)?, mask_ratios)?,
        (
            TaskSpec::Anomaly {
                anomaly_ratio,
                point_adjust,
            },
            Dataset::Series(s),
        ) => run_anomaly(cfg, s, &standardized(s, cfg)?, *anomaly_ratio, *point_adjust)?,
        (TaskSpec::Classify { classes }, Dataset::Samples(s)) => run_classify(cfg, s, *classes)?,
        (task, _) => return config(format!("dataset schema does not fit the {} task", task.name())),
    };
    let first = runs[0].params;
    let dataset = cfg
        .dataset
        .path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    let result = RunResult {
        name: cfg.name.clone().unwrap_or_else(|| dataset.clone()),
        dataset,
        task: cfg.task.name().into(),
        variant: cfg.variant.kind.name().into(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        lr_grid: cfg.optimizer.learning_rates.clone(),
        trainable_params: first.trainable,
        total_params: first.total,
        runs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    result.write(&cfg.output_dir)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub results: Vec<RunResult>,
    /// Absent for tasks without MSE/MAE.
    pub tally: Option<WinTally>,
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out: String = self.results.iter().map(RunResult::render).collect();
        if let Some(t) = &self.tally {
            out.push('\n');
            out.push_str(&t.render());
        }
        out
    }
}

/// MSE and MAE rows keyed by dataset, task and setting, one column per
/// variant.
pub fn regression_rows(results: &[RunResult]) -> (Vec<String>, Vec<Row>, Vec<Row>) {
    let mut variants: Vec<String> = Vec::new();
    let mut mse: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut mae: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in results {
        if !variants.contains(&r.variant) {
            variants.push(r.variant.clone());
        }
        for run in &r.runs {
            let key = format!("{}/{}/{}", r.dataset, r.task, run.setting());
            if let Some(v) = run.metrics.mse {
                mse.entry(key.clone()).or_default().insert(r.variant.clone(), v);
            }
            if let Some(v) = run.metrics.mae {
                mae.entry(key).or_default().insert(r.variant.clone(), v);
            }
        }
    }
    let rank = |v: &String| VariantKind::parse(v).map_or(usize::MAX, |k| VariantKind::ALL.iter().position(|x| *x == k).unwrap_or(usize::MAX));
    variants.sort_by_key(rank);
    (variants, mse.into_iter().collect(), mae.into_iter().collect())
}

/// Runs each listed variant on the shared data and task with the same
/// seed; every result lands in `output_dir/<variant>/`.
pub fn compare_variants(template: &ExperimentConfig, kinds: &[VariantKind]) -> Result<Comparison> {
    if kinds.is_empty() {
        return config("no variants to compare");
    }
    let mut results = Vec::new();
    for &kind in kinds {
        let mut cfg = template.clone();
        cfg.variant.kind = kind;
        if kind != template.variant.kind {
            cfg.variant.freeze_policy = None;
        }
        if kind != VariantKind::Llm {
            cfg.variant.checkpoint = None;
        }
        if matches!(kind, VariantKind::Linear | VariantKind::Nollm) {
            cfg.variant.depth = None;
            cfg.variant.heads = None;
        }
        cfg.output_dir = template.output_dir.join(kind.name());
        cfg.name = Some(format!("{}-{}", template.name.clone().unwrap_or_else(|| "compare".into()), kind.name()));
        results.push(run_experiment(&cfg)?);
    }
    let (variants, mse, mae) = regression_rows(&results);
    let tally = if mse.is_empty() { None } else { Some(tally_wins(&variants, &mse, &mae)?) };
    Ok(Comparison { results, tally })
}

/// Loads every `result.json` under `dir`, sorted by path.
pub fn collect_results(dir: &Path) -> Result<Vec<RunResult>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n == RESULT_FILE) {
                found.push(p);
            }
        }
    }
    found.sort();
    found.iter().map(|p| RunResult::load(p)).collect()
}

/// Win tally over every result found under `dir`.
pub fn tally_dir(dir: &Path) -> Result<WinTally> {
    let results = collect_results(dir)?;
    if results.is_empty() {
        return config(format!("no {RESULT_FILE} under {}", dir.display()));
    }
    let (variants, mse, mae) = regression_rows(&results);
    tally_wins(&variants, &mse, &mae)
}
