use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::OptimizerConfig;
use super::data::{Batch, BatchTarget, Examples};
use super::model::TsModel;
use crate::autograd::{Adam, Tape, Var};
use crate::error::{config, Error, Result};
use crate::heads::masked_mse;

/// The training loss of one batch on the tape.
pub fn batch_loss(tape: &mut Tape, model: &TsModel, batch: &Batch) -> Result<Var> {
    let views = batch.views();
    let f = model.forward(tape, &views, batch.observed.as_deref())?;
    Ok(match &batch.target {
        BatchTarget::Values { values, weight: None } => tape.mse(f.out, values.clone()),
        BatchTarget::Values { values, weight: Some(w) } => masked_mse(tape, f.out, values.clone(), w.clone()),
        BatchTarget::Classes(labels) => tape.softmax_xent(f.out, labels),
    })
}

/// Sum of per-element losses and the element count, so batches pool
/// exactly.
fn loss_parts(pred: &Array2<f64>, target: &BatchTarget) -> (f64, f64) {
    match target {
        BatchTarget::Values { values, weight } => {
            let d = pred - values;
            match weight {
                None => (d.mapv(|x| x * x).sum(), d.len() as f64),
                Some(w) => ((&d * w).mapv(|x| x * x).sum(), w.sum()),
            }
        }
        BatchTarget::Classes(labels) => {
            let mut total = 0.0;
            for (row, &c) in pred.rows().into_iter().zip(labels) {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + row.mapv(|x| (x - m).exp()).sum().ln();
                total += lse - row[c];
            }
            (total, labels.len() as f64)
        }
    }
}

/// Loss over a whole split in fixed order.
pub fn evaluate_loss(model: &TsModel, data: &Examples, batch_size: usize) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0.0);
    for idx in data.chunks(batch_size) {
        let b = data.batch(&idx);
        let pred = model.predict(&b.views(), b.observed.as_deref())?;
        let (s, c) = loss_parts(&pred, &b.target);
        sum += s;
        count += c;
    }
    Ok(if count > 0.0 { sum / count } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTrial {
    pub lr: f64,
    pub initial_val_loss: Option<f64>,
    /// Validation loss after each completed epoch.
    pub val_history: Vec<f64>,
    pub best_val_loss: Option<f64>,
    /// 1-based epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub steps: usize,
    pub diverged: Option<String>,
}

/// Adam on shuffled minibatches with early stopping on the validation
/// loss. The best parameters (possibly the initial ones) are restored.
pub fn train(model: &mut TsModel, train: &Examples, val: &Examples, opt: &OptimizerConfig, lr: f64, seed: u64) -> Result<LrTrial> {
    if train.is_empty() || val.is_empty() {
        return config(format!("need training and validation examples, have {} and {}", train.len(), val.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(lr);
    let initial = evaluate_loss(model, val, opt.batch_size)?;
    let mut best = (initial, 0usize, model.store.clone());
    let mut trial = LrTrial {
        lr,
        initial_val_loss: Some(initial),
        val_history: Vec::new(),
        best_val_loss: None,
        best_epoch: 0,
        epochs_run: 0,
        steps: 0,
        diverged: None,
    };
    let mut last_finite = initial;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=opt.max_epochs {
        order.shuffle(&mut rng);
        let cap = opt.max_steps_per_epoch.unwrap_or(usize::MAX);
        for (step, idx) in order.chunks(opt.batch_size).take(cap).enumerate() {
            let batch = train.batch(idx);
            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, model, &batch)?;
            let value = tape.value(loss)[[0, 0]];
            if !value.is_finite() {
                model.store = best.2;
                return Err(Error::Diverged {
                    epoch,
                    step: step + 1,
                    last_finite_loss: last_finite,
                });
            }
            last_finite = value;
            let grads = tape.backward(loss);
            adam.step(&mut model.store, &grads);
            trial.steps += 1;
        }
        let v = evaluate_loss(model, val, opt.batch_size)?;
        if !v.is_finite() {
            model.store = best.2;
            return Err(Error::Diverged {
                epoch,
                step: trial.steps,
                last_finite_loss: last_finite,
            });
        }
        trial.val_history.push(v);
        trial.epochs_run = epoch;
        if v < best.0 {
            best = (v, epoch, model.store.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= opt.patience {
                break;
            }
        }
    }
    trial.best_val_loss = Some(best.0);
    trial.best_epoch = best.1;
    model.store = best.2;
    Ok(trial)
}

/// Trains a fresh model per learning rate and keeps the one with the
/// lowest validation loss (earliest on ties). Diverged rates are recorded
/// and skipped; if every rate diverges the first divergence is returned.
pub fn select_learning_rate<F>(build: F, train_set: &Examples, val: &Examples, opt: &OptimizerConfig, seed: u64) -> Result<(TsModel, Vec<LrTrial>, usize)>
where
    F: Fn() -> Result<TsModel>,
{
    let mut trials = Vec::new();
    let mut best: Option<(f64, usize, TsModel)> = None;
    let mut first_err = None;
    for (i, &lr) in opt.learning_rates.iter().enumerate() {
        let mut model = build()?;
        match train(&mut model, train_set, val, opt, lr, seed) {
            Ok(t) => {
                let v = t.best_val_loss.unwrap_or(f64::INFINITY);
                log::info!("lr {lr}: best val loss {v:.5} at epoch {} of {}", t.best_epoch, t.epochs_run);
                if best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, i, model));
                }
                trials.push(t);
            }
            Err(e @ Error::Diverged { .. }) => {
                log::warn!("learning rate {lr} diverged: {e}");
                trials.push(LrTrial {
                    lr,
                    initial_val_loss: None,
                    val_history: Vec::new(),
                    best_val_loss: None,
                    best_epoch: 0,
                    epochs_run: 0,
                    steps: 0,
                    diverged: Some(e.to_string()),
                });
                first_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((_, i, m)) => Ok((m, trials, i)),
        None => Err(first_err.expect("empty grid rejected by validation")),
    }
}
