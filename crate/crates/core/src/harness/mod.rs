//! Config-driven experiments: data preparation, model assembly, training
//! with a learning-rate grid and early stopping, evaluation, diagnostics,
//! result persistence and win tallies across variants.

mod config;
mod data;
mod model;
mod run;
mod tally;
mod train;

pub use config::{DatasetConfig, DiagnosticsConfig, ExperimentConfig, OptimizerConfig, TaskSpec, SEED_ENV};
pub use data::{split_samples, stack_channels, window_masks, Batch, BatchTarget, Examples};
pub use model::{Forward, HeadSpec, ModelShape, ParamCounts, TsModel};
pub use run::{
    collect_results, compare_variants, regression_rows, residual_diagnostics, run_experiment, tally_dir, Comparison,
    RunResult, TaskRun, RESULT_FILE,
};
pub use tally::{count_wins, tally_wins, Row, WinTally};
pub use train::{batch_loss, evaluate_loss, select_learning_rate, train, LrTrial};
