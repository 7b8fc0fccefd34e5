//! Desk-scale laboratory for ablating language-model backbones on
//! time-series tasks.
//!
//! - [`series`]: ingestion, windowing, patching, normalization, decomposition, masks
//! - [`zoo`]: backbone variants, freeze policies, LoRA, text prototypes, Mixer fusion
//! - [`heads`]: task heads, losses, anomaly thresholds and metrics
//! - [`diagnostics`]: Durbin-Watson, residual ACF, Wasserstein-1, Lipschitz bounds, alignment metrics
//! - [`harness`]: experiment configs, training loop, win tallies

pub mod autograd;
pub mod error;
pub mod series;
pub mod zoo;
pub mod heads;
pub mod diagnostics;
pub mod harness;

pub use error::{Error, Result};
