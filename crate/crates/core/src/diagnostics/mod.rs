//! Residual diagnostics, transport distances, Lipschitz bounds and
//! token-cloud alignment metrics.

mod alignment;
mod export;
mod lipschitz;
mod residual;
mod wasserstein;

pub use alignment::{
    alignment_report, knn_indices, knn_jaccard, plane_rotation, AlignmentOptions, AlignmentReport,
    DiagnosticsSummary, VarianceProfile, DEFAULT_K,
};
pub use export::{export_embeddings, read_embeddings, read_matrix};
pub use lipschitz::{
    check_reprogram_bound, lipschitz_upper, probe_apply, scalar_probe, spectral_norm, BoundCheck, ProbeLayer,
    GELU_LIPSCHITZ,
};
pub use residual::{acf, aggregate_dw, durbin_watson, residual_acf, ResidualDiagnostics, DEFAULT_MAX_LAG};
pub use wasserstein::{
    min_cost_assignment, sliced_wasserstein, unit_directions, wasserstein1_1d, wasserstein1_exact,
    DEFAULT_PROJECTIONS,
};
