//! Output heads, losses, anomaly thresholds and evaluation metrics for
//! forecasting, imputation, anomaly detection and classification.

mod anomaly;
mod head;
mod metrics;

pub use anomaly::{anomaly_threshold, error_energy, flag_anomalies, percentile};
pub use head::{masked_mse, ClassifyHead, FlattenHead, TaskConfig};
pub use metrics::{
    accuracy_metrics, argmax, detection_metrics, masked_regression_metrics, point_adjust, regression_metrics,
    MetricRecord,
};
