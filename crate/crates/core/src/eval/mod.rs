//! Per-language PCC/RMSE grids with range rows, and the predictions CSV.

pub mod metrics;
pub mod predictions;
pub mod report;

pub use metrics::{pearson, rmse, MetricError};
pub use predictions::{parse_predictions, read_predictions, render_predictions, PredictionRecord};
pub use report::{
    evaluate, parse_report, round_half_away, EvalReport, MetricKind, ReportFormat, ReportRow,
};
