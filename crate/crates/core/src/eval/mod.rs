//! Ranking metrics and report assembly.

mod metrics;
mod report;

pub use metrics::{auc, gauc, group_by_user, ScoredGroup};
pub use report::{
    emit_report, ArmResult, DailyPoint, EvalReport, ReportFormat, VariantSummary,
    BASELINE_VARIANT, CSV_HEADER,
};
