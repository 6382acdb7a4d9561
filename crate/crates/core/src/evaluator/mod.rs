//! Metrics, the per-flow MLP baseline, scenario runners and reports.

pub mod baseline;
pub mod metrics;
pub mod report;
pub mod scenario;

pub use baseline::{mlp_predict, mlp_train, MlpConfig, MlpModel};
pub use metrics::{compute_metrics, MetricsReport};
pub use report::{emit_report, parse_report_csv, report_csv, report_svg, ReportFormat};
pub use scenario::{run_scenario, run_scenario_with_progress, ScenarioConfig, ScenarioKind, ScenarioResult};
