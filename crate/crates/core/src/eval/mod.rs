//! Decision rule, metrics at timestep, sequence and exact-match
//! granularity, and threshold sweeps.

mod metrics;
mod report;
mod rule;
mod sweep;

pub use metrics::{compute_metrics, Confusion, MetricsReport, SectionMetrics, WindowPrediction};
pub use report::{render_table, report_from_text, report_to_text};
pub use rule::{decide_sequence, decide_timesteps, exact_match, DecisionMode, DecisionRule};
pub use sweep::{
    check_monotone, default_m_grid, default_tau_grid, sweep, sweep_from_csv, sweep_to_csv, SweepRow,
};
