//! Episode metrics and the statistical comparison of strategies.

mod metrics;
mod report;
pub mod stats;

pub use metrics::{dtw_normalized, episode_metrics, to_action_units, DtwNorm, DtwReduce, EpisodeMetrics, MetricsConfig};
pub use report::{
    build_report, compare_groups, groups_by_strategy, read_metrics_csv, render_text, write_metrics_csv, write_plot_csv, GroupSummary,
    MetricTable, MetricsRow, PairEffect, Report, StatReport, Transform, METRICS, POSTHOC_NOTE,
};
pub use stats::{anova_oneway, box_cox, hedges_g, holm, kruskal_wallis, levene, mann_whitney, welch_t, TestResult};
