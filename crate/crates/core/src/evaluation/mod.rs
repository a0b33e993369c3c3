//! Whole-image inference, metrics, repeated-run statistics and reports.

mod metrics;
mod overlay;
mod report;
mod stats;
mod window;

pub use metrics::{intersection_over_union, pixel_accuracy, threshold_map, Confusion};
pub use overlay::emit_overlays;
pub use report::{
    evaluate_dataset, evaluate_network, evaluate_samples, load_test_samples, write_summary_table,
    ImageMetrics, MetricsReport, ReportMeta,
};
pub use stats::{paired_t_test, summarize_runs, Degenerate, MeanSd, RunSummary, TTest};
pub use window::{sliding_window_infer, window_offsets, Predictor, SlidingWindow, WindowModel};
