//! Metrics, the benchmark harness, cost estimates and parameter sweeps.

pub mod cost;
pub mod harness;
pub mod metrics;
pub mod sweep;

pub use cost::{estimate_round_cost, CostEstimate};
pub use harness::{
    load_records, load_records_file, run_benchmark, Aggregate, BenchOptions, BenchmarkRecord,
    QuestionReport, Report, SeedSpec,
};
pub use metrics::{
    answer_metrics, coverage, covered, mad, median, rank_metrics, spearman, RankMetrics,
};
pub use sweep::{sweep, sweep_csv, Grid};
