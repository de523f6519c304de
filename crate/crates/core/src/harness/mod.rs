//! Experiment orchestration: config, benchmark and sweep execution, reports.

pub mod bench;
pub mod config;
pub mod report;

pub use bench::{
    build_provider, method_accuracies, reference_source_stats, replay_decision,
    resolve_source_stats, run_benchmark, run_benchmark_with, run_suite_with, sweep, sweep_with,
    RunOutput, SweepAxis, SweepValue, Workload,
};
pub use config::{ExperimentConfig, ProviderKind, SCHEMA_VERSION};
pub use report::{export_report, ExperimentReport, TimingReport};
