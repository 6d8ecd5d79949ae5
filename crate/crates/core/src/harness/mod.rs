//! Experiment configuration, the partition → pretrain → group → train pipeline,
//! rounds-to-target reporting and the command-line interface.

mod cli;
mod config;
mod pipeline;
mod report;

pub use cli::{run, EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILURE, EXIT_OK};
pub use config::{
    Algorithm, ApproximatorConfig, CentralizedConfig, DataConfig, ExperimentConfig,
    GroupingSection, ModelConfig, PartitionConfig, PretrainConfig, TrainConfig, PRESETS,
};
pub use pipeline::{
    execute, prepare, Command, GroupingSummary, Normalization, Pipeline, Prepared, RunManifest,
};
pub use report::{
    collect_runs, final_accuracy, forward_means, report_dir, rounds_to_target, speedup_table,
    speedups_csv, Curve, RunRecord, TargetRow, FINAL_WINDOW, NOT_REACHED, SMOOTHING_WINDOW,
    TARGET_FRACTIONS,
};
