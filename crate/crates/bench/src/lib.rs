//! Benchmark sweep over training modes, detector coverage, probe
//! intensity and sampling scheme, with CSV reports.

pub mod config;
pub mod error;
pub mod heatmap;
pub mod report;
pub mod run;

pub use config::{BenchConfig, CellSpec, Condition, TrainingMode};
pub use error::{Error, Result};
pub use report::{format_table, load_report, load_samples, save_report, save_samples};
pub use run::{
    build_observation, load_models, load_or_generate_corpus, median_masked_mse, run_benchmark,
    run_benchmark_with, sampler_seed, train_mode, BenchResult, BenchRow, RunOutput, SampleRecord,
};
