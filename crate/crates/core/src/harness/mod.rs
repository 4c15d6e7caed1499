// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment harness: TOML config, paired-sample files, end-to-end
//! pipelines and report emission.

pub mod config;
pub mod dataset;
pub mod pipelines;
pub mod report;

pub use config::ExperimentConfig;
pub use pipelines::{
    run_all, run_alpha_analog, run_confusion_analog, run_faithfulness_suite, run_fig3_analog,
    run_optimality, run_reverse_analog, run_table2_analog, Experiment, VectorSource,
};
pub use report::{write_bundle, ReportBundle};
