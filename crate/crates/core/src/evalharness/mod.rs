//! Metrics, baselines, experiment orchestration and the command-line front end.

pub mod experiment;
pub mod metrics;

pub use experiment::{
    analyze_correlation, exit_code, run_experiment, CorrSummary, EvalResult, ExperimentConfig, ExperimentData,
    ExperimentOutput, Trained,
};
pub use metrics::{baseline_truncation, freq_correlation, mean_off_diagonal, nmse_db, nmse_db_batch, rho, BitBudget, FreqInput};
