//! Scenario configuration, the replication runner and summary outputs.

mod config;
mod output;
mod presets;
mod run;

use thiserror::Error;

pub use config::{
    ConfigError, DesignConfig, DgpConfig, DgpModel, EstimatorConfig, EstimatorKind, GridAxis, GridConfig,
    InferenceConfig, OutputConfig, ScenarioConfig, Target,
};
pub use output::{
    emit_outputs, parse_summary_json, read_summary_csv, summary_csv, summary_json, SUMMARY_HEADER,
};
pub use presets::{preset, preset_names};
pub use run::{
    mean, population_variance, rmse_slope, rmse_standard_error, run_scenario, slope_fit,
    variance_standard_error, ReplicateRecord, RowExtras, SavedTrajectory, ScenarioResult, SummaryRow,
    SummaryTable, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Population(#[from] crate::population::PopulationError),
    #[error(transparent)]
    Design(#[from] crate::design::DesignError),
    #[error(transparent)]
    Estimate(#[from] crate::estimate::EstimateError),
    #[error(transparent)]
    Infer(#[from] crate::infer::InferError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format: {0}")]
    Format(String),
    #[error("{0}")]
    Degenerate(String),
}
