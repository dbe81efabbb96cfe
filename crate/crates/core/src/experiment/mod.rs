//! Experiment harness: configuration, sweeps, CSV output and run records.

use std::path::PathBuf;

use thiserror::Error;

mod config;
mod report;
mod runs;
mod validate;

pub use config::{
    ArraySection, DesignSection, ExperimentConfig, GridSection, MonteCarloSection, OneOrMany, QuantizerSection,
    SignalSection, SpacingMode, SweepSection,
};
pub use report::{fmt_num, persist, sha256_hex, Check, CsvTable, Rule, RunOutput, RunRecord};
pub use runs::{
    beampattern_file, design, fitted_slope, ideal_df_fbr, reference, run_beampatterns, run_df_fbr_sweep,
    run_freq_bit_sweep, run_null_sweep, run_sdn_table, scenario, sdn_point, SdnPoint, BEAMPATTERN_HEADER,
    DF_FBR_FILE, DF_FBR_HEADER, FREQ_SWEEP_FILE, FREQ_SWEEP_HEADER, NULL_SWEEP_FILE, NULL_SWEEP_HEADER,
    SDN_TABLE_FILE, SDN_TABLE_HEADER,
};
pub use validate::{
    decomposition_residual, quantization_noise, quantizer_properties, run_validate, NoiseStats,
    QuantizerProperties,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration field `{field}`: {message}")]
    Config { field: &'static str, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse configuration: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("cannot serialize run record: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Beamformer(#[from] crate::beamformer::BeamformerError),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Quantizer(#[from] crate::quantizer::QuantizerError),
}

impl ExperimentError {
    /// Whether the error stems from user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config { .. } | Self::TomlDe(_))
    }
}

/// A runnable experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Beampattern,
    SdnTable,
    DfFbr,
    FreqSweep,
    NullSweep,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Beampattern,
        Experiment::SdnTable,
        Experiment::DfFbr,
        Experiment::FreqSweep,
        Experiment::NullSweep,
        Experiment::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Beampattern => "beampattern",
            Experiment::SdnTable => "sdn-table",
            Experiment::DfFbr => "df-fbr",
            Experiment::FreqSweep => "freq-sweep",
            Experiment::NullSweep => "null-sweep",
            Experiment::Validate => "validate",
        }
    }

    pub fn run(self, cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
        match self {
            Experiment::Beampattern => run_beampatterns(cfg),
            Experiment::SdnTable => run_sdn_table(cfg),
            Experiment::DfFbr => run_df_fbr_sweep(cfg),
            Experiment::FreqSweep => run_freq_bit_sweep(cfg),
            Experiment::NullSweep => run_null_sweep(cfg),
            Experiment::Validate => run_validate(cfg),
        }
    }
}
