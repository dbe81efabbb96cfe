//! Simulation of a first-order, two-sensor differential microphone array
//! whose sensor signals pass through a uniform quantizer.
//!
//! The pipeline is [`signal`] synthesis → [`quantizer`] → [`beamformer`] →
//! Monte Carlo [`metrics`], with the [`experiment`] module driving complete
//! sweeps and writing CSV results.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod beamformer;
pub mod experiment;
pub mod metrics;
pub mod quantizer;
pub mod signal;

pub use beamformer::{FirstOrderDesign, PatternKind, PatternSpec};
pub use metrics::{AngleGrid, BeampatternResult, MonteCarloPlan, RailQuantizers, Scenario};
pub use quantizer::QuantizerSpec;
pub use signal::{ArrayGeometry, SamplingConfig, SensorChannel, SourceSignal};
