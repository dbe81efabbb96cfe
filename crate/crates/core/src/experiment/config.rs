use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::beamformer::PatternKind;
use crate::metrics::GainModel;
use crate::quantizer::MAX_BITS;

use super::ExperimentError;

/// A scalar or a list in the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingMode {
    /// `spacing` is a fraction of the wavelength at each simulated frequency.
    RelativeWavelength,
    /// `spacing` is a physical distance in metres.
    AbsoluteM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub frequency_hz: f64,
    pub sample_rate_hz: f64,
    pub amplitude: f64,
    pub sequence_length: usize,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            frequency_hz: 1999.0,
            sample_rate_hz: 44_100.0,
            amplitude: 1.0,
            sequence_length: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub spacing_mode: SpacingMode,
    pub spacing: f64,
    pub sound_speed: f64,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            spacing_mode: SpacingMode::RelativeWavelength,
            spacing: 0.04,
            sound_speed: 343.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerSection {
    /// Bit depth(s); each subcommand has its own default when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<OneOrMany<u32>>,
    /// Separate bit depth for the quadrature rail; defaults to `bits`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature_bits: Option<u32>,
    pub full_scale: f64,
}

impl Default for QuantizerSection {
    fn default() -> Self {
        Self {
            bits: None,
            quadrature_bits: None,
            full_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    /// Named patterns for beampattern, sdn-table and df-fbr.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patterns: Option<Vec<PatternKind>>,
    /// Null angles for null-sweep; defaults to 1°..=180° in 1° steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_angles_deg: Option<OneOrMany<f64>>,
    pub diagonal_loading: f64,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self {
            patterns: None,
            null_angles_deg: None,
            diagonal_loading: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub trials: usize,
    /// Trials per angle on the dense DF/FBR integration grid.
    pub integration_trials: usize,
    pub seed: u64,
    pub gain_model: GainModel,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            trials: 5000,
            integration_trials: 100,
            seed: 42,
            gain_model: GainModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub polar_step_deg: f64,
    pub integration_step_deg: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            polar_step_deg: 1.0,
            integration_step_deg: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub freq_start_hz: f64,
    pub freq_stop_hz: f64,
    pub freq_step_hz: f64,
    pub freq_pattern: PatternKind,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            freq_start_hz: 1000.0,
            freq_stop_hz: 6000.0,
            freq_step_hz: 500.0,
            freq_pattern: PatternKind::Dipole,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub signal: SignalSection,
    pub array: ArraySection,
    pub quantizer: QuantizerSection,
    pub design: DesignSection,
    pub monte_carlo: MonteCarloSection,
    pub grid: GridSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            signal: SignalSection::default(),
            array: ArraySection::default(),
            quantizer: QuantizerSection::default(),
            design: DesignSection::default(),
            monte_carlo: MonteCarloSection::default(),
            grid: GridSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

fn field(field: &'static str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        field,
        message: message.into(),
    }
}

fn require_positive(name: &'static str, value: f64) -> Result<(), ExperimentError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(field(name, format!("must be positive and finite, got {value}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.to_owned(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let s = &self.signal;
        require_positive("signal.frequency_hz", s.frequency_hz)?;
        require_positive("signal.sample_rate_hz", s.sample_rate_hz)?;
        require_positive("signal.amplitude", s.amplitude)?;
        if s.sequence_length == 0 {
            return Err(field("signal.sequence_length", "must be at least 1"));
        }
        require_positive("array.spacing", self.array.spacing)?;
        require_positive("array.sound_speed", self.array.sound_speed)?;
        require_positive("quantizer.full_scale", self.quantizer.full_scale)?;
        let bits_ok = |b: u32| (1..=MAX_BITS).contains(&b);
        if let Some(bits) = &self.quantizer.bits {
            let bits = bits.to_vec();
            if bits.is_empty() {
                return Err(field("quantizer.bits", "list is empty"));
            }
            if let Some(b) = bits.iter().find(|b| !bits_ok(**b)) {
                return Err(field("quantizer.bits", format!("{b} is outside 1..={MAX_BITS}")));
            }
        }
        if let Some(b) = self.quantizer.quadrature_bits.filter(|b| !bits_ok(*b)) {
            return Err(field("quantizer.quadrature_bits", format!("{b} is outside 1..={MAX_BITS}")));
        }
        if let Some(patterns) = &self.design.patterns {
            if patterns.is_empty() {
                return Err(field("design.patterns", "list is empty"));
            }
            if patterns.contains(&PatternKind::Custom) {
                return Err(field("design.patterns", "only named patterns are allowed; use null_angles_deg"));
            }
        }
        if let Some(nulls) = &self.design.null_angles_deg {
            let nulls = nulls.to_vec();
            if nulls.is_empty() {
                return Err(field("design.null_angles_deg", "list is empty"));
            }
            if let Some(a) = nulls.iter().find(|a| !(**a > 0.0 && **a <= 180.0)) {
                return Err(field("design.null_angles_deg", format!("{a} is outside (0, 180]")));
            }
        }
        if !(self.design.diagonal_loading.is_finite() && self.design.diagonal_loading >= 0.0) {
            return Err(field("design.diagonal_loading", "must be non-negative"));
        }
        if self.monte_carlo.trials == 0 {
            return Err(field("monte_carlo.trials", "must be at least 1"));
        }
        if self.monte_carlo.integration_trials == 0 {
            return Err(field("monte_carlo.integration_trials", "must be at least 1"));
        }
        self.monte_carlo
            .gain_model
            .validate()
            .map_err(|e| field("monte_carlo.gain_model", e.to_string()))?;
        require_positive("grid.polar_step_deg", self.grid.polar_step_deg)?;
        require_positive("grid.integration_step_deg", self.grid.integration_step_deg)?;
        if self.grid.integration_step_deg > crate::metrics::MAX_INTEGRATION_STEP_DEG {
            return Err(field("grid.integration_step_deg", "must not exceed 1°"));
        }
        if (90.0 / self.grid.integration_step_deg).fract().abs() > 1e-9 {
            return Err(field("grid.integration_step_deg", "must divide 90° evenly"));
        }
        let sw = &self.sweep;
        require_positive("sweep.freq_start_hz", sw.freq_start_hz)?;
        require_positive("sweep.freq_step_hz", sw.freq_step_hz)?;
        if sw.freq_stop_hz < sw.freq_start_hz {
            return Err(field("sweep.freq_stop_hz", "must not be below freq_start_hz"));
        }
        if sw.freq_pattern == PatternKind::Custom {
            return Err(field("sweep.freq_pattern", "must be a named pattern"));
        }
        Ok(())
    }

    pub fn bits_or(&self, default: &[u32]) -> Vec<u32> {
        self.quantizer.bits.as_ref().map_or_else(|| default.to_vec(), OneOrMany::to_vec)
    }

    pub fn patterns(&self) -> Vec<PatternKind> {
        self.design.patterns.clone().unwrap_or_else(|| PatternKind::NAMED.to_vec())
    }

    pub fn null_angles(&self) -> Vec<f64> {
        self.design
            .null_angles_deg
            .as_ref()
            .map_or_else(|| (1..=180).map(f64::from).collect(), OneOrMany::to_vec)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let sw = &self.sweep;
        let count = ((sw.freq_stop_hz - sw.freq_start_hz) / sw.freq_step_hz + 1e-9).floor() as usize;
        (0..=count).map(|k| sw.freq_start_hz + k as f64 * sw.freq_step_hz).collect()
    }
}
