//! Narrowband plane-wave synthesis for a two-sensor endfire array.
//!
//! Sensor 1 sits at the origin and is the phase reference. Sensor 2 sits
//! `spacing` metres along the array axis, so a wave from `θ_a` reaches it
//! with delay `ζ0 = δ·cos θ_a / c`. The fractional delay is applied inside the
//! phase argument; there is no interpolation filter.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ratio `δ/λ` above which the finite-difference approximation is poor.
pub const MAX_DIFFERENTIAL_SPACING_RATIO: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("sample rate {sample_rate_hz} Hz does not exceed twice the source frequency {frequency_hz} Hz")]
    Nyquist {
        sample_rate_hz: f64,
        frequency_hz: f64,
    },
    #[error("sequence length must be at least 1")]
    EmptySequence,
    #[error("sample range {start}..{end} exceeds sequence length {len}")]
    RangeOutOfBounds { start: usize, end: usize, len: usize },
}

fn positive(field: &'static str, value: f64) -> Result<f64, SignalError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(SignalError::NonPositive { field, value })
    }
}

/// `s(t) = B·cos(ω0·t + φ_sig)` as seen at the reference sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSignal {
    amplitude: f64,
    angular_frequency: f64,
    initial_phase: f64,
}

impl SourceSignal {
    pub fn new(amplitude: f64, angular_frequency: f64, initial_phase: f64) -> Result<Self, SignalError> {
        Ok(Self {
            amplitude: positive("amplitude", amplitude)?,
            angular_frequency: positive("angular frequency", angular_frequency)?,
            initial_phase,
        })
    }

    pub fn from_hz(amplitude: f64, frequency_hz: f64, initial_phase: f64) -> Result<Self, SignalError> {
        Self::new(amplitude, TAU * positive("frequency", frequency_hz)?, initial_phase)
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn angular_frequency(&self) -> f64 {
        self.angular_frequency
    }

    pub fn frequency_hz(&self) -> f64 {
        self.angular_frequency / TAU
    }

    pub fn initial_phase(&self) -> f64 {
        self.initial_phase
    }

    /// Same source with a different initial phase.
    pub fn with_phase(mut self, initial_phase: f64) -> Self {
        self.initial_phase = initial_phase;
        self
    }
}

/// Two sensors on a line, `spacing` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    spacing: f64,
    sound_speed: f64,
}

impl ArrayGeometry {
    pub const SENSOR_COUNT: usize = 2;

    pub fn new(spacing: f64, sound_speed: f64) -> Result<Self, SignalError> {
        Ok(Self {
            spacing: positive("spacing", spacing)?,
            sound_speed: positive("sound speed", sound_speed)?,
        })
    }

    /// Spacing expressed as a fraction of the wavelength at `frequency_hz`.
    pub fn relative_to_wavelength(
        ratio: f64,
        frequency_hz: f64,
        sound_speed: f64,
    ) -> Result<Self, SignalError> {
        let wavelength = positive("sound speed", sound_speed)? / positive("frequency", frequency_hz)?;
        Self::new(positive("spacing ratio", ratio)? * wavelength, sound_speed)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    /// Position of sensor `i` along the axis; sensor 0 is the reference.
    pub fn sensor_position(&self, sensor: usize) -> f64 {
        match sensor {
            0 => 0.0,
            _ => self.spacing,
        }
    }

    /// `δ/λ` at angular frequency `omega`.
    pub fn spacing_ratio(&self, angular_frequency: f64) -> f64 {
        self.spacing * angular_frequency / (TAU * self.sound_speed)
    }

    /// True when `δ/λ` is small enough for differential operation.
    pub fn is_differential(&self, angular_frequency: f64) -> bool {
        self.spacing_ratio(angular_frequency) <= MAX_DIFFERENTIAL_SPACING_RATIO
    }

    /// Electrical spacing `τ = ω0·δ/c` in radians.
    pub fn electrical_spacing(&self, angular_frequency: f64) -> f64 {
        angular_frequency * self.spacing / self.sound_speed
    }
}

/// Sensor transfer function `T(ω0) = G_s·e^(jφ_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorChannel {
    gain: f64,
    phase: f64,
}

impl SensorChannel {
    pub fn new(gain: f64, phase: f64) -> Result<Self, SignalError> {
        Ok(Self {
            gain: positive("sensor gain", gain)?,
            phase: phase.rem_euclid(TAU),
        })
    }

    pub fn ideal() -> Self {
        Self { gain: 1.0, phase: 0.0 }
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Phase in `[0, 2π)`.
    pub fn phase(&self) -> f64 {
        self.phase
    }
}

impl Default for SensorChannel {
    fn default() -> Self {
        Self::ideal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    sample_rate: f64,
    sequence_length: usize,
}

impl SamplingConfig {
    pub const DEFAULT_SEQUENCE_LENGTH: usize = 4096;

    pub fn new(sample_rate: f64, sequence_length: usize) -> Result<Self, SignalError> {
        if sequence_length == 0 {
            return Err(SignalError::EmptySequence);
        }
        Ok(Self {
            sample_rate: positive("sample rate", sample_rate)?,
            sequence_length,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn sequence_length(&self) -> usize {
        self.sequence_length
    }

    /// Checks the Nyquist condition for `source`.
    pub fn check_source(&self, source: &SourceSignal) -> Result<(), SignalError> {
        if self.sample_rate > 2.0 * source.frequency_hz() {
            Ok(())
        } else {
            Err(SignalError::Nyquist {
                sample_rate_hz: self.sample_rate,
                frequency_hz: source.frequency_hz(),
            })
        }
    }
}

/// Inter-sensor propagation delay `ζ0 = δ·cos θ_a / c` in seconds.
pub fn intersensor_delay(geometry: &ArrayGeometry, arrival: f64) -> f64 {
    geometry.spacing * arrival.cos() / geometry.sound_speed
}

/// `cos(ω0·n·Ts)` and `sin(ω0·n·Ts)` for `n ∈ [0, P)`.
///
/// Every sensor sample is a rotation of this table by a per-sensor phase
/// offset, so the explicit sequence path and the Monte Carlo estimator
/// produce bit-identical samples.
#[derive(Debug, Clone)]
pub struct Carrier {
    cos: Vec<f64>,
    sin: Vec<f64>,
    angular_frequency: f64,
    sample_period: f64,
}

impl Carrier {
    pub fn new(angular_frequency: f64, sampling: &SamplingConfig) -> Self {
        let step = angular_frequency * sampling.sample_period();
        let (sin, cos) = (0..sampling.sequence_length())
            .map(|n| (step * n as f64).sin_cos())
            .unzip();
        Self {
            cos,
            sin,
            angular_frequency,
            sample_period: sampling.sample_period(),
        }
    }

    pub fn len(&self) -> usize {
        self.cos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cos.is_empty()
    }

    pub fn angular_frequency(&self) -> f64 {
        self.angular_frequency
    }

    pub fn cos(&self) -> &[f64] {
        &self.cos
    }

    pub fn sin(&self) -> &[f64] {
        &self.sin
    }

    /// Phase offset `−ω0·N0·Ts + φ_sig + φ_s` shared by every sample of a sensor.
    pub fn phase_offset(&self, delay: f64, source_phase: f64, channel_phase: f64) -> f64 {
        let fractional_delay = delay / self.sample_period;
        -self.angular_frequency * fractional_delay * self.sample_period + source_phase + channel_phase
    }
}

/// Amplitude and phase rotation applied to the carrier table for one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub amplitude: f64,
    pub cos: f64,
    pub sin: f64,
}

impl Rotation {
    pub fn new(amplitude: f64, phase: f64) -> Self {
        let (sin, cos) = phase.sin_cos();
        Self { amplitude, cos, sin }
    }

    #[inline(always)]
    pub fn inphase(&self, carrier_cos: f64, carrier_sin: f64) -> f64 {
        self.amplitude * (carrier_cos * self.cos - carrier_sin * self.sin)
    }

    #[inline(always)]
    pub fn quadrature(&self, carrier_cos: f64, carrier_sin: f64) -> f64 {
        self.amplitude * (carrier_sin * self.cos + carrier_cos * self.sin)
    }
}

fn sensor_rotation(
    carrier: &Carrier,
    source: &SourceSignal,
    channel: &SensorChannel,
    delay: f64,
) -> Rotation {
    Rotation::new(
        channel.gain() * source.amplitude(),
        carrier.phase_offset(delay, source.initial_phase(), channel.phase()),
    )
}

fn check_range(range: &std::ops::Range<usize>, len: usize) -> Result<(), SignalError> {
    if range.start <= range.end && range.end <= len {
        Ok(())
    } else {
        Err(SignalError::RangeOutOfBounds {
            start: range.start,
            end: range.end,
            len,
        })
    }
}

/// `x[n] = G_s·B·cos(ω0·(n − N0)·Ts + φ_sig + φ_s)` for `n` in `range`.
pub fn synth_inphase(
    carrier: &Carrier,
    source: &SourceSignal,
    channel: &SensorChannel,
    delay: f64,
    range: std::ops::Range<usize>,
) -> Result<Vec<f64>, SignalError> {
    check_range(&range, carrier.len())?;
    let rot = sensor_rotation(carrier, source, channel, delay);
    Ok(range.map(|n| rot.inphase(carrier.cos[n], carrier.sin[n])).collect())
}

/// `y[n] = G_s·B·sin(ω0·(n − N0)·Ts + φ_sig + φ_s)` for `n` in `range`.
pub fn synth_quadrature(
    carrier: &Carrier,
    source: &SourceSignal,
    channel: &SensorChannel,
    delay: f64,
    range: std::ops::Range<usize>,
) -> Result<Vec<f64>, SignalError> {
    check_range(&range, carrier.len())?;
    let rot = sensor_rotation(carrier, source, channel, delay);
    Ok(range.map(|n| rot.quadrature(carrier.cos[n], carrier.sin[n])).collect())
}
