//! First-order differential weight design, mismatch compensation and the
//! quantized beamformer output.
//!
//! The array response toward `θ` is
//! `A(θ) = Σ_i W_i·e^(jΨ_i)·e^(−j·ω0·x_i·cos θ/c)` with `x_1 = 0`, `x_2 = δ`.
//! A design fixes `A(0°) = 1` (distortionless endfire) and `A(θ_null) = 0`.
//!
//! Each sensor's complex sample `z = r_in + j·r_quad` is multiplied by the
//! compensated weight `H = W·e^(jΨ) / (G_s·e^(jφ_s))` and the real part of the
//! sum is the beamformer output.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantizer::QuantizerSpec;
use crate::signal::{ArrayGeometry, SensorChannel};

/// Minimum determinant magnitude of the constraint system.
pub const SINGULAR_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeamformerError {
    #[error("null at {null_deg}° cannot be separated from the look direction (|det| = {determinant:.3e})")]
    Singular { null_deg: f64, determinant: f64 },
    #[error("null angle must lie in [0°, 180°], got {0}°")]
    NullAngle(f64),
    #[error("diagonal loading must be non-negative and finite, got {0}")]
    Loading(f64),
    #[error("sensor {sensor} has zero gain")]
    ZeroGain { sensor: usize },
    #[error("expected {expected} samples/sensors, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Dipole,
    Cardioid,
    Hypercardioid,
    Supercardioid,
    Custom,
}

impl PatternKind {
    pub const NAMED: [PatternKind; 4] = [
        PatternKind::Dipole,
        PatternKind::Cardioid,
        PatternKind::Hypercardioid,
        PatternKind::Supercardioid,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PatternKind::Dipole => "dipole",
            PatternKind::Cardioid => "cardioid",
            PatternKind::Hypercardioid => "hypercardioid",
            PatternKind::Supercardioid => "supercardioid",
            PatternKind::Custom => "custom",
        }
    }

    /// Null angle bound to a named kind.
    pub fn null_deg(&self) -> Option<f64> {
        match self {
            PatternKind::Dipole => Some(90.0),
            PatternKind::Cardioid => Some(180.0),
            PatternKind::Hypercardioid => Some(120.0),
            PatternKind::Supercardioid => Some(135.0),
            PatternKind::Custom => None,
        }
    }
}

impl std::fmt::Display for PatternKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PatternKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dipole" => Ok(PatternKind::Dipole),
            "cardioid" => Ok(PatternKind::Cardioid),
            "hypercardioid" => Ok(PatternKind::Hypercardioid),
            "supercardioid" => Ok(PatternKind::Supercardioid),
            "custom" => Ok(PatternKind::Custom),
            other => Err(format!("unknown pattern '{other}'")),
        }
    }
}

/// Pattern with its single null; the look direction is always 0°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    kind: PatternKind,
    null_deg: f64,
}

impl PatternSpec {
    pub fn named(kind: PatternKind) -> Option<Self> {
        kind.null_deg().map(|null_deg| Self { kind, null_deg })
    }

    pub fn custom(null_deg: f64) -> Result<Self, BeamformerError> {
        if null_deg > 0.0 && null_deg <= 180.0 {
            Ok(Self {
                kind: PatternKind::Custom,
                null_deg,
            })
        } else {
            Err(BeamformerError::NullAngle(null_deg))
        }
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn null_deg(&self) -> f64 {
        self.null_deg
    }

    pub fn label(&self) -> String {
        match self.kind {
            PatternKind::Custom => format!("null{}", self.null_deg),
            kind => kind.name().to_owned(),
        }
    }
}

/// Filter weight `W·e^(jΨ)` for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorWeight {
    pub magnitude: f64,
    pub phase: f64,
}

impl SensorWeight {
    pub fn from_complex(w: Complex64) -> Self {
        Self {
            magnitude: w.norm(),
            phase: w.arg(),
        }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.phase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderDesign {
    weights: [SensorWeight; 2],
    angular_frequency: f64,
    geometry: ArrayGeometry,
    null_deg: f64,
}

fn steering(geometry: &ArrayGeometry, angular_frequency: f64, theta: f64) -> [Complex64; 2] {
    let tau = geometry.electrical_spacing(angular_frequency);
    [
        Complex64::new(1.0, 0.0),
        Complex64::from_polar(1.0, -tau * theta.cos()),
    ]
}

/// Solves `a·h = b` for a 2×2 complex system by elimination.
fn solve2(a: [[Complex64; 2]; 2], b: [Complex64; 2]) -> [Complex64; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        (b[0] * a[1][1] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ]
}

/// Designs the two weights meeting `A(0°) = 1` and `A(θ_null) = 0`.
///
/// With `loading > 0` the constraints are met in the regularised least-squares
/// sense `(VᴴV + μI)·h = Vᴴe`, which trades null depth for smaller weights.
pub fn design_first_order(
    geometry: &ArrayGeometry,
    angular_frequency: f64,
    null_deg: f64,
    loading: f64,
) -> Result<FirstOrderDesign, BeamformerError> {
    if !(0.0..=180.0).contains(&null_deg) {
        return Err(BeamformerError::NullAngle(null_deg));
    }
    if !(loading.is_finite() && loading >= 0.0) {
        return Err(BeamformerError::Loading(loading));
    }
    let look = steering(geometry, angular_frequency, 0.0);
    let null = steering(geometry, angular_frequency, null_deg.to_radians());
    let rows = [look, null];
    let det = (look[0] * null[1] - look[1] * null[0]).norm();
    if null_deg == 0.0 || (loading == 0.0 && det < SINGULAR_THRESHOLD) {
        return Err(BeamformerError::Singular {
            null_deg,
            determinant: det,
        });
    }
    let target = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let h = if loading == 0.0 {
        solve2(rows, target)
    } else {
        let mut gram = [[Complex64::new(0.0, 0.0); 2]; 2];
        let mut rhs = [Complex64::new(0.0, 0.0); 2];
        for (r, t) in rows.iter().zip(&target) {
            for i in 0..2 {
                rhs[i] += r[i].conj() * t;
                for j in 0..2 {
                    gram[i][j] += r[i].conj() * r[j];
                }
            }
        }
        gram[0][0] += loading;
        gram[1][1] += loading;
        solve2(gram, rhs)
    };
    Ok(FirstOrderDesign {
        weights: [SensorWeight::from_complex(h[0]), SensorWeight::from_complex(h[1])],
        angular_frequency,
        geometry: *geometry,
        null_deg,
    })
}

impl FirstOrderDesign {
    pub fn for_pattern(
        geometry: &ArrayGeometry,
        angular_frequency: f64,
        pattern: &PatternSpec,
        loading: f64,
    ) -> Result<Self, BeamformerError> {
        design_first_order(geometry, angular_frequency, pattern.null_deg(), loading)
    }

    pub fn weights(&self) -> &[SensorWeight; 2] {
        &self.weights
    }

    pub fn angular_frequency(&self) -> f64 {
        self.angular_frequency
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn null_deg(&self) -> f64 {
        self.null_deg
    }

    /// Ideal (unquantized, mismatch-free) complex response toward `theta` rad.
    pub fn ideal_response(&self, theta: f64) -> Complex64 {
        let c = self.geometry.sound_speed();
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let delay = self.geometry.sensor_position(i) * theta.cos() / c;
                w.to_complex() * Complex64::from_polar(1.0, -self.angular_frequency * delay)
            })
            .sum()
    }

    /// Maximum of `|A(θ)|` over `angles_deg`.
    pub fn peak_response(&self, angles_deg: &[f64]) -> f64 {
        angles_deg
            .iter()
            .map(|a| self.ideal_response(a.to_radians()).norm())
            .fold(0.0, f64::max)
    }

    pub fn compensate(&self, channels: &[SensorChannel]) -> Result<[CompensatedWeight; 2], BeamformerError> {
        compensate(self, channels)
    }
}

/// `H = (W·e^(jΨ))·(1/G_s)·e^(−jφ_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompensatedWeight(pub Complex64);

impl CompensatedWeight {
    pub fn value(&self) -> Complex64 {
        self.0
    }

    /// Contribution `Re{H·(x + j·y)}` of one sensor sample.
    #[inline(always)]
    pub fn project(&self, inphase: f64, quadrature: f64) -> f64 {
        self.0.re * inphase - self.0.im * quadrature
    }
}

pub fn compensate(
    design: &FirstOrderDesign,
    channels: &[SensorChannel],
) -> Result<[CompensatedWeight; 2], BeamformerError> {
    if channels.len() != 2 {
        return Err(BeamformerError::LengthMismatch {
            expected: 2,
            actual: channels.len(),
        });
    }
    let mut out = [CompensatedWeight(Complex64::new(0.0, 0.0)); 2];
    for (i, (w, ch)) in design.weights.iter().zip(channels).enumerate() {
        if ch.gain() <= 0.0 {
            return Err(BeamformerError::ZeroGain { sensor: i });
        }
        out[i] = compensated_weight(*w, ch);
    }
    Ok(out)
}

pub fn compensated_weight(weight: SensorWeight, channel: &SensorChannel) -> CompensatedWeight {
    let angle = weight.phase - channel.phase();
    let (sin, cos) = angle.sin_cos();
    let scale = weight.magnitude / channel.gain();
    CompensatedWeight(Complex64::new(scale * cos, scale * sin))
}

/// Complex sample stream `z[n] = r_in[n] + j·r_quad[n]` of one sensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorFrame {
    pub inphase: Vec<f64>,
    pub quadrature: Vec<f64>,
}

impl SensorFrame {
    pub fn new(inphase: Vec<f64>, quadrature: Vec<f64>) -> Result<Self, BeamformerError> {
        if inphase.len() != quadrature.len() {
            return Err(BeamformerError::LengthMismatch {
                expected: inphase.len(),
                actual: quadrature.len(),
            });
        }
        Ok(Self { inphase, quadrature })
    }

    pub fn len(&self) -> usize {
        self.inphase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inphase.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMeta {
    pub arrival_deg: f64,
    pub quantizer: QuantizerSpec,
    pub master_seed: u64,
    pub trial: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedSequence {
    pub samples: Vec<f64>,
    pub meta: Option<TrialMeta>,
}

impl BeamformedSequence {
    pub fn with_meta(mut self, meta: TrialMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time-averaged power `(1/P)·Σ b[n]²`.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|b| b * b).sum::<f64>() / self.samples.len() as f64
    }
}

fn check_frames(frames: &[SensorFrame], weights: usize) -> Result<usize, BeamformerError> {
    if frames.len() != weights {
        return Err(BeamformerError::LengthMismatch {
            expected: weights,
            actual: frames.len(),
        });
    }
    let len = frames.first().map_or(0, SensorFrame::len);
    for f in frames {
        if f.inphase.len() != len || f.quadrature.len() != len {
            return Err(BeamformerError::LengthMismatch {
                expected: len,
                actual: f.inphase.len().min(f.quadrature.len()),
            });
        }
    }
    Ok(len)
}

/// `b[n] = Re{Σ_i H_i·z_i[n]}`.
pub fn beamform_quantized(
    frames: &[SensorFrame],
    weights: &[CompensatedWeight],
) -> Result<BeamformedSequence, BeamformerError> {
    let len = check_frames(frames, weights.len())?;
    let samples = (0..len)
        .map(|n| {
            frames
                .iter()
                .zip(weights)
                .fold(0.0, |acc, (f, h)| acc + h.project(f.inphase[n], f.quadrature[n]))
        })
        .collect();
    Ok(BeamformedSequence { samples, meta: None })
}

/// Beamformer output split into the unquantized signal term and the
/// propagated quantization error.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub ideal: Vec<f64>,
    pub error: Vec<f64>,
}

/// Splits the output into `Σ_i Re{H_i·z_i}` (exact samples) and
/// `Σ_i [Re(H_i)·ε_in,i − Im(H_i)·ε_quad,i]`.
pub fn decompose(
    quantized: &[SensorFrame],
    exact: &[SensorFrame],
    weights: &[CompensatedWeight],
) -> Result<Decomposition, BeamformerError> {
    let len = check_frames(quantized, weights.len())?;
    let exact_len = check_frames(exact, weights.len())?;
    if exact_len != len {
        return Err(BeamformerError::LengthMismatch {
            expected: len,
            actual: exact_len,
        });
    }
    let mut ideal = vec![0.0; len];
    let mut error = vec![0.0; len];
    for n in 0..len {
        for ((q, x), h) in quantized.iter().zip(exact).zip(weights) {
            ideal[n] += h.project(x.inphase[n], x.quadrature[n]);
            error[n] += h.project(q.inphase[n] - x.inphase[n], q.quadrature[n] - x.quadrature[n]);
        }
    }
    Ok(Decomposition { ideal, error })
}

/// Closed-form weight magnitude `1/(2·sin(τ(1 − cos θ_null)/2))`.
pub fn closed_form_weight_magnitude(tau: f64, null_deg: f64) -> f64 {
    1.0 / (2.0 * (tau * (1.0 - null_deg.to_radians().cos()) / 2.0).sin()).abs()
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let wrapped = phase.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}
