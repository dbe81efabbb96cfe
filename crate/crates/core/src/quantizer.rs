//! Uniform mid-tread quantizer modelling the acquisition front end.
//!
//! Levels are `k·Δ` with `Δ = 2·FS/2^b` and integer codes
//! `k ∈ [−2^(b−1), 2^(b−1) − 1]`. Rounding is half away from zero and
//! out-of-range inputs saturate to the nearest end code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_BITS: u32 = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizerError {
    #[error("bit depth must be in 1..={MAX_BITS}, got {0}")]
    Bits(u32),
    #[error("full scale must be positive and finite, got {0}")]
    FullScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Bits(u32),
    /// No quantization: samples pass through unchanged.
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    resolution: Resolution,
    full_scale: f64,
}

impl QuantizerSpec {
    pub const DEFAULT_FULL_SCALE: f64 = 1.0;

    pub fn new(bits: u32, full_scale: f64) -> Result<Self, QuantizerError> {
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(QuantizerError::Bits(bits));
        }
        if !(full_scale.is_finite() && full_scale > 0.0) {
            return Err(QuantizerError::FullScale(full_scale));
        }
        Ok(Self {
            resolution: Resolution::Bits(bits),
            full_scale,
        })
    }

    pub fn with_bits(bits: u32) -> Result<Self, QuantizerError> {
        Self::new(bits, Self::DEFAULT_FULL_SCALE)
    }

    pub fn bypass() -> Self {
        Self {
            resolution: Resolution::Bypass,
            full_scale: Self::DEFAULT_FULL_SCALE,
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn bits(&self) -> Option<u32> {
        match self.resolution {
            Resolution::Bits(b) => Some(b),
            Resolution::Bypass => None,
        }
    }

    pub fn full_scale(&self) -> f64 {
        self.full_scale
    }

    pub fn is_bypass(&self) -> bool {
        self.resolution == Resolution::Bypass
    }

    /// Step size `Δ = 2·FS/2^b`, or `None` in bypass mode.
    pub fn step_size(&self) -> Option<f64> {
        self.bits().map(|b| 2.0 * self.full_scale / 2f64.powi(b as i32))
    }

    /// Range of integer codes `(k_min, k_max)`.
    pub fn code_range(&self) -> Option<(i64, i64)> {
        self.bits().map(|b| {
            let half = 1i64 << (b - 1);
            (-half, half - 1)
        })
    }

    /// Error variance `Δ²/12` predicted by the uniform error model.
    pub fn error_variance(&self) -> f64 {
        self.step_size().map_or(0.0, |d| d * d / 12.0)
    }

    pub fn quantizer(&self) -> Quantizer {
        Quantizer::new(self)
    }

    pub fn quantize(&self, x: f64) -> f64 {
        self.quantizer().apply(x)
    }

    /// Quantizes `xs` element-wise and counts saturated samples.
    pub fn quantize_seq(&self, xs: &[f64]) -> QuantizedSequence {
        let q = self.quantizer();
        let mut saturated = 0;
        let samples = xs
            .iter()
            .map(|&x| {
                saturated += q.saturates(x) as usize;
                q.apply(x)
            })
            .collect();
        QuantizedSequence { samples, saturated }
    }

    /// `ε[n] = Q{x[n]} − x[n]`.
    pub fn error_seq(&self, xs: &[f64]) -> Vec<f64> {
        let q = self.quantizer();
        xs.iter().map(|&x| q.apply(x) - x).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedSequence {
    pub samples: Vec<f64>,
    pub saturated: usize,
}

/// Precomputed constants for the per-sample hot path.
#[derive(Debug, Clone, Copy)]
pub struct Quantizer {
    step: f64,
    inv_step: f64,
    min_code: f64,
    max_code: f64,
    bypass: bool,
}

// 1.5·2^52: adding and subtracting it rounds to nearest-even for |v| < 2^51.
pub(crate) const ROUNDING_MAGIC: f64 = 6_755_399_441_055_744.0;

/// Round half away from zero. Codes are clamped afterwards, so values beyond
/// 2^51 (never inside the code range) only need to stay large.
#[inline(always)]
fn round_half_away(v: f64) -> f64 {
    let nearest_even = (v + ROUNDING_MAGIC) - ROUNDING_MAGIC;
    if (v - nearest_even).abs() == 0.5 {
        v + 0.5f64.copysign(v)
    } else {
        nearest_even
    }
}

impl Quantizer {
    pub fn new(spec: &QuantizerSpec) -> Self {
        match (spec.step_size(), spec.code_range()) {
            (Some(step), Some((lo, hi))) => Self {
                step,
                inv_step: 1.0 / step,
                min_code: lo as f64,
                max_code: hi as f64,
                bypass: false,
            },
            _ => Self {
                step: 0.0,
                inv_step: 0.0,
                min_code: 0.0,
                max_code: 0.0,
                bypass: true,
            },
        }
    }

    #[inline(always)]
    pub fn code(&self, x: f64) -> f64 {
        let k = round_half_away(x * self.inv_step);
        let k = if k < self.min_code { self.min_code } else { k };
        if k > self.max_code {
            self.max_code
        } else {
            k
        }
    }

    #[inline(always)]
    pub fn apply(&self, x: f64) -> f64 {
        if self.bypass {
            x
        } else {
            self.code(x) * self.step
        }
    }

    /// [`Quantizer::apply`] without the bypass test. Meaningless in bypass mode.
    #[inline(always)]
    pub fn apply_levels(&self, x: f64) -> f64 {
        self.code(x) * self.step
    }

    pub fn is_bypass(&self) -> bool {
        self.bypass
    }

    /// `(1/Δ, k_min, k_max, Δ)` for vectorized re-implementations of [`Quantizer::apply_levels`].
    pub(crate) fn levels(&self) -> (f64, f64, f64, f64) {
        (self.inv_step, self.min_code, self.max_code, self.step)
    }

    pub fn saturates(&self, x: f64) -> bool {
        if self.bypass {
            return false;
        }
        let k = round_half_away(x * self.inv_step);
        k < self.min_code || k > self.max_code
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_sizes() {
        assert!((QuantizerSpec::with_bits(16).unwrap().step_size().unwrap() - 3.051757e-5).abs() < 1e-11);
        assert_eq!(QuantizerSpec::with_bits(16).unwrap().step_size(), Some(2.0 / 65536.0));
        assert_eq!(QuantizerSpec::with_bits(10).unwrap().step_size(), Some(1.953125e-3));
        assert_eq!(QuantizerSpec::with_bits(1).unwrap().step_size(), Some(1.0));
        assert_eq!(QuantizerSpec::bypass().step_size(), None);
    }

    #[test]
    fn invalid_specs() {
        assert_eq!(QuantizerSpec::with_bits(0), Err(QuantizerError::Bits(0)));
        assert_eq!(QuantizerSpec::with_bits(33), Err(QuantizerError::Bits(33)));
        assert!(QuantizerSpec::new(8, 0.0).is_err());
        assert!(QuantizerSpec::new(8, f64::NAN).is_err());
    }

    #[test]
    fn three_bit_examples() {
        let q = QuantizerSpec::with_bits(3).unwrap();
        assert_eq!(q.quantize(0.0), 0.0);
        assert_eq!(q.quantize(0.3), 0.25);
        assert_eq!(q.quantize(0.99), 0.75);
        assert_eq!(q.quantize(-0.99), -1.0);
        assert_eq!(q.code_range(), Some((-4, 3)));
    }

    #[test]
    fn ties_round_away_from_zero() {
        let q = QuantizerSpec::with_bits(3).unwrap();
        assert_eq!(q.quantize(0.125), 0.25);
        assert_eq!(q.quantize(-0.125), -0.25);
        assert_eq!(q.quantize(0.375), 0.5);
        assert_eq!(q.quantize(-0.625), -0.75);
    }

    #[test]
    fn extreme_inputs_saturate() {
        let q = QuantizerSpec::with_bits(12).unwrap();
        let d = q.step_size().unwrap();
        assert_eq!(q.quantize(1e300), 1.0 - d);
        assert_eq!(q.quantize(-1e300), -1.0);
        assert_eq!(q.quantize(f64::INFINITY), 1.0 - d);
        assert_eq!(q.quantize(3e15), 1.0 - d);
    }

    #[test]
    fn sequence_helpers() {
        let q = QuantizerSpec::with_bits(8).unwrap();
        let zeros = vec![0.0; 32];
        assert_eq!(q.quantize_seq(&zeros).samples, zeros);
        assert_eq!(q.quantize_seq(&zeros).saturated, 0);

        let xs: Vec<f64> = (0..100).map(|n| (n as f64 * 0.37).sin() * 0.7 + 1e-3).collect();
        let out = QuantizerSpec::bypass().quantize_seq(&xs);
        assert_eq!(out.samples, xs);
        assert!(QuantizerSpec::bypass().error_seq(&xs).iter().all(|&e| e == 0.0));

        let sat = q.quantize_seq(&[2.0, -2.0, 0.5, 0.999]);
        assert_eq!(sat.saturated, 3);
    }

    #[test]
    fn full_scale_sinusoid_error_bound() {
        let q = QuantizerSpec::with_bits(16).unwrap();
        let d = q.step_size().unwrap();
        let quant = q.quantizer();
        let xs: Vec<f64> = (0..44_100).map(|n| (0.2848 * n as f64 + 0.1).cos()).collect();
        let out = q.quantize_seq(&xs);
        let mut checked = 0;
        for (x, y) in xs.iter().zip(&out.samples) {
            if !quant.saturates(*x) {
                assert!((y - x).abs() <= d / 2.0);
                checked += 1;
            }
        }
        assert!(checked > 40_000);
    }

    proptest! {
        #[test]
        fn idempotent(x in -2.0f64..2.0, bits in 1u32..=24) {
            let q = QuantizerSpec::with_bits(bits).unwrap();
            let once = q.quantize(x);
            prop_assert_eq!(q.quantize(once), once);
        }

        #[test]
        fn monotone(a in -1.5f64..1.5, b in -1.5f64..1.5, bits in 1u32..=24) {
            let q = QuantizerSpec::with_bits(bits).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize(lo) <= q.quantize(hi));
        }

        #[test]
        fn bounded_error_in_range(u in -1.0f64..1.0, bits in 1u32..=24, fs in 0.01f64..100.0) {
            let q = QuantizerSpec::new(bits, fs).unwrap();
            let d = q.step_size().unwrap();
            let x = u * (fs - d / 2.0);
            prop_assert!((q.quantize(x) - x).abs() <= d / 2.0);
        }
    }
}
