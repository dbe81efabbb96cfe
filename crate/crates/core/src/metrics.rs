//! Monte Carlo beampattern estimation and the derived performance measures:
//! suppression depth at the null (SDN), directivity factor (DF) and
//! front-to-back ratio (FBR).
//!
//! Each trial draws a fresh source phase and fresh sensor phase mismatches,
//! quantizes the in-phase and quadrature rails of both sensors, beamforms, and
//! records the time-averaged output power `(1/P)·Σ b[n]²` at every grid angle.
//! The beampattern is the across-trial mean of those powers.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beamformer::{
    beamform_quantized, compensate, compensated_weight, BeamformedSequence, BeamformerError, CompensatedWeight,
    FirstOrderDesign, SensorFrame, TrialMeta,
};
use crate::quantizer::{Quantizer, QuantizerSpec};
use crate::signal::{intersensor_delay, Carrier, Rotation, SamplingConfig, SensorChannel, SignalError, SourceSignal};

/// Largest grid spacing accepted for DF/FBR integration.
pub const MAX_INTEGRATION_STEP_DEG: f64 = 1.0;

const ANGLE_EPS_DEG: f64 = 1e-9;
const TRIAL_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Beamformer(#[from] BeamformerError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("beampattern result is empty")]
    EmptyResult,
    #[error("angle {0}° is not on the result grid")]
    AngleNotOnGrid(f64),
    #[error("grid spacing {step_deg}° exceeds the {MAX_INTEGRATION_STEP_DEG}° integration limit")]
    GridTooCoarse { step_deg: f64 },
    #[error("grid does not cover {0}")]
    GridCoverage(&'static str),
    #[error("design frequency {design} rad/s differs from source frequency {signal} rad/s")]
    FrequencyMismatch { design: f64, signal: f64 },
    #[error("monte carlo plan needs at least one trial")]
    NoTrials,
    #[error("invalid gain model: {0}")]
    GainModel(String),
}

/// Distribution of per-sensor gains `G_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainModel {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for GainModel {
    fn default() -> Self {
        GainModel::Constant { value: 1.0 }
    }
}

impl GainModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = match *self {
            GainModel::Constant { value } => value.is_finite() && value > 0.0,
            GainModel::Uniform { low, high } => low.is_finite() && high.is_finite() && low > 0.0 && high >= low,
        };
        if ok {
            Ok(())
        } else {
            Err(MetricsError::GainModel(format!("{self:?}")))
        }
    }

    /// Largest gain the model can produce.
    pub fn max_gain(&self) -> f64 {
        match *self {
            GainModel::Constant { value } => value,
            GainModel::Uniform { high, .. } => high,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            GainModel::Constant { value } => value,
            GainModel::Uniform { low, high } if high > low => rng.gen_range(low..high),
            GainModel::Uniform { low, .. } => low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloPlan {
    pub trials: usize,
    pub master_seed: u64,
    pub gain_model: GainModel,
}

impl MonteCarloPlan {
    pub const DEFAULT_TRIALS: usize = 5000;

    pub fn new(trials: usize, master_seed: u64) -> Self {
        Self {
            trials,
            master_seed,
            gain_model: GainModel::default(),
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.trials == 0 {
            return Err(MetricsError::NoTrials);
        }
        self.gain_model.validate()
    }

    /// Random quantities of trial `index`: `φ_sig`, then `φ_s` and `G_s` per sensor.
    ///
    /// The generator is seeded from the master seed and positioned on stream
    /// `index`, so a trial's draw never depends on which other trials ran.
    pub fn draw(&self, index: u64) -> TrialDraw {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(index);
        let source_phase = rng.gen_range(0.0..TAU);
        let phases = [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)];
        let gains = [self.gain_model.sample(&mut rng), self.gain_model.sample(&mut rng)];
        let channels = [0, 1].map(|i| {
            SensorChannel::new(gains[i], phases[i]).expect("gain model validated as positive")
        });
        TrialDraw {
            index,
            source_phase,
            channels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialDraw {
    pub index: u64,
    pub source_phase: f64,
    pub channels: [SensorChannel; 2],
}

/// Quantizers for the in-phase and quadrature rails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RailQuantizers {
    pub inphase: QuantizerSpec,
    pub quadrature: QuantizerSpec,
}

impl RailQuantizers {
    pub fn shared(spec: QuantizerSpec) -> Self {
        Self {
            inphase: spec,
            quadrature: spec,
        }
    }

    pub fn bits(&self) -> Option<u32> {
        self.inphase.bits()
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub source: SourceSignal,
    pub sampling: SamplingConfig,
    pub quantizers: RailQuantizers,
    pub design: FirstOrderDesign,
}

impl Scenario {
    pub fn new(
        source: SourceSignal,
        sampling: SamplingConfig,
        quantizers: RailQuantizers,
        design: FirstOrderDesign,
    ) -> Result<Self, MetricsError> {
        let (d, s) = (design.angular_frequency(), source.angular_frequency());
        if (d - s).abs() > 1e-12 * s {
            return Err(MetricsError::FrequencyMismatch { design: d, signal: s });
        }
        sampling.check_source(&source)?;
        Ok(Self {
            source,
            sampling,
            quantizers,
            design,
        })
    }

    /// Runs one trial through the explicit sequence path.
    pub fn simulate_trial(
        &self,
        carrier: &Carrier,
        draw: &TrialDraw,
        arrival_deg: f64,
    ) -> Result<TrialOutput, MetricsError> {
        let source = self.source.with_phase(draw.source_phase);
        let arrival = arrival_deg.to_radians();
        let delays = [0.0, intersensor_delay(self.design.geometry(), arrival)];
        let len = carrier.len();
        let mut exact = Vec::with_capacity(2);
        let mut quantized = Vec::with_capacity(2);
        let mut saturated = 0;
        for (channel, delay) in draw.channels.iter().zip(delays) {
            let x = crate::signal::synth_inphase(carrier, &source, channel, delay, 0..len)?;
            let y = crate::signal::synth_quadrature(carrier, &source, channel, delay, 0..len)?;
            let qx = self.quantizers.inphase.quantize_seq(&x);
            let qy = self.quantizers.quadrature.quantize_seq(&y);
            saturated += qx.saturated + qy.saturated;
            quantized.push(SensorFrame::new(qx.samples, qy.samples)?);
            exact.push(SensorFrame::new(x, y)?);
        }
        let weights = compensate(&self.design, &draw.channels)?;
        let output = beamform_quantized(&quantized, &weights)?;
        Ok(TrialOutput {
            output,
            exact,
            quantized,
            weights,
            saturated,
        })
    }

    pub fn carrier(&self) -> Carrier {
        Carrier::new(self.source.angular_frequency(), &self.sampling)
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub output: BeamformedSequence,
    pub exact: Vec<SensorFrame>,
    pub quantized: Vec<SensorFrame>,
    pub weights: [CompensatedWeight; 2],
    pub saturated: usize,
}

impl TrialOutput {
    pub fn tag(mut self, arrival_deg: f64, quantizer: QuantizerSpec, plan: &MonteCarloPlan, draw: &TrialDraw) -> Self {
        self.output = self.output.with_meta(TrialMeta {
            arrival_deg,
            quantizer,
            master_seed: plan.master_seed,
            trial: draw.index,
        });
        self
    }
}

/// Evaluation angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    angles_deg: Vec<f64>,
}

impl AngleGrid {
    pub fn new(mut angles_deg: Vec<f64>) -> Self {
        angles_deg.sort_by(f64::total_cmp);
        angles_deg.dedup_by(|a, b| (*a - *b).abs() < ANGLE_EPS_DEG);
        Self { angles_deg }
    }

    fn stepped(step_deg: f64, end_deg: f64, inclusive: bool) -> Self {
        let count = (end_deg / step_deg).round() as usize;
        let last = if inclusive { count } else { count.saturating_sub(1) };
        Self::new((0..=last).map(|k| k as f64 * step_deg).collect())
    }

    /// `[0°, 360°)` at `step_deg`.
    pub fn full_circle(step_deg: f64) -> Self {
        Self::stepped(step_deg, 360.0, false)
    }

    /// `[0°, 180°]` at `step_deg`.
    pub fn half_circle(step_deg: f64) -> Self {
        Self::stepped(step_deg, 180.0, true)
    }

    /// Look direction, both endfire directions, the analytic response peak
    /// and `null_deg`: enough to locate the null depth and the maximum of a
    /// two-sensor response.
    pub fn null_probe(design: &FirstOrderDesign, null_deg: f64) -> Self {
        let dense = Self::half_circle(0.25);
        let peak = dense
            .angles_deg
            .iter()
            .copied()
            .max_by(|a, b| {
                let ra = design.ideal_response(a.to_radians()).norm();
                let rb = design.ideal_response(b.to_radians()).norm();
                ra.total_cmp(&rb)
            })
            .unwrap_or(0.0);
        Self::new(vec![0.0, 180.0, peak, null_deg])
    }

    pub fn with_angle(mut self, angle_deg: f64) -> Self {
        self.angles_deg.push(angle_deg);
        Self::new(self.angles_deg)
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn len(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles_deg.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub label: String,
    pub bits: Option<u32>,
    pub frequency_hz: f64,
    pub spacing_m: f64,
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeampatternResult {
    pub angles_deg: Vec<f64>,
    /// Mean-square output power per angle (linear).
    pub power: Vec<f64>,
    /// Monte Carlo standard error of `power`.
    pub std_error: Vec<f64>,
    pub meta: Option<ResultMeta>,
}

impl BeampatternResult {
    /// Result from precomputed powers; standard errors are zero.
    pub fn from_power(angles_deg: Vec<f64>, power: Vec<f64>) -> Self {
        let std_error = vec![0.0; power.len()];
        Self {
            angles_deg,
            power,
            std_error,
            meta: None,
        }
    }

    pub fn index_of(&self, angle_deg: f64) -> Option<usize> {
        let target = angle_deg.rem_euclid(360.0);
        self.angles_deg.iter().position(|a| {
            let d = (a.rem_euclid(360.0) - target).abs();
            d < ANGLE_EPS_DEG || (360.0 - d) < ANGLE_EPS_DEG
        })
    }

    pub fn power_at(&self, angle_deg: f64) -> Result<f64, MetricsError> {
        if self.power.is_empty() {
            return Err(MetricsError::EmptyResult);
        }
        self.index_of(angle_deg)
            .map(|i| self.power[i])
            .ok_or(MetricsError::AngleNotOnGrid(angle_deg))
    }

    /// Grid maximum `(angle, power)`.
    pub fn peak(&self) -> Result<(f64, f64), MetricsError> {
        self.angles_deg
            .iter()
            .zip(&self.power)
            .fold(None, |best: Option<(f64, f64)>, (&a, &p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((a, p)),
            })
            .ok_or(MetricsError::EmptyResult)
    }

    /// Power in dB relative to the grid maximum.
    pub fn normalized_db(&self) -> Result<Vec<f64>, MetricsError> {
        let (_, max) = self.peak()?;
        Ok(self.power.iter().map(|p| 10.0 * (p / max).log10()).collect())
    }
}

/// One trial's powers at every grid angle, using the fast path.
///
/// Sensor 1 is the phase reference, so its weighted contribution is computed
/// once per trial and reused for every arrival angle. Samples are identical
/// to [`Scenario::simulate_trial`].
fn trial_powers(scenario: &Scenario, carrier: &Carrier, draw: &TrialDraw, angles_rad: &[f64], scratch: &mut Vec<f64>) -> Vec<f64> {
    let q_in = Quantizer::new(&scenario.quantizers.inphase);
    let q_quad = Quantizer::new(&scenario.quantizers.quadrature);
    let weights = scenario.design.weights();
    let h: [CompensatedWeight; 2] = [
        compensated_weight(weights[0], &draw.channels[0]),
        compensated_weight(weights[1], &draw.channels[1]),
    ];
    let amplitude = scenario.source.amplitude();
    let (cos, sin) = (carrier.cos(), carrier.sin());

    let ch = &draw.channels[0];
    let rot = Rotation::new(
        ch.gain() * amplitude,
        carrier.phase_offset(0.0, draw.source_phase, ch.phase()),
    );
    scratch.clear();
    scratch.extend(cos.iter().zip(sin).map(|(&c, &s)| {
        0.0 + h[0].project(q_in.apply(rot.inphase(c, s)), q_quad.apply(rot.quadrature(c, s)))
    }));

    let ch = &draw.channels[1];
    let avx2 = has_avx2();
    angles_rad
        .iter()
        .map(|&theta| {
            let delay = intersensor_delay(scenario.design.geometry(), theta);
            let rot = Rotation::new(
                ch.gain() * amplitude,
                carrier.phase_offset(delay, draw.source_phase, ch.phase()),
            );
            let kernel = AngleKernel {
                base: scratch,
                cos,
                sin,
                rot,
                weight: h[1],
                q_in,
                q_quad,
            };
            kernel.mean_power(avx2)
        })
        .collect()
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    std::is_x86_feature_detected!("avx2")
}

#[cfg(not(target_arch = "x86_64"))]
fn has_avx2() -> bool {
    false
}

/// Mean output power at one angle given sensor 1's precomputed contribution.
struct AngleKernel<'a> {
    base: &'a [f64],
    cos: &'a [f64],
    sin: &'a [f64],
    rot: Rotation,
    weight: CompensatedWeight,
    q_in: Quantizer,
    q_quad: Quantizer,
}

impl AngleKernel<'_> {
    fn mean_power(&self, avx2: bool) -> f64 {
        #[cfg(target_arch = "x86_64")]
        if avx2 && !self.q_in.is_bypass() && !self.q_quad.is_bypass() {
            // SAFETY: the caller detected AVX2 support at runtime.
            return unsafe { avx2::mean_power(self) };
        }
        let _ = avx2;
        self.mean_power_generic()
    }

    #[inline(always)]
    fn mean_power_generic(&self) -> f64 {
        let (q_in, q_quad) = (self.q_in, self.q_quad);
        if q_in.is_bypass() || q_quad.is_bypass() {
            self.accumulate(|x| q_in.apply(x), |y| q_quad.apply(y))
        } else {
            self.accumulate(|x| q_in.apply_levels(x), |y| q_quad.apply_levels(y))
        }
    }

    #[inline(always)]
    fn accumulate(&self, quant_in: impl Fn(f64) -> f64, quant_quad: impl Fn(f64) -> f64) -> f64 {
        let (rot, h) = (self.rot, self.weight);
        let sample = |base: f64, c: f64, s: f64| {
            base + h.project(quant_in(rot.inphase(c, s)), quant_quad(rot.quadrature(c, s)))
        };
        let len = self.base.len();
        let mut acc = [0.0f64; 4];
        let chunks = self
            .base
            .chunks_exact(4)
            .zip(self.cos.chunks_exact(4))
            .zip(self.sin.chunks_exact(4));
        for ((base, c), s) in chunks {
            for j in 0..4 {
                let b = sample(base[j], c[j], s[j]);
                acc[j] += b * b;
            }
        }
        let mut rest = 0.0;
        for n in len - len % 4..len {
            let b = sample(self.base[n], self.cos[n], self.sin[n]);
            rest += b * b;
        }
        ((acc[0] + acc[1]) + (acc[2] + acc[3]) + rest) / len as f64
    }
}

/// Monte Carlo estimate of `BP(θ) = E[(1/P)·Σ_n b[n]²]` over `grid`.
///
/// Trials run in parallel blocks; per-trial powers are summed in trial order
/// so the result does not depend on the number of worker threads.
pub fn estimate_beampattern(
    scenario: &Scenario,
    plan: &MonteCarloPlan,
    grid: &AngleGrid,
) -> Result<BeampatternResult, MetricsError> {
    plan.validate()?;
    let carrier = scenario.carrier();
    let angles_rad: Vec<f64> = grid.angles_deg().iter().map(|a| a.to_radians()).collect();
    let mut sum = vec![0.0; grid.len()];
    let mut sum_sq = vec![0.0; grid.len()];
    let mut start = 0;
    while start < plan.trials {
        let end = (start + TRIAL_BLOCK).min(plan.trials);
        let block: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map_init(Vec::new, |scratch, t| {
                let draw = plan.draw(t as u64);
                trial_powers(scenario, &carrier, &draw, &angles_rad, scratch)
            })
            .collect();
        for powers in &block {
            for (k, p) in powers.iter().enumerate() {
                sum[k] += p;
                sum_sq[k] += p * p;
            }
        }
        start = end;
    }
    let n = plan.trials as f64;
    let power: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_error = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, sq)| {
            if plan.trials < 2 {
                return 0.0;
            }
            let var = ((sq - s * s / n) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(BeampatternResult {
        angles_deg: grid.angles_deg().to_vec(),
        power,
        std_error,
        meta: Some(ResultMeta {
            label: String::new(),
            bits: scenario.quantizers.bits(),
            frequency_hz: scenario.source.frequency_hz(),
            spacing_m: scenario.design.geometry().spacing(),
            trials: plan.trials,
            master_seed: plan.master_seed,
        }),
    })
}

fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// `10·log10(BP(θ_null)/max BP)` with the maximum taken over the grid.
pub fn sdn(result: &BeampatternResult, null_deg: f64) -> Result<f64, MetricsError> {
    let (_, max) = result.peak()?;
    Ok(to_db(result.power_at(null_deg)? / max))
}

/// `10·log10(BP(θ_null)/BP(0°))`, normalised to the look direction.
pub fn sdn_look(result: &BeampatternResult, null_deg: f64) -> Result<f64, MetricsError> {
    Ok(to_db(result.power_at(null_deg)? / result.power_at(0.0)?))
}

/// Error-floor power `Σ_i [Re(H_i)²·Δ_in² + Im(H_i)²·Δ_quad²]/12` at the output.
pub fn error_floor(
    design: &FirstOrderDesign,
    channels: &[SensorChannel],
    quantizers: &RailQuantizers,
) -> Result<f64, MetricsError> {
    let h = compensate(design, channels)?;
    let var_in = quantizers.inphase.error_variance();
    let var_quad = quantizers.quadrature.error_variance();
    Ok(h.iter().map(|w| w.0.re * w.0.re * var_in + w.0.im * w.0.im * var_quad).sum())
}

/// Analytic SDN: error floor against the mainlobe power `B²·max|A(θ)|²/2`,
/// the maximum taken over `angles_deg`. With equal rail step sizes the floor
/// reduces to `Σ_i (W_i/G_i)²·Δ²/12`, independent of the channel phases.
pub fn predict_sdn(
    design: &FirstOrderDesign,
    channels: &[SensorChannel],
    quantizers: &RailQuantizers,
    amplitude: f64,
    angles_deg: &[f64],
) -> Result<f64, MetricsError> {
    if angles_deg.is_empty() {
        return Err(MetricsError::EmptyResult);
    }
    let floor = error_floor(design, channels, quantizers)?;
    let peak = design.peak_response(angles_deg);
    Ok(to_db(floor / (amplitude * amplitude * peak * peak / 2.0)))
}

/// Rows of `(θ rad, BP)` on `[0°, 180°]`, checked for coverage and spacing.
fn integration_rows(result: &BeampatternResult) -> Result<Vec<(f64, f64)>, MetricsError> {
    if result.power.is_empty() {
        return Err(MetricsError::EmptyResult);
    }
    let mut rows: Vec<(f64, f64)> = result
        .angles_deg
        .iter()
        .zip(&result.power)
        .filter(|(a, _)| (-ANGLE_EPS_DEG..=180.0 + ANGLE_EPS_DEG).contains(*a))
        .map(|(&a, &p)| (a, p))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let covers = |target: f64| rows.iter().any(|(a, _)| (a - target).abs() < ANGLE_EPS_DEG);
    if !covers(0.0) || !covers(180.0) {
        return Err(MetricsError::GridCoverage("[0°, 180°]"));
    }
    let step = rows.windows(2).map(|w| w[1].0 - w[0].0).fold(0.0, f64::max);
    if step > MAX_INTEGRATION_STEP_DEG + ANGLE_EPS_DEG {
        return Err(MetricsError::GridTooCoarse { step_deg: step });
    }
    Ok(rows.into_iter().map(|(a, p)| (a.to_radians(), p)).collect())
}

/// Composite trapezoid of `BP(θ)·sin θ` over `rows`.
fn weighted_integral(rows: &[(f64, f64)]) -> f64 {
    rows.windows(2)
        .map(|w| {
            let (t0, p0) = w[0];
            let (t1, p1) = w[1];
            0.5 * (t1 - t0) * (p0 * t0.sin() + p1 * t1.sin())
        })
        .sum()
}

/// `DF = BP(0°) / [½·∫₀^π BP(θ)·sin θ dθ]` in dB.
pub fn directivity_factor(result: &BeampatternResult) -> Result<f64, MetricsError> {
    let rows = integration_rows(result)?;
    let look = rows[0].1;
    Ok(to_db(look / (0.5 * weighted_integral(&rows))))
}

/// Front (0°–90°) to back (90°–180°) ratio of `∫ BP(θ)·sin θ dθ` in dB.
pub fn front_to_back(result: &BeampatternResult) -> Result<f64, MetricsError> {
    let rows = integration_rows(result)?;
    let split = rows
        .iter()
        .position(|(t, _)| (t.to_degrees() - 90.0).abs() < ANGLE_EPS_DEG)
        .ok_or(MetricsError::GridCoverage("90°"))?;
    let front = weighted_integral(&rows[..=split]);
    let back = weighted_integral(&rows[split..]);
    Ok(to_db(front / back))
}

/// Hand-vectorized copy of [`AngleKernel::accumulate`]. Lane `j` carries
/// accumulator `acc[j]` and every operation matches the scalar code in kind
/// and order, so results are bit-identical.
#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    use super::AngleKernel;
    use crate::quantizer::{Quantizer, ROUNDING_MAGIC};

    #[target_feature(enable = "avx2")]
    unsafe fn quantize(x: __m256d, q: &Quantizer) -> __m256d {
        let (inv_step, min_code, max_code, step) = q.levels();
        let magic = _mm256_set1_pd(ROUNDING_MAGIC);
        let half = _mm256_set1_pd(0.5);
        let abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(i64::MAX));
        let sign_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(i64::MIN));

        let v = _mm256_mul_pd(x, _mm256_set1_pd(inv_step));
        let nearest_even = _mm256_sub_pd(_mm256_add_pd(v, magic), magic);
        let frac = _mm256_and_pd(_mm256_sub_pd(v, nearest_even), abs_mask);
        let tie = _mm256_cmp_pd::<_CMP_EQ_OQ>(frac, half);
        let away = _mm256_add_pd(v, _mm256_or_pd(_mm256_and_pd(v, sign_mask), half));
        let k = _mm256_blendv_pd(nearest_even, away, tie);
        // max(lo, k) is `k < lo ? lo : k` and min(hi, k) is `k > hi ? hi : k`.
        let k = _mm256_max_pd(_mm256_set1_pd(min_code), k);
        let k = _mm256_min_pd(_mm256_set1_pd(max_code), k);
        _mm256_mul_pd(k, _mm256_set1_pd(step))
    }

    /// # Safety
    /// The CPU must support AVX2 and neither quantizer may be in bypass mode.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn mean_power(k: &AngleKernel<'_>) -> f64 {
        let len = k.base.len();
        debug_assert!(k.cos.len() >= len && k.sin.len() >= len);
        let amp = _mm256_set1_pd(k.rot.amplitude);
        let (rc, rs) = (_mm256_set1_pd(k.rot.cos), _mm256_set1_pd(k.rot.sin));
        let (re, im) = (_mm256_set1_pd(k.weight.0.re), _mm256_set1_pd(k.weight.0.im));
        let mut acc = _mm256_setzero_pd();
        for i in (0..len - len % 4).step_by(4) {
            let b = _mm256_loadu_pd(k.base.as_ptr().add(i));
            let c = _mm256_loadu_pd(k.cos.as_ptr().add(i));
            let s = _mm256_loadu_pd(k.sin.as_ptr().add(i));
            let x = _mm256_mul_pd(amp, _mm256_sub_pd(_mm256_mul_pd(c, rc), _mm256_mul_pd(s, rs)));
            let y = _mm256_mul_pd(amp, _mm256_add_pd(_mm256_mul_pd(s, rc), _mm256_mul_pd(c, rs)));
            let projected = _mm256_sub_pd(
                _mm256_mul_pd(re, quantize(x, &k.q_in)),
                _mm256_mul_pd(im, quantize(y, &k.q_quad)),
            );
            let out = _mm256_add_pd(b, projected);
            acc = _mm256_add_pd(acc, _mm256_mul_pd(out, out));
        }
        let mut lanes = [0.0f64; 4];
        _mm256_storeu_pd(lanes.as_mut_ptr(), acc);
        let mut rest = 0.0;
        for n in len - len % 4..len {
            let x = k.rot.inphase(k.cos[n], k.sin[n]);
            let y = k.rot.quadrature(k.cos[n], k.sin[n]);
            let out = k.base[n] + k.weight.project(k.q_in.apply_levels(x), k.q_quad.apply_levels(y));
            rest += out * out;
        }
        ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + rest) / len as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamformer::{design_first_order, PatternKind, PatternSpec};
    use crate::signal::ArrayGeometry;

    fn scenario(null_deg: f64, quantizer: QuantizerSpec, len: usize) -> Scenario {
        let source = SourceSignal::from_hz(1.0, 1999.0, 0.0).unwrap();
        let geometry = ArrayGeometry::relative_to_wavelength(0.04, 1999.0, 343.0).unwrap();
        let design = design_first_order(&geometry, source.angular_frequency(), null_deg, 0.0).unwrap();
        Scenario::new(
            source,
            SamplingConfig::new(44_100.0, len).unwrap(),
            RailQuantizers::shared(quantizer),
            design,
        )
        .unwrap()
    }

    #[test]
    fn draws_are_reproducible_and_in_range() {
        let plan = MonteCarloPlan::new(10, 7);
        assert_eq!(plan.draw(3), plan.draw(3));
        assert_ne!(plan.draw(3).source_phase, plan.draw(4).source_phase);
        for t in 0..100 {
            let d = plan.draw(t);
            assert!((0.0..TAU).contains(&d.source_phase));
            assert!(d.channels.iter().all(|c| c.gain() == 1.0 && (0.0..TAU).contains(&c.phase())));
        }
        let other = MonteCarloPlan::new(10, 8);
        assert_ne!(plan.draw(0).source_phase, other.draw(0).source_phase);
    }

    #[test]
    fn fast_path_matches_explicit_path() {
        let sc = scenario(120.0, QuantizerSpec::with_bits(10).unwrap(), 1000);
        let plan = MonteCarloPlan {
            gain_model: GainModel::Uniform { low: 0.7, high: 0.99 },
            ..MonteCarloPlan::new(3, 11)
        };
        let carrier = sc.carrier();
        let angles = [0.0, 37.5, 120.0, 233.0];
        let rad: Vec<f64> = angles.iter().map(|a: &f64| a.to_radians()).collect();
        for t in 0..3 {
            let draw = plan.draw(t);
            let fast = trial_powers(&sc, &carrier, &draw, &rad, &mut Vec::new());
            for (a, p) in angles.iter().zip(&fast) {
                let slow = sc.simulate_trial(&carrier, &draw, *a).unwrap().output.mean_power();
                assert!((p - slow).abs() <= 1e-12 * slow, "{a}: {p} vs {slow}");
            }
        }
    }

    #[test]
    fn vector_kernel_is_bit_identical() {
        let cases = [(3u32, 1.0), (8, 0.9), (16, 1.0), (12, 1.3)];
        for (bits, amplitude) in cases {
            let q = QuantizerSpec::with_bits(bits).unwrap().quantizer();
            let sampling = SamplingConfig::new(44_100.0, 1027).unwrap();
            let carrier = Carrier::new(TAU * 1999.0, &sampling);
            let base: Vec<f64> = (0..1027).map(|n| (0.31 * n as f64).sin() * 0.4).collect();
            for k in 0..50 {
                let kernel = AngleKernel {
                    base: &base,
                    cos: carrier.cos(),
                    sin: carrier.sin(),
                    rot: Rotation::new(amplitude, 0.137 * k as f64),
                    weight: CompensatedWeight(num_complex::Complex64::new(3.9, -0.4 + 0.02 * k as f64)),
                    q_in: q,
                    q_quad: q,
                };
                let generic = kernel.mean_power(false);
                assert_eq!(kernel.mean_power(has_avx2()).to_bits(), generic.to_bits(), "{bits} bits, case {k}");
            }
        }
    }

    #[test]
    fn vector_kernel_rounds_ties_away_from_zero() {
        // Carrier values land exactly on half steps of a 3-bit quantizer.
        let q = QuantizerSpec::with_bits(3).unwrap().quantizer();
        let cos: Vec<f64> = (0..64).map(|n| (n as f64 - 32.0) / 8.0 + 1.0 / 16.0).collect();
        let zeros = vec![0.0; 64];
        let kernel = AngleKernel {
            base: &zeros,
            cos: &cos,
            sin: &zeros,
            rot: Rotation::new(1.0, 0.0),
            weight: CompensatedWeight(num_complex::Complex64::new(1.0, 0.0)),
            q_in: q,
            q_quad: q,
        };
        let expected = cos.iter().map(|&c| q.apply(c).powi(2)).sum::<f64>() / 64.0;
        assert!((kernel.mean_power(has_avx2()) - expected).abs() < 1e-15);
        assert_eq!(kernel.mean_power(has_avx2()).to_bits(), kernel.mean_power(false).to_bits());
    }

    #[test]
    fn bypass_look_power_is_half() {
        let sc = scenario(90.0, QuantizerSpec::bypass(), 4096);
        let plan = MonteCarloPlan::new(20, 1);
        let res = estimate_beampattern(&sc, &plan, &AngleGrid::new(vec![0.0, 90.0])).unwrap();
        // A finite window leaves a phase-dependent residual of order 1/P.
        assert!((res.power_at(0.0).unwrap() - 0.5).abs() < 1e-3);
        assert!(sdn(&res, 90.0).unwrap() <= -200.0);
    }

    #[test]
    fn bypass_look_power_exact_over_whole_periods() {
        // 44.1 kHz / 2205 Hz = 20 samples per period, so P = 4000 spans whole cycles.
        let source = SourceSignal::from_hz(1.0, 2205.0, 0.0).unwrap();
        let geometry = ArrayGeometry::relative_to_wavelength(0.04, 2205.0, 343.0).unwrap();
        let design = design_first_order(&geometry, source.angular_frequency(), 90.0, 0.0).unwrap();
        let sc = Scenario::new(
            source,
            SamplingConfig::new(44_100.0, 4000).unwrap(),
            RailQuantizers::shared(QuantizerSpec::bypass()),
            design,
        )
        .unwrap();
        let res = estimate_beampattern(&sc, &MonteCarloPlan::new(5, 3), &AngleGrid::new(vec![0.0])).unwrap();
        assert!((res.power[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn estimator_is_deterministic() {
        let sc = scenario(135.0, QuantizerSpec::with_bits(8).unwrap(), 256);
        let plan = MonteCarloPlan::new(150, 99);
        let grid = AngleGrid::half_circle(15.0);
        let a = estimate_beampattern(&sc, &plan, &grid).unwrap();
        let b = estimate_beampattern(&sc, &plan, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frequency_mismatch_rejected() {
        let sc = scenario(90.0, QuantizerSpec::bypass(), 16);
        let other = SourceSignal::from_hz(1.0, 2000.0, 0.0).unwrap();
        assert!(matches!(
            Scenario::new(other, sc.sampling, sc.quantizers, sc.design),
            Err(MetricsError::FrequencyMismatch { .. })
        ));
        assert!(matches!(
            estimate_beampattern(&sc, &MonteCarloPlan::new(0, 1), &AngleGrid::new(vec![0.0])),
            Err(MetricsError::NoTrials)
        ));
    }

    #[test]
    fn grid_helpers() {
        assert_eq!(AngleGrid::full_circle(1.0).len(), 360);
        assert_eq!(AngleGrid::half_circle(0.25).len(), 721);
        let g = AngleGrid::half_circle(10.0).with_angle(135.0).with_angle(90.0);
        assert_eq!(g.len(), 20);
        let d = scenario(90.0, QuantizerSpec::bypass(), 16).design;
        assert_eq!(AngleGrid::null_probe(&d, 90.0).angles_deg(), &[0.0, 90.0, 180.0]);
    }

    #[test]
    fn lookup_wraps_angles() {
        let r = BeampatternResult::from_power(vec![0.0, 90.0, 270.0], vec![1.0, 2.0, 3.0]);
        assert_eq!(r.power_at(-90.0).unwrap(), 3.0);
        assert_eq!(r.power_at(360.0).unwrap(), 1.0);
        assert!(matches!(r.power_at(45.0), Err(MetricsError::AngleNotOnGrid(_))));
        let empty = BeampatternResult::from_power(vec![], vec![]);
        assert!(matches!(sdn(&empty, 0.0), Err(MetricsError::EmptyResult)));
    }

    fn analytic(pattern: impl Fn(f64) -> f64, step: f64) -> BeampatternResult {
        let grid = AngleGrid::half_circle(step);
        let power = grid.angles_deg().iter().map(|a| pattern(a.to_radians()).powi(2)).collect();
        BeampatternResult::from_power(grid.angles_deg().to_vec(), power)
    }

    #[test]
    fn isotropic_pattern() {
        let r = analytic(|_| 1.0, 0.25);
        assert!(directivity_factor(&r).unwrap().abs() < 1e-5);
        assert!(front_to_back(&r).unwrap().abs() < 1e-9);
    }

    #[test]
    fn closed_form_first_order_patterns() {
        // DF = 1/(a² + (1−a)²/3) for a + (1−a)·cos θ.
        for (a, df_db) in [(0.0, 10.0 * 3f64.log10()), (0.5, 10.0 * 3f64.log10()), (1.0 / 3.0, 10.0 * (27.0f64 / 7.0).log10())] {
            let r = analytic(|t| a + (1.0 - a) * t.cos(), 0.25);
            assert!((directivity_factor(&r).unwrap() - df_db).abs() < 1e-3, "{a}");
        }
        let r = analytic(|t| 0.5 + 0.5 * t.cos(), 0.25);
        assert!((front_to_back(&r).unwrap() - 10.0 * 7f64.log10()).abs() < 1e-3);
        let r = analytic(f64::cos, 1.0);
        assert!(front_to_back(&r).unwrap().abs() < 1e-9);
    }

    #[test]
    fn integration_grid_checks() {
        let r = analytic(f64::cos, 2.0);
        assert!(matches!(directivity_factor(&r), Err(MetricsError::GridTooCoarse { .. })));
        let partial = BeampatternResult::from_power(vec![0.0, 0.5, 1.0], vec![1.0; 3]);
        assert!(matches!(directivity_factor(&partial), Err(MetricsError::GridCoverage(_))));
        let odd = AngleGrid::new((0..=257).map(|k| k as f64 * 0.7).chain([180.0]).collect());
        let r = BeampatternResult::from_power(odd.angles_deg().to_vec(), vec![1.0; odd.len()]);
        assert!(matches!(front_to_back(&r), Err(MetricsError::GridCoverage("90°"))));
    }

    #[test]
    fn prediction_bit_law_and_table_value() {
        let sc = scenario(90.0, QuantizerSpec::with_bits(16).unwrap(), 16);
        let channels = [SensorChannel::ideal(); 2];
        let grid = AngleGrid::half_circle(1.0);
        let p16 = predict_sdn(&sc.design, &channels, &sc.quantizers, 1.0, grid.angles_deg()).unwrap();
        assert!((p16 - (-83.07)).abs() < 0.01, "{p16}");
        let p10 = predict_sdn(
            &sc.design,
            &channels,
            &RailQuantizers::shared(QuantizerSpec::with_bits(10).unwrap()),
            1.0,
            grid.angles_deg(),
        )
        .unwrap();
        assert!((p10 - (-46.9)).abs() < 0.05, "{p10}");
        for b in 1..24 {
            let at = |bits| {
                let q = RailQuantizers::shared(QuantizerSpec::with_bits(bits).unwrap());
                predict_sdn(&sc.design, &channels, &q, 1.0, grid.angles_deg()).unwrap()
            };
            assert!((at(b) - at(b + 1) - 10.0 * 4f64.log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn prediction_independent_of_channel_phase() {
        let sc = scenario(135.0, QuantizerSpec::with_bits(12).unwrap(), 16);
        let grid = AngleGrid::half_circle(1.0);
        let a = predict_sdn(&sc.design, &[SensorChannel::ideal(); 2], &sc.quantizers, 1.0, grid.angles_deg()).unwrap();
        let chans = [SensorChannel::new(1.0, 2.0).unwrap(), SensorChannel::new(1.0, 5.0).unwrap()];
        let b = predict_sdn(&sc.design, &chans, &sc.quantizers, 1.0, grid.angles_deg()).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn named_pattern_peak_is_look_direction() {
        let geometry = ArrayGeometry::relative_to_wavelength(0.04, 1999.0, 343.0).unwrap();
        for kind in PatternKind::NAMED {
            let spec = PatternSpec::named(kind).unwrap();
            let d = FirstOrderDesign::for_pattern(&geometry, TAU * 1999.0, &spec, 0.0).unwrap();
            let grid = AngleGrid::full_circle(0.5);
            let peak = d.peak_response(grid.angles_deg());
            assert!((peak - 1.0).abs() < 1e-12, "{kind}");
        }
    }
}
