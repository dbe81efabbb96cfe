use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beamformer::{decompose, PatternKind};
use crate::metrics::MonteCarloPlan;
use crate::quantizer::QuantizerSpec;

use super::config::ExperimentConfig;
use super::report::{Check, RunOutput};
use super::runs::{scenario, sdn_point};
use super::ExperimentError;

pub const DECOMPOSITION_TRIALS: u64 = 100;
pub const QUANTIZER_INPUTS: usize = 100_000;
pub const NOISE_SAMPLES: usize = 1_000_000;

/// Largest `max|b − (ideal + error)| / max|b|` over randomly drawn trials.
pub fn decomposition_residual(cfg: &ExperimentConfig, trials: u64) -> Result<f64, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.monte_carlo.seed ^ 0xdec0);
    let plan = MonteCarloPlan {
        trials: trials as usize,
        master_seed: cfg.monte_carlo.seed,
        gain_model: cfg.monte_carlo.gain_model,
    };
    let mut worst = 0.0f64;
    for t in 0..trials {
        let kind = PatternKind::NAMED[rng.gen_range(0..PatternKind::NAMED.len())];
        let bits = rng.gen_range(8..=16);
        let arrival = rng.gen_range(0.0..360.0);
        let sc = scenario(cfg, cfg.signal.frequency_hz, bits, kind.null_deg().expect("named"))?;
        let carrier = sc.carrier();
        let draw = plan.draw(t);
        let out = sc.simulate_trial(&carrier, &draw, arrival)?;
        let parts = decompose(&out.quantized, &out.exact, &out.weights)?;
        let scale = out.output.samples.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        let residual = out
            .output
            .samples
            .iter()
            .zip(parts.ideal.iter().zip(&parts.error))
            .fold(0.0f64, |m, (b, (i, e))| m.max((b - (i + e)).abs()));
        worst = worst.max(residual / scale);
    }
    Ok(worst)
}

/// Outcome of the quantizer property sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerProperties {
    pub inputs: usize,
    pub idempotence_failures: usize,
    pub monotonicity_failures: usize,
    pub bound_failures: usize,
}

/// Idempotence, monotonicity and the `|ε| ≤ Δ/2` bound on random inputs.
pub fn quantizer_properties(seed: u64, inputs: usize) -> QuantizerProperties {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut props = QuantizerProperties {
        inputs,
        idempotence_failures: 0,
        monotonicity_failures: 0,
        bound_failures: 0,
    };
    for _ in 0..inputs {
        let bits = rng.gen_range(1..=24);
        let fs = 10f64.powf(rng.gen_range(-2.0..2.0));
        let q = QuantizerSpec::new(bits, fs).expect("valid range");
        let d = q.step_size().expect("not bypass");
        let a = rng.gen_range(-1.5..1.5) * fs;
        let b = rng.gen_range(-1.5..1.5) * fs;
        let qa = q.quantize(a);
        props.idempotence_failures += usize::from(q.quantize(qa) != qa);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        props.monotonicity_failures += usize::from(q.quantize(lo) > q.quantize(hi));
        let inside = rng.gen_range(-1.0..1.0) * (fs - d / 2.0);
        props.bound_failures += usize::from((q.quantize(inside) - inside).abs() > d / 2.0);
    }
    props
}

/// Error statistics of quantizing random-phase sinusoids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStats {
    pub mean: f64,
    pub variance: f64,
    pub step: f64,
}

impl NoiseStats {
    pub fn model_variance(&self) -> f64 {
        self.step * self.step / 12.0
    }
}

/// Quantizes `samples` values of sinusoids with amplitude `amplitude·FS`,
/// random phase and incommensurate frequency.
pub fn quantization_noise(bits: u32, amplitude: f64, samples: usize, seed: u64) -> Result<NoiseStats, ExperimentError> {
    let q = QuantizerSpec::with_bits(bits)?;
    let quant = q.quantizer();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = 4096;
    let (mut sum, mut sum_sq, mut n) = (0.0, 0.0, 0usize);
    while n < samples {
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let omega = rng.gen_range(0.05..3.0);
        for k in 0..block.min(samples - n) {
            let x = amplitude * (omega * k as f64 + phase).cos();
            let e = quant.apply(x) - x;
            sum += e;
            sum_sq += e * e;
        }
        n += block.min(samples - n);
    }
    let mean = sum / n as f64;
    Ok(NoiseStats {
        mean,
        variance: sum_sq / n as f64 - mean * mean,
        step: q.step_size().expect("not bypass"),
    })
}

/// Runs the model-level checks: decomposition identity, quantizer
/// properties, the uniform noise model and simulation against prediction.
pub fn run_validate(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let mut out = RunOutput::default();

    let residual = decomposition_residual(cfg, DECOMPOSITION_TRIALS)?;
    out.checks
        .push(Check::at_most("decomposition identity (relative residual)", residual, 1e-12));

    let props = quantizer_properties(cfg.monte_carlo.seed, QUANTIZER_INPUTS);
    out.checks
        .push(Check::at_most("quantizer idempotence failures", props.idempotence_failures as f64, 0.0));
    out.checks
        .push(Check::at_most("quantizer monotonicity failures", props.monotonicity_failures as f64, 0.0));
    out.checks
        .push(Check::at_most("quantizer error bound failures", props.bound_failures as f64, 0.0));

    let noise = quantization_noise(12, 0.9, NOISE_SAMPLES, cfg.monte_carlo.seed)?;
    out.checks.push(Check::within(
        "12-bit error variance / model",
        noise.variance / noise.model_variance(),
        1.0,
        0.05,
    ));
    out.checks
        .push(Check::at_most("12-bit error mean / step", noise.mean.abs() / noise.step, 0.01));

    for bits in cfg.bits_or(&[16]) {
        for kind in cfg.patterns() {
            let p = sdn_point(cfg, cfg.signal.frequency_hz, bits, kind.null_deg().expect("named"))?;
            out.checks.push(Check::within(
                format!("{kind} {bits}-bit simulated vs predicted"),
                p.sdn_max_norm_db,
                p.predicted_db,
                1.0,
            ));
        }
    }
    Ok(out)
}
