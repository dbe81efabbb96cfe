use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dmaq::experiment::{persist, Experiment, ExperimentConfig, ExperimentError, OneOrMany};
use dmaq::PatternKind;

/// Quantized differential microphone array experiments.
#[derive(Debug, Parser)]
#[command(name = "dmaq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Polar beampattern CSV per named pattern.
    Beampattern,
    /// Null depth of each named pattern, simulated and predicted.
    SdnTable,
    /// Directivity factor and front-to-back ratio against bit depth.
    DfFbr,
    /// Null depth across frequency and bit depth.
    FreqSweep,
    /// Null depth as the null is steered from 1° to 180°.
    NullSweep,
    /// Model invariants: decomposition identity, quantizer bounds, oracle agreement.
    Validate,
    /// Every experiment in turn.
    All,
}

/// Flags take precedence over the configuration file.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "DMAQ_OUTPUT_DIR")]
    out: Option<PathBuf>,
    /// Bit depth, or a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    bits: Option<Vec<u32>>,
    /// Bit depth of the quadrature rail when it differs from the in-phase rail.
    #[arg(long, global = true)]
    quadrature_bits: Option<u32>,
    /// Monte Carlo trials per angle.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Trials per angle for the DF/FBR integration grid.
    #[arg(long, global = true)]
    integration_trials: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Source frequency in Hz.
    #[arg(long, global = true)]
    frequency: Option<f64>,
    /// Samples per sequence.
    #[arg(long, global = true)]
    sequence_length: Option<usize>,
    /// Comma-separated named patterns.
    #[arg(long, global = true, value_delimiter = ',')]
    patterns: Option<Vec<PatternKind>>,
    /// Comma-separated null angles in degrees for the null sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    nulls: Option<Vec<f64>>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(bits) = &self.bits {
            cfg.quantizer.bits = Some(OneOrMany::Many(bits.clone()));
        }
        if let Some(b) = self.quadrature_bits {
            cfg.quantizer.quadrature_bits = Some(b);
        }
        if let Some(t) = self.trials {
            cfg.monte_carlo.trials = t;
        }
        if let Some(t) = self.integration_trials {
            cfg.monte_carlo.integration_trials = t;
        }
        if let Some(s) = self.seed {
            cfg.monte_carlo.seed = s;
        }
        if let Some(f) = self.frequency {
            cfg.signal.frequency_hz = f;
        }
        if let Some(p) = self.sequence_length {
            cfg.signal.sequence_length = p;
        }
        if let Some(p) = &self.patterns {
            cfg.design.patterns = Some(p.clone());
        }
        if let Some(n) = &self.nulls {
            cfg.design.null_angles_deg = Some(OneOrMany::Many(n.clone()));
        }
    }
}

fn load_config(overrides: &Overrides) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &overrides.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn experiments(command: &Command) -> Vec<Experiment> {
    match command {
        Command::Beampattern => vec![Experiment::Beampattern],
        Command::SdnTable => vec![Experiment::SdnTable],
        Command::DfFbr => vec![Experiment::DfFbr],
        Command::FreqSweep => vec![Experiment::FreqSweep],
        Command::NullSweep => vec![Experiment::NullSweep],
        Command::Validate => vec![Experiment::Validate],
        Command::All => Experiment::ALL.to_vec(),
    }
}

/// Runs and persists each experiment; returns whether every check passed.
fn execute(cfg: &ExperimentConfig, list: &[Experiment]) -> Result<bool, ExperimentError> {
    println!("seed: {}", cfg.monte_carlo.seed);
    println!("output: {}", cfg.output_dir.display());
    let mut all_passed = true;
    for exp in list {
        let start = Instant::now();
        let output = exp.run(cfg)?;
        let elapsed = start.elapsed().as_secs_f64();
        let (record, summary) = persist(&cfg.output_dir, exp.name(), cfg, &output, elapsed)?;
        println!("== {} ({elapsed:.1} s)", exp.name());
        for name in record.checksums.keys() {
            println!("wrote {}", cfg.output_dir.join(name).display());
        }
        println!("wrote {}", summary.display());
        for note in &record.notes {
            println!("note: {note}");
        }
        for check in &record.checks {
            println!("{}", check.line());
        }
        all_passed &= record.all_checks_passed;
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli.overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match execute(&cfg, &experiments(&cli.command)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more checks failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
