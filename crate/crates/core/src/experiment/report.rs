//! CSV serialization and run records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, ExperimentError};

/// Formats a number with at least nine significant digits.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".to_owned()
        } else if v > 0.0 {
            "inf".to_owned()
        } else {
            "-inf".to_owned()
        };
    }
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e9) {
        format!("{v:.9e}")
    } else {
        format!("{v:.12}")
    }
}

/// In-memory CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    header: &'static [&'static str],
    body: String,
}

impl CsvTable {
    pub fn new(header: &'static [&'static str]) -> Self {
        Self {
            header,
            body: String::new(),
        }
    }

    pub fn push_row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.header.len(), "row width must match header");
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    pub fn header(&self) -> &'static [&'static str] {
        self.header
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.body.len() + 64);
        let _ = writeln!(out, "{}", self.header.join(","));
        out.push_str(&self.body);
        out
    }
}

/// How a [`Check`] compares `measured` with `expected`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `|measured − expected| ≤ tolerance`.
    Within,
    /// `measured ≤ expected`.
    AtMost,
    /// `measured` is 1 for true and 0 for false.
    Flag,
}

/// An acceptance or reference comparison recorded in the run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub rule: Rule,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn within(name: impl Into<String>, measured: f64, expected: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            rule: Rule::Within,
            measured,
            expected,
            tolerance,
            pass: (measured - expected).abs() <= tolerance,
        }
    }

    /// Passes when `measured <= limit`.
    pub fn at_most(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            rule: Rule::AtMost,
            measured,
            expected: limit,
            tolerance: 0.0,
            pass: measured <= limit,
        }
    }

    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            rule: Rule::Flag,
            measured: f64::from(u8::from(pass)),
            expected: 1.0,
            tolerance: 0.0,
            pass,
        }
    }

    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let (name, measured, expected) = (&self.name, fmt_num(self.measured), fmt_num(self.expected));
        match self.rule {
            Rule::Within => format!(
                "[{verdict}] {name}: measured {measured} (expected {expected} ± {})",
                fmt_num(self.tolerance)
            ),
            Rule::AtMost => format!("[{verdict}] {name}: measured {measured} (limit {expected})"),
            Rule::Flag => format!("[{verdict}] {name}"),
        }
    }
}

/// Products of one subcommand before they are written to disk.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl RunOutput {
    pub fn merge(&mut self, other: RunOutput) {
        self.files.extend(other.files);
        self.checks.extend(other.checks);
        self.notes.extend(other.notes);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

/// Persisted description of a run: what was asked for and what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub wall_clock_s: f64,
    pub all_checks_passed: bool,
    pub notes: Vec<String>,
    /// SHA-256 of each output file.
    pub checksums: BTreeMap<String, String>,
    pub checks: Vec<Check>,
    pub config: ExperimentConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every output file plus `<subcommand>_summary.toml` under `dir`.
pub fn persist(
    dir: &Path,
    subcommand: &str,
    config: &ExperimentConfig,
    output: &RunOutput,
    wall_clock_s: f64,
) -> Result<(RunRecord, PathBuf), ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| ExperimentError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut checksums = BTreeMap::new();
    for (name, contents) in &output.files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(io(&path))?;
        checksums.insert(name.clone(), sha256_hex(contents.as_bytes()));
    }
    let record = RunRecord {
        subcommand: subcommand.to_owned(),
        version: crate::VERSION.to_owned(),
        seed: config.monte_carlo.seed,
        wall_clock_s,
        all_checks_passed: output.all_passed(),
        notes: output.notes.clone(),
        checksums,
        checks: output.checks.clone(),
        config: config.clone(),
    };
    let summary = dir.join(format!("{subcommand}_summary.toml"));
    let text = toml::to_string(&record)?;
    std::fs::write(&summary, text).map_err(io(&summary))?;
    Ok((record, summary))
}
