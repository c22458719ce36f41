//! Configuration-driven experiment runner: validates a JSON config, runs
//! the requested experiment and emits records.csv plus summary.json.

// Negated float comparisons in validation deliberately treat NaN as invalid.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod report;

use std::fmt;
use std::path::Path;

/// Errors split by exit-code class: configuration problems exit 2,
/// runtime problems exit 3. Failed checks are not errors; they turn the
/// summary's `pass` off and exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn config(msg: String) -> Self {
        Self::Config(msg)
    }

    pub fn runtime(msg: String) -> Self {
        Self::Runtime(msg)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

// Library-level failures after validation are runtime failures.
impl From<rkhs_online::Error> for CliError {
    fn from(e: rkhs_online::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

/// End-to-end: validate `raw` config text, run, write reports under
/// `out_dir`, and return whether every check passed.
pub fn run_from_str(raw: &str, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let resolved = config::validate_config(raw)?;
    let output = experiment::run_experiment(&resolved)?;
    let paths = report::write_reports(out_dir, &output.summary, &output.records)?;
    Ok(RunOutcome {
        pass: output.summary.pass,
        summary: output.summary,
        paths,
    })
}

pub struct RunOutcome {
    pub pass: bool,
    pub summary: experiment::Summary,
    pub paths: report::ReportPaths,
}
