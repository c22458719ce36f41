//! Report emission: records.csv (RFC-4180, 17-significant-digit numbers)
//! and summary.json.

use std::fs;
use std::path::{Path, PathBuf};

use crate::experiment::{Records, Summary};
use crate::CliError;

/// Render a float with 17 significant digits so the decimal string
/// round-trips to the identical bit pattern.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct ReportPaths {
    pub records: PathBuf,
    pub summary: PathBuf,
}

pub fn write_reports(
    out_dir: &Path,
    summary: &Summary,
    records: &Records,
) -> Result<ReportPaths, CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out_dir.display())))?;

    let records_path = out_dir.join("records.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(&records_path)
        .map_err(|e| CliError::runtime(format!("cannot write records.csv: {e}")))?;
    let io_err = |e: csv::Error| CliError::runtime(format!("records.csv: {e}"));
    match records {
        Records::Bounded(rows) => {
            w.write_record(["m", "mean", "stderr", "bound"]).map_err(io_err)?;
            for &(m, mean, stderr, bound) in rows {
                w.write_record([
                    m.to_string(),
                    fmt_f64(mean),
                    fmt_f64(stderr),
                    fmt_f64(bound),
                ])
                .map_err(io_err)?;
            }
        }
        Records::Crosscheck(rows) => {
            w.write_record(["m", "mean", "stderr", "oracle"]).map_err(io_err)?;
            for &(m, mean, stderr, oracle) in rows {
                w.write_record([
                    m.to_string(),
                    fmt_f64(mean),
                    fmt_f64(stderr),
                    fmt_f64(oracle),
                ])
                .map_err(io_err)?;
            }
        }
        Records::Table(rows) => {
            w.write_record(["s", "sbar", "m", "value"]).map_err(io_err)?;
            for &(s, sbar, m, value) in rows {
                w.write_record([fmt_f64(s), fmt_f64(sbar), m.to_string(), fmt_f64(value)])
                    .map_err(io_err)?;
            }
        }
        Records::Divergence(rows) => {
            w.write_record(["m", "witness", "control"]).map_err(io_err)?;
            for &(m, witness, control) in rows {
                w.write_record([m.to_string(), fmt_f64(witness), fmt_f64(control)])
                    .map_err(io_err)?;
            }
        }
    }
    w.flush()
        .map_err(|e| CliError::runtime(format!("records.csv: {e}")))?;

    let summary_path = out_dir.join("summary.json");
    let mut body = serde_json::to_vec_pretty(summary)
        .map_err(|e| CliError::runtime(format!("summary serialization: {e}")))?;
    body.push(b'\n');
    fs::write(&summary_path, body)
        .map_err(|e| CliError::runtime(format!("cannot write summary.json: {e}")))?;

    Ok(ReportPaths {
        records: records_path,
        summary: summary_path,
    })
}
