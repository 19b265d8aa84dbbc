use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::args::{Format, ReportArgs};

/// Writes `doc` as pretty JSON, or `rows` as CSV, to the report path or stdout.
pub fn emit<D: Serialize, R: Serialize>(report: &ReportArgs, doc: &D, rows: &[R]) -> Result<()> {
    let bytes = match report.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(doc)?;
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            w.into_inner().context("flushing CSV")?
        }
    };
    write_or_print(report.report.as_deref(), &bytes)
}

fn write_or_print(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing report {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}
