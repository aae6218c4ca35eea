use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

/// A command result: a JSON document, and a flat table for CSV output.
pub trait Report: Serialize {
    fn write_csv(&self, w: &mut csv::Writer<Vec<u8>>) -> CliResult<()>;
}

pub fn write_rows<R: Serialize>(w: &mut csv::Writer<Vec<u8>>, rows: &[R]) -> CliResult<()> {
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Output(e.to_string()))?;
    }
    Ok(())
}

pub fn render<R: Report>(report: &R, format: Format) -> CliResult<Vec<u8>> {
    match format {
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(report)
                .map_err(|e| CliError::Output(e.to_string()))?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            report.write_csv(&mut w)?;
            w.into_inner().map_err(|e| CliError::Output(e.to_string()))
        }
    }
}

/// Writes `<out>/<name>.<ext>` when an output directory is given, standard
/// output otherwise.
pub fn emit<R: Report>(report: &R, name: &str, out: Option<&Path>, format: Format) -> CliResult<()> {
    let bytes = render(report, format)?;
    match out {
        Some(dir) => {
            let path = output_path(dir, name, format)?;
            fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            log::info!("wrote {}", path.display());
        }
        None => io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::io("<stdout>", e))?,
    }
    Ok(())
}

pub fn output_path(dir: &Path, name: &str, format: Format) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.join(format!("{name}.{}", format.extension())))
}

/// File-system safe version of a user id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
