//! CSV and JSON emission. Every CSV starts with a `schema_version` column;
//! floats are written with 17 significant digits so they parse back exactly.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use erw_core::experiment::Verdict;

use crate::config::Format;
use crate::error::CliError;
use crate::svg::Plot;

pub const SCHEMA_VERSION: u32 = erw_core::experiment::SCHEMA_VERSION;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// A CSV table; `schema_version` is prepended on write.
#[derive(Debug, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(out);
        let version = SCHEMA_VERSION.to_string();
        w.write_record(std::iter::once("schema_version").chain(self.header.iter().copied()))?;
        for row in &self.rows {
            w.write_record(
                std::iter::once(version.as_str()).chain(row.iter().map(String::as_str)),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What a command produced.
pub struct Rendered {
    pub table: Table,
    pub json: String,
    pub plot: Option<Plot>,
    pub verdict: Option<Verdict>,
    /// Human-readable lines for stderr.
    pub summary: Vec<String>,
}

/// SVG path next to the output file, or `erw-<name>.svg` without one.
pub fn plot_path(output: Option<&Path>, name: &str) -> PathBuf {
    match output {
        Some(p) => p.with_extension("svg"),
        None => PathBuf::from(format!("erw-{name}.svg")),
    }
}

pub fn emit(
    rendered: &Rendered,
    format: Format,
    output: Option<&Path>,
    plot: bool,
    name: &str,
) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match output {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    match format {
        Format::Csv => rendered.table.write(sink)?,
        Format::Json => {
            let mut sink = sink;
            sink.write_all(rendered.json.as_bytes())?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
    }
    if plot {
        if let Some(p) = &rendered.plot {
            let path = plot_path(output, name);
            std::fs::write(&path, p.render())?;
            eprintln!("plot: {}", path.display());
        } else {
            eprintln!("plot: nothing to plot for {name}");
        }
    }
    Ok(())
}
