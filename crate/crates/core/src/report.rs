//! Experiment reports and their CSV files.
//!
//! Every file except the metrics file is a deterministic function of the
//! configuration. Files are written to a temporary name in the output
//! directory and renamed into place, so an interrupted run never leaves a
//! partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// A CSV table held as strings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_error)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// One line of the uniform summary schema.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub parameter: String,
    pub estimate: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub flags: String,
}

impl SummaryRow {
    pub fn new(name: &str, parameter: impl ToString, estimate: f64, stderr: f64, n_samples: usize) -> Self {
        Self { name: name.into(), parameter: parameter.to_string(), estimate, stderr, n_samples, flags: String::new() }
    }

    pub fn flag(mut self, flag: &str) -> Self {
        if !flag.is_empty() {
            if !self.flags.is_empty() {
                self.flags.push(';');
            }
            self.flags.push_str(flag);
        }
        self
    }
}

/// Outcome of one invariant or tolerance check. Checks that are not asserted
/// are reported but never fail the run.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub asserted: bool,
    pub detail: String,
}

impl Check {
    pub fn asserted(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, asserted: true, detail: detail.into() }
    }

    pub fn reported(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, asserted: false, detail: detail.into() }
    }
}

/// Task accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub planned: usize,
    pub completed: usize,
    pub truncated: usize,
    pub rejected: usize,
}

/// Timing of a run. Not reproducible across runs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub wall_seconds: f64,
    pub threads: usize,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub tasks: Table,
    pub summary: Vec<SummaryRow>,
    pub checks: Vec<Check>,
    pub counters: Counters,
    pub metrics: Metrics,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            tasks: Table::default(),
            summary: Vec::new(),
            checks: Vec::new(),
            counters: Counters::default(),
            metrics: Metrics::default(),
        }
    }

    /// Whether every asserted check passed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.asserted)
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.asserted && !c.passed).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn summary_row(&self, name: &str, parameter: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.name == name && r.parameter == parameter)
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&["experiment", "name", "parameter", "estimate", "stderr", "n_samples", "flags"]);
        let exp = self.config.experiment.name().to_string();
        for r in &self.summary {
            t.push(vec![
                exp.clone(),
                r.name.clone(),
                r.parameter.clone(),
                fmt_float(r.estimate),
                fmt_float(r.stderr),
                r.n_samples.to_string(),
                r.flags.clone(),
            ]);
        }
        let c = &self.counters;
        for (name, v) in [("planned", c.planned), ("completed", c.completed), ("truncated", c.truncated), ("rejected", c.rejected)] {
            t.push(vec![exp.clone(), "counter".into(), name.into(), fmt_float(v as f64), fmt_float(0.0), c.planned.to_string(), String::new()]);
        }
        t
    }

    pub fn checks_table(&self) -> Table {
        let mut t = Table::new(&["experiment", "check", "asserted", "passed", "detail"]);
        for c in &self.checks {
            t.push(vec![
                self.config.experiment.name().into(),
                c.name.clone(),
                c.asserted.to_string(),
                c.passed.to_string(),
                c.detail.clone(),
            ]);
        }
        t
    }

    pub fn metrics_table(&self) -> Table {
        let m = &self.metrics;
        let throughput = if m.wall_seconds > 0.0 { m.steps as f64 / m.wall_seconds } else { 0.0 };
        let mut t = Table::new(&["experiment", "wall_seconds", "threads", "steps", "steps_per_second"]);
        t.push(vec![
            self.config.experiment.name().into(),
            fmt_float(m.wall_seconds),
            m.threads.to_string(),
            m.steps.to_string(),
            fmt_float(throughput),
        ]);
        t
    }

    /// Writes the report files into `dir` and returns their paths, metrics
    /// file last.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let exp = self.config.experiment.name();
        let files = [
            (format!("{exp}_config.ini"), self.config.emit()),
            (format!("{exp}_tasks.csv"), self.tasks.to_csv()?),
            (format!("{exp}_summary.csv"), self.summary_table().to_csv()?),
            (format!("{exp}_checks.csv"), self.checks_table().to_csv()?),
            (format!("{exp}_metrics.csv"), self.metrics_table().to_csv()?),
        ];
        let mut paths = Vec::with_capacity(files.len());
        for (name, contents) in files {
            let path = dir.join(name);
            write_atomic(&path, contents.as_bytes())?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Replaces `path` with `bytes` through a temporary file in the same
/// directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error.to_string()))?;
    Ok(())
}
