//! Scenario-driven front end for `fixret-core`.
//!
//! A scenario is a JSON file naming one task plus its inputs. [`run`] turns
//! it into a [`Report`] (JSON with 17-significant-digit floats) and optional
//! CSV traces. Exit codes: 0 all certificates pass, 1 some FAIL or
//! FALSIFICATION, 2 input/configuration/hypothesis error, 3 solver or
//! stabilization failure.

pub mod error;
pub mod report;
pub mod scenario;
pub mod tasks;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use error::CliError;
pub use report::{Report, Status, Table};
pub use scenario::{Scenario, Task, Tolerances};

use report::ErrorInfo;

/// Result of one run, ready to be written out.
#[derive(Debug)]
pub struct RunOutput {
    pub report: Report,
    pub trace: Option<Table>,
    pub grid: Option<Table>,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code()
    }

    pub fn json(&self) -> String {
        report::to_json(&self.report).expect("reports serialize")
    }
}

/// Runs the scenario's task. Errors are folded into the report.
pub fn run(sc: &Scenario, verbose: bool) -> RunOutput {
    let log = |msg: &str| {
        if verbose {
            eprintln!("[fixret] {msg}");
        }
    };
    let start = Instant::now();
    let mut report = Report::new(Some(sc.task), sc.seed, sc.tolerances.clone());
    let (trace, grid) = match tasks::execute(sc, &log) {
        Ok(out) => {
            report.status = out.status();
            report.verdicts = out.verdicts;
            report.result = out.result;
            if !out.falsifications.is_empty() {
                report.result["falsifications"] = serde_json::to_value(&out.falsifications).expect("serializes");
            }
            (out.trace, out.grid)
        }
        Err(e) => {
            attach_error(&mut report, &e);
            (None, None)
        }
    };
    report.timing.elapsed_seconds = start.elapsed().as_secs_f64();
    RunOutput { report, trace, grid }
}

fn attach_error(report: &mut Report, e: &CliError) {
    report.status = Status::Error;
    report.error = Some(ErrorInfo {
        kind: e.kind().to_string(),
        message: e.to_string(),
        exit_code: e.exit_code(),
        detail: e.detail(),
    });
}

/// A report for a failure that happened before any scenario was available.
pub fn error_output(e: &CliError) -> RunOutput {
    let mut report = Report::new(None, 0, Tolerances::default());
    attach_error(&mut report, e);
    RunOutput { report, trace: None, grid: None }
}

/// Where to write each artifact. `None` report path means stdout.
#[derive(Debug, Clone, Default)]
pub struct OutputTargets {
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub grid: Option<PathBuf>,
}

impl OutputTargets {
    /// Command-line paths win over scenario paths; the latter are relative to the scenario file.
    pub fn merge(cli: OutputTargets, sc: &Scenario) -> Self {
        let from_sc = |p: &Option<PathBuf>| p.as_deref().map(|p| sc.resolve(p));
        Self {
            report: cli.report.or_else(|| from_sc(&sc.output.report)),
            trace: cli.trace.or_else(|| from_sc(&sc.output.trace)),
            grid: cli.grid.or_else(|| from_sc(&sc.output.grid)),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes the report (to stdout when no path is set) and any requested traces.
pub fn write_outputs(out: &RunOutput, targets: &OutputTargets) -> Result<(), CliError> {
    match &targets.report {
        Some(p) => write(p, &out.json())?,
        None => print!("{}", out.json()),
    }
    if let (Some(p), Some(t)) = (&targets.trace, &out.trace) {
        write(p, &t.to_csv())?;
    }
    if let (Some(p), Some(g)) = (&targets.grid, &out.grid) {
        write(p, &g.to_csv())?;
    }
    Ok(())
}
