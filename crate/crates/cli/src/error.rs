use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },

    /// Malformed scenario, point file or flag value.
    #[error("invalid scenario: {0}")]
    Parse(String),

    #[error(transparent)]
    Core(#[from] fixret_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn missing(field: &str) -> Self {
        CliError::Parse(format!("task requires field `{field}`"))
    }

    /// 2 for input, configuration and hypothesis errors; 3 for solver and
    /// stabilization failures.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "solver" | "stabilization" => 3,
            _ => 2,
        }
    }

    /// Machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Parse(_) => "input",
            CliError::Core(e) => core_kind(e),
        }
    }

    /// Structured detail for the report, where the error carries any.
    pub fn detail(&self) -> serde_json::Value {
        match self {
            CliError::Core(e) => core_detail(e),
            _ => serde_json::Value::Null,
        }
    }
}

fn core_kind(e: &fixret_core::Error) -> &'static str {
    use fixret_core::Error as E;
    match e {
        E::Input(_) => "input",
        E::Config(_) => "config",
        E::Solver { .. } => "solver",
        E::Stabilization { .. } => "stabilization",
        E::Hypothesis(_) => "hypothesis",
        E::Resource(_) => "resource",
        E::Stage { source, .. } => core_kind(source),
    }
}

fn core_detail(e: &fixret_core::Error) -> serde_json::Value {
    use fixret_core::Error as E;
    match e {
        E::Solver { trace, .. } => serde_json::json!({ "trace": trace }),
        E::Stabilization { stage, tolerance, best_delta, trace } => serde_json::json!({
            "stage": stage,
            "tolerance": tolerance,
            "bestDelta": best_delta,
            "trace": trace,
        }),
        E::Hypothesis(cert) => serde_json::json!({ "certificate": cert }),
        E::Stage { stage, source } => serde_json::json!({ "stage": stage, "cause": core_detail(source) }),
        _ => serde_json::Value::Null,
    }
}
