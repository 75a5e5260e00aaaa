use std::io;

use fixret_core::{PropertyCertificate, Verdict};
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::scenario::{Task, Tolerances, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Falsification,
    Error,
}

impl Status {
    /// 0 pass, 1 fail or falsification. Errors carry their own code.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail | Status::Falsification => 1,
            Status::Error => 2,
        }
    }
}

/// One line of the verdict table.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VerdictLine {
    pub name: String,
    pub verdict: Verdict,
    pub violation_count: usize,
    pub sample_count: usize,
    pub tolerance: f64,
}

impl VerdictLine {
    pub fn from_certificate(name: impl Into<String>, c: &PropertyCertificate) -> Self {
        Self {
            name: name.into(),
            verdict: c.verdict,
            violation_count: c.violation_count,
            sample_count: c.sample_count,
            tolerance: c.tolerance,
        }
    }

    /// A derived pass/fail check that has no certificate of its own.
    pub fn check(name: impl Into<String>, pass: bool, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            verdict: if pass { Verdict::PassSampled } else { Verdict::Fail },
            violation_count: usize::from(!pass),
            sample_count: 1,
            tolerance,
        }
    }

    pub fn pass(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Timing {
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub schema: u32,
    pub tool: String,
    pub version: String,
    pub task: Option<Task>,
    pub seed: u64,
    pub status: Status,
    pub tolerances: Tolerances,
    pub verdicts: Vec<VerdictLine>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub result: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    /// The only field allowed to differ between identical runs.
    pub timing: Timing,
}

impl Report {
    pub fn new(task: Option<Task>, seed: u64, tolerances: Tolerances) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            task,
            seed,
            status: Status::Pass,
            tolerances,
            verdicts: Vec::new(),
            result: serde_json::Value::Null,
            error: None,
            timing: Timing { elapsed_seconds: 0.0 },
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(self.status.exit_code(), |e| e.exit_code)
    }
}

/// Writes every float with 17 significant digits.
struct SeventeenDigits;

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Pretty-printed JSON with 17-significant-digit floats.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut compact = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut compact, SeventeenDigits);
    value.serialize(&mut ser)?;
    // Re-indent without re-parsing the floats.
    Ok(indent(&String::from_utf8(compact).expect("serde_json emits UTF-8")))
}

fn indent(compact: &str) -> String {
    let mut out = String::with_capacity(compact.len() * 2);
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let newline = |out: &mut String, depth: usize| {
        out.push('\n');
        out.push_str(&"  ".repeat(depth));
    };
    let chars: Vec<char> = compact.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            '{' | '[' => {
                out.push(c);
                let empty = matches!(chars.get(i + 1), Some('}') | Some(']'));
                depth += 1;
                if !empty {
                    newline(&mut out, depth);
                }
            }
            '}' | ']' => {
                depth -= 1;
                if !matches!(chars.get(i.wrapping_sub(1)), Some('{') | Some('[')) {
                    newline(&mut out, depth);
                }
                out.push(c);
            }
            ',' => {
                out.push(c);
                newline(&mut out, depth);
            }
            ':' => out.push_str(": "),
            _ => out.push(c),
        }
    }
    out.push('\n');
    out
}

/// A CSV table: header plus numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}
