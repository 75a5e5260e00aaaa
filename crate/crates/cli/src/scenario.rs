use std::path::{Path, PathBuf};

use fixret_core::finite::FiniteSystem;
use fixret_core::retraction::RetractionOptions;
use fixret_core::{ConvexBody, MapExpr, NormSpec, Point};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Certify,
    Retract,
    Resolvent,
    Apfs,
    Center,
    Finite,
    Pipeline,
}

/// Absolute tolerances per task family. `--tol` overrides all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct Tolerances {
    /// Map certificates (self-map, nonexpansive, firm, commuting).
    pub certify: f64,
    /// Retraction certificate (range, idempotence, nonexpansive).
    pub retract: f64,
    /// Resolvent solves and apfs residual checks.
    pub apfs: f64,
    /// Tchebyshev enclosure and fixed-point checks.
    pub center: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { certify: 1e-9, retract: 1e-6, apfs: 1e-9, center: 1e-9 }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self { certify: tol, retract: tol, apfs: tol, center: tol }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct OutputPaths {
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub grid: Option<PathBuf>,
}

/// Which finite-system operations to run. All of them when none is set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct FiniteOps {
    pub core: bool,
    pub gamma: bool,
    pub isometry: bool,
    pub closure: bool,
}

impl FiniteOps {
    pub fn or_all(self) -> Self {
        if self == Self::default() {
            Self { core: true, gamma: true, isometry: true, closure: true }
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridSpec {
    pub resolution: f64,
}

/// One task plus everything it needs. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<NormSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<ConvexBody>,
    #[serde(default)]
    pub maps: IndexMap<String, MapExpr>,
    /// Names from `maps` (or from the finite system) forming the family.
    #[serde(default)]
    pub family: Vec<String>,
    /// The map `T` of resolvent and apfs tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Point>>,
    /// CSV file with one point per row, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_csv: Option<PathBuf>,
    #[serde(default)]
    pub check_invariance: bool,
    #[serde(default)]
    pub check_firm: bool,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finite: Option<FiniteSystem>,
    #[serde(default)]
    pub finite_ops: FiniteOps,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_elements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retraction: Option<RetractionOptions>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputPaths,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_samples() -> usize {
    200
}

impl Scenario {
    /// An empty scenario for `task`, for front ends that build one from flags.
    pub fn empty(task: Task) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            task,
            space: None,
            body: None,
            maps: IndexMap::new(),
            family: Vec::new(),
            target: None,
            x: None,
            s: None,
            schedule: None,
            points: None,
            points_csv: None,
            check_invariance: false,
            check_firm: false,
            samples: default_samples(),
            grid: None,
            finite: None,
            finite_ops: FiniteOps::default(),
            max_elements: None,
            retraction: None,
            tolerances: Tolerances::default(),
            seed: 0,
            output: OutputPaths::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        if s.schema != SCHEMA_VERSION {
            return Err(CliError::Parse(format!("unsupported schema {}, expected {SCHEMA_VERSION}", s.schema)));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut s = Self::from_json(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn space(&self) -> Result<&NormSpec, CliError> {
        self.space.as_ref().ok_or_else(|| CliError::missing("space"))
    }

    pub fn body(&self) -> Result<&ConvexBody, CliError> {
        self.body.as_ref().ok_or_else(|| CliError::missing("body"))
    }

    pub fn map(&self, name: &str) -> Result<&MapExpr, CliError> {
        self.maps.get(name).ok_or_else(|| CliError::Parse(format!("unknown map {name}")))
    }

    /// The family as map expressions, in scenario order.
    pub fn family_maps(&self) -> Result<Vec<(String, MapExpr)>, CliError> {
        self.family.iter().map(|n| Ok((n.clone(), self.map(n)?.clone()))).collect()
    }

    /// Every name in `family` and `target` must resolve; task-required
    /// fields must be present.
    pub fn validate(&self) -> Result<(), CliError> {
        let finite_names = self.finite.as_ref().map(|f| f.maps());
        for n in self.family.iter().chain(self.target.iter()) {
            let known = self.maps.contains_key(n) || finite_names.is_some_and(|m| m.contains_key(n));
            if !known {
                return Err(CliError::Parse(format!("unknown map {n}")));
            }
        }
        for (name, m) in &self.maps {
            m.validate().map_err(|e| CliError::Parse(format!("map {name}: {e}")))?;
        }
        let need = |ok: bool, field: &str| if ok { Ok(()) } else { Err(CliError::missing(field)) };
        match self.task {
            Task::Certify | Task::Retract => {
                need(self.space.is_some(), "space")?;
                need(self.body.is_some(), "body")?;
            }
            Task::Resolvent => {
                need(self.space.is_some(), "space")?;
                need(self.body.is_some(), "body")?;
                need(self.target.is_some(), "target")?;
                need(self.x.is_some(), "x")?;
                need(self.s.is_some(), "s")?;
            }
            Task::Apfs => {
                need(self.space.is_some(), "space")?;
                need(self.body.is_some(), "body")?;
                need(self.target.is_some(), "target")?;
                need(self.x.is_some(), "x")?;
            }
            Task::Center => need(self.points.is_some() || self.points_csv.is_some(), "points")?,
            Task::Finite | Task::Pipeline => need(self.finite.is_some(), "finite")?,
        }
        Ok(())
    }
}

/// Parses one point per non-empty line; `#` starts a comment line.
pub fn parse_points_csv(text: &str) -> Result<Vec<Point>, CliError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, line)| {
            let coords = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Parse(format!("points row {}: {e}", i + 1)))?;
            Point::new(coords).map_err(|e| CliError::Parse(format!("points row {}: {e}", i + 1)))
        })
        .collect()
}

/// `"0,0;2,0"` style inline point lists.
pub fn parse_inline_points(text: &str) -> Result<Vec<Point>, CliError> {
    parse_points_csv(&text.replace(';', "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_parses() {
        let s = Scenario::from_json(r#"{"schema":1,"task":"center","points":[[0,0],[2,0]]}"#).unwrap();
        assert_eq!(s.task, Task::Center);
        assert_eq!(s.samples, 200);
        s.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_fields_and_schema() {
        assert!(Scenario::from_json(r#"{"schema":1,"task":"center","bogus":1}"#).is_err());
        assert!(Scenario::from_json(r#"{"schema":2,"task":"center"}"#).is_err());
    }

    #[test]
    fn unresolved_names_are_rejected() {
        let s = Scenario::from_json(
            r#"{"schema":1,"task":"retract","space":{"kind":"euclidean","dimension":2},
                "body":{"shape":"box","lo":[0,0],"hi":[1,1]},"family":["P"]}"#,
        )
        .unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn csv_points() {
        let p = parse_points_csv("# header\n0, 0\n\n1,2\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].coords(), &[1.0, 2.0]);
        assert!(parse_points_csv("1,x").is_err());
        assert_eq!(parse_inline_points("0,0;2,0").unwrap().len(), 2);
    }
}
