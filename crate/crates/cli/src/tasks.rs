//! One function per scenario task. Each returns the verdict table, the
//! task-specific result and any CSV traces.

use fixret_core::contraction::{apfs_certify, default_schedule, resolvent, ResolventOptions};
use fixret_core::finite::{
    eventual_core, finite_pipeline, gamma_properties_check, isometry_check, semigroup_closure, Falsification,
    DEFAULT_MAX_ELEMENTS,
};
use fixret_core::geometry::SampleStrategy;
use fixret_core::mappings::{
    certify_commuting, certify_firmly_nonexpansive, certify_nonexpansive, certify_self_map, DEFAULT_A_GRID,
};
use fixret_core::retraction::{apfs_transfer_check, build_retraction, certify_model, probe_grid, RetractionOptions};
use fixret_core::tchebyshev::{chebyshev_center, fixed_point_in_center, invariance_check};
use fixret_core::{MapExpr, NormKind, NormSpec, Point, RetractionModel};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::report::{Status, Table, VerdictLine};
use crate::scenario::{parse_points_csv, Scenario, Task};

#[derive(Debug, Default)]
pub struct Outcome {
    pub verdicts: Vec<VerdictLine>,
    pub falsifications: Vec<Falsification>,
    pub result: Value,
    pub trace: Option<Table>,
    pub grid: Option<Table>,
}

impl Outcome {
    pub fn status(&self) -> Status {
        if !self.falsifications.is_empty() {
            Status::Falsification
        } else if self.verdicts.iter().all(VerdictLine::pass) {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

type Log<'a> = &'a dyn Fn(&str);

pub fn execute(sc: &Scenario, log: Log<'_>) -> Result<Outcome, CliError> {
    sc.validate()?;
    log(&format!("task {:?}", sc.task));
    match sc.task {
        Task::Certify => certify(sc),
        Task::Retract => retract(sc, log),
        Task::Resolvent => run_resolvent(sc, log),
        Task::Apfs => apfs(sc, log),
        Task::Center => center(sc, log),
        Task::Finite => finite(sc),
        Task::Pipeline => pipeline(sc),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn retraction_options(sc: &Scenario) -> RetractionOptions {
    let mut opts = sc.retraction.clone().unwrap_or_default();
    opts.probe_seed = sc.seed;
    opts
}

fn family_exprs(sc: &Scenario) -> Result<(Vec<String>, Vec<MapExpr>), CliError> {
    Ok(sc.family_maps()?.into_iter().unzip())
}

/// The retraction onto the family's common fixed set, or the identity for an empty family.
fn family_retraction(sc: &Scenario, log: Log<'_>) -> Result<RetractionModel, CliError> {
    let (body, space) = (sc.body()?, sc.space()?);
    let (names, exprs) = family_exprs(sc)?;
    if exprs.is_empty() {
        return Ok(RetractionModel::identity(body, space));
    }
    log(&format!("building retraction for family {names:?}"));
    Ok(build_retraction(&exprs, body, space, &retraction_options(sc))?)
}

fn certify(sc: &Scenario) -> Result<Outcome, CliError> {
    let (body, space) = (sc.body()?, sc.space()?);
    let tol = sc.tolerances.certify;
    let names: Vec<String> =
        if sc.family.is_empty() { sc.maps.keys().cloned().collect() } else { sc.family.clone() };
    let points = body.sample(SampleStrategy::ExtremeFirst, sc.samples, sc.seed)?;
    let mut out = Outcome::default();
    let mut per_map = serde_json::Map::new();
    for name in &names {
        let m = sc.map(name)?;
        let mut entry = serde_json::Map::new();
        let self_map = certify_self_map(m, body, &points, tol)?;
        out.verdicts.push(VerdictLine::from_certificate(format!("{name}: selfMap"), &self_map));
        entry.insert("selfMap".into(), to_value(&self_map));
        let nonexp = certify_nonexpansive(m, body, space, sc.samples, tol)?;
        out.verdicts.push(VerdictLine::from_certificate(format!("{name}: nonexpansive"), &nonexp));
        entry.insert("nonexpansive".into(), to_value(&nonexp));
        if sc.check_firm && space.kind == NormKind::Euclidean {
            let firm = certify_firmly_nonexpansive(m, body, sc.samples, &DEFAULT_A_GRID, tol)?;
            out.verdicts.push(VerdictLine::from_certificate(format!("{name}: firmlyNonexpansive"), &firm));
            entry.insert("firmlyNonexpansive".into(), to_value(&firm));
        }
        per_map.insert(name.clone(), Value::Object(entry));
    }
    let mut result = json!({ "maps": per_map });
    if names.len() >= 2 {
        let exprs: Vec<MapExpr> = names.iter().map(|n| sc.map(n).cloned()).collect::<Result<_, _>>()?;
        let c = certify_commuting(&exprs, body, space, sc.samples, tol)?;
        out.verdicts.push(VerdictLine::from_certificate("commuting", &c));
        result["commuting"] = to_value(&c);
    }
    out.result = result;
    Ok(out)
}

fn retract(sc: &Scenario, log: Log<'_>) -> Result<Outcome, CliError> {
    let space = sc.space()?;
    let (_, exprs) = family_exprs(sc)?;
    let model = family_retraction(sc, log)?;
    log("certifying retraction");
    let cert = certify_model(&model, &exprs, space, sc.samples, sc.tolerances.retract, sc.check_firm)?;
    let labels = ["range", "idempotence", "nonexpansive", "firmlyNonexpansive"];
    let mut out = Outcome::default();
    for (label, c) in labels.iter().zip(&cert.certificates) {
        out.verdicts.push(VerdictLine::from_certificate(*label, c));
    }
    let mut trace = Table::new(&["stage", "s", "max_delta"]);
    trace.rows = cert.stabilization.iter().map(|st| vec![st.stage as f64, st.s as f64, st.max_delta]).collect();
    out.trace = Some(trace);
    if let Some(g) = sc.grid {
        log(&format!("evaluating retraction on grid with resolution {}", g.resolution));
        let pts = probe_grid(model.body(), g.resolution)?;
        let d = space.dimension;
        let header: Vec<String> =
            (1..=d).map(|i| format!("x{i}")).chain((1..=d).map(|i| format!("r{i}"))).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut table = Table::new(&header);
        for p in &pts {
            let r = model.evaluate(p)?;
            table.rows.push(p.coords().iter().chain(r.coords()).copied().collect());
        }
        out.grid = Some(table);
    }
    out.result = json!({ "retraction": model.summary(), "certificate": cert });
    Ok(out)
}

fn target(sc: &Scenario) -> Result<&MapExpr, CliError> {
    sc.map(sc.target.as_deref().ok_or_else(|| CliError::missing("target"))?)
}

fn anchor(sc: &Scenario) -> Result<&Point, CliError> {
    sc.x.as_ref().ok_or_else(|| CliError::missing("x"))
}

fn run_resolvent(sc: &Scenario, log: Log<'_>) -> Result<Outcome, CliError> {
    let (body, space) = (sc.body()?, sc.space()?);
    let t = target(sc)?;
    let s = sc.s.ok_or_else(|| CliError::missing("s"))?;
    let r = family_retraction(sc, log)?;
    let tol = sc.tolerances.apfs;
    let rep = resolvent(t, &r, s, anchor(sc)?, body, ResolventOptions::new(tol, body, space))?;
    let mut out = Outcome::default();
    out.verdicts.push(VerdictLine::check("errorBound", rep.error_bound <= tol, tol));
    let mut trace = Table::new(&["iteration", "difference"]);
    trace.rows = rep.differences.iter().enumerate().map(|(k, d)| vec![(k + 1) as f64, *d]).collect();
    out.trace = Some(trace);
    out.result = json!({ "s": s, "solve": rep });
    Ok(out)
}

fn apfs(sc: &Scenario, log: Log<'_>) -> Result<Outcome, CliError> {
    let (body, space) = (sc.body()?, sc.space()?);
    let t = target(sc)?;
    let x = anchor(sc)?;
    let schedule = sc.schedule.clone().unwrap_or_else(default_schedule);
    let tol = sc.tolerances.apfs;
    let r = family_retraction(sc, log)?;
    log("computing resolvents along the schedule");
    let cert = apfs_certify(t, &r, x, body, space, &schedule, tol)?;
    let mut out = Outcome::default();
    out.verdicts.push(VerdictLine::check("residualBound", cert.pass, tol));
    let mut trace = Table::new(&["s", "residual", "bound"]);
    trace.rows = cert
        .s_values
        .iter()
        .zip(cert.residuals.iter().zip(&cert.bounds))
        .map(|(s, (res, b))| vec![*s as f64, *res, *b])
        .collect();
    out.trace = Some(trace);
    let mut result = json!({ "apfs": cert });
    let family = sc.family_maps()?;
    if !family.is_empty() {
        log("checking transfer to the family, R and T");
        let transfer = apfs_transfer_check(t, &family, &r, body, space, x, &schedule, tol)?;
        out.verdicts.push(VerdictLine::from_certificate("transfer", &transfer.certificate));
        result["transfer"] = to_value(&transfer);
    }
    out.result = result;
    Ok(out)
}

fn center_points(sc: &Scenario) -> Result<Vec<Point>, CliError> {
    match (&sc.points, &sc.points_csv) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(path)) => {
            let path = sc.resolve(path);
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            parse_points_csv(&text)
        }
        (None, None) => Err(CliError::missing("points")),
    }
}

fn center(sc: &Scenario, log: Log<'_>) -> Result<Outcome, CliError> {
    let points = center_points(sc)?;
    let first = points.first().ok_or_else(|| CliError::Parse("center needs at least one point".into()))?;
    let space = match &sc.space {
        Some(s) => *s,
        None => NormSpec::euclidean(first.dim()),
    };
    let tol = sc.tolerances.center;
    let res = chebyshev_center(&points, &space, tol)?;
    let mut out = Outcome::default();
    out.verdicts.push(VerdictLine::check("enclosure", res.enclosure <= res.radius + tol, tol));
    let mut result = json!({ "center": res });
    if sc.check_invariance {
        let family = sc.family_maps()?;
        let mut inv = serde_json::Map::new();
        for (name, m) in &family {
            let rep = invariance_check(m, &points, &space, tol)?;
            out.verdicts.push(VerdictLine::from_certificate(format!("{name}: centerInvariance"), &rep.certificate));
            inv.insert(name.clone(), to_value(&rep));
        }
        result["invariance"] = Value::Object(inv);
        if !family.is_empty() {
            log("locating a common fixed point in the center set");
            let exprs: Vec<MapExpr> = family.into_iter().map(|(_, m)| m).collect();
            let fp = fixed_point_in_center(&exprs, &points, &space, tol, &retraction_options(sc))?;
            out.verdicts.push(VerdictLine::from_certificate("fixedPointInCenter", &fp.certificate));
            result["fixedPoint"] = to_value(&fp);
        }
    }
    out.result = result;
    Ok(out)
}

fn finite(sc: &Scenario) -> Result<Outcome, CliError> {
    let sys = sc.finite.as_ref().ok_or_else(|| CliError::missing("finite"))?;
    let ops = sc.finite_ops.or_all();
    let max = sc.max_elements.unwrap_or(DEFAULT_MAX_ELEMENTS);
    let names = &sc.family;
    let mut out = Outcome::default();
    let mut result = serde_json::Map::new();
    if ops.core {
        let core = eventual_core(sys, names)?;
        out.falsifications.extend(core.falsification.clone());
        result.insert("core".into(), to_value(&core));
    }
    if ops.closure {
        let closure = semigroup_closure(sys, names, max, true)?;
        result.insert("closure".into(), to_value(&closure));
    }
    if ops.gamma {
        let g = gamma_properties_check(sys, names, max)?;
        out.verdicts.push(VerdictLine::from_certificate("gammaProperties", &g.certificate));
        out.falsifications.extend(g.falsifications.clone());
        result.insert("gamma".into(), to_value(&g));
    }
    if ops.isometry {
        let mut iso = serde_json::Map::new();
        for (name, _) in sys.select(names)? {
            let r = isometry_check(sys, &name, None)?;
            out.verdicts.push(VerdictLine::from_certificate(format!("{name}: isometry"), &r.certificate));
            out.falsifications.extend(r.falsification.clone());
            iso.insert(name, to_value(&r));
        }
        result.insert("isometry".into(), Value::Object(iso));
    }
    out.result = Value::Object(result);
    Ok(out)
}

fn pipeline(sc: &Scenario) -> Result<Outcome, CliError> {
    let sys = sc.finite.as_ref().ok_or_else(|| CliError::missing("finite"))?;
    let max = sc.max_elements.unwrap_or(DEFAULT_MAX_ELEMENTS);
    let rep = finite_pipeline(sys, &sc.family, max, sc.tolerances.center, &retraction_options(sc))?;
    let mut out = Outcome::default();
    out.verdicts.push(VerdictLine::check("somewhereCommuting", rep.stopped.is_none(), 0.0));
    for iso in &rep.isometries {
        out.verdicts.push(VerdictLine::from_certificate(format!("{}: isometry", iso.map), &iso.certificate));
    }
    if let Some(c) = &rep.center {
        out.verdicts.push(VerdictLine::from_certificate("fixedPointInCenter", &c.certificate));
    }
    out.falsifications = rep.falsifications.clone();
    out.result = to_value(&rep);
    Ok(out)
}
