//! Nonexpansive retractions onto common fixed-point sets of finite commuting
//! families.
//!
//! Stage `0` is the identity. Stage `k + 1` is the map
//! `x -> F_{s*} x`, the resolvent of `T_{k+1}` anchored at `x` over the stage-`k`
//! retraction, where `s*` is the first schedule entry at which the resolvent
//! has stopped moving on a probe set: `||F_{2s} p - F_s p|| <= stabilization_tol`
//! for every probe `p`. If no entry qualifies the build fails and reports the
//! probe trace instead of guessing a limit.
//!
//! Only finite families are executable. For an infinite commuting family the
//! retraction onto its common fixed set is a limit over finite subfamilies;
//! what is checked here is the finite shadow of that statement: the range of
//! the built retraction does not depend on the order of the family.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{CertificateBuilder, Property, PropertyCertificate, Witness};
use crate::contraction::{default_schedule, resolvent, resolvent_unchecked, validate_schedule, ResolventOptions};
use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, NormKind, NormSpec, Point, SampleStrategy, GEOMETRIC_TOL};
use crate::mappings::{
    certify_commuting, certify_nonexpansive, firmly_nonexpansive_on, nonexpansive_on, Composition, MapExpr, SelfMap,
    DEFAULT_A_GRID,
};

/// Quantization step of the evaluation cache key.
const CACHE_QUANTUM: f64 = 1e-12;
/// Coordinates beyond this magnitude bypass the cache (the key would overflow).
const CACHE_COORD_LIMIT: f64 = 1e6;
const CACHE_CAPACITY: usize = 1 << 18;
/// Largest probe grid accepted by [`fix_set_probe`].
pub const MAX_GRID_POINTS: usize = 10_000_000;

/// One row of the stabilization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StabilizationStep {
    pub stage: usize,
    pub s: u64,
    /// `max_p ||F_{2s} p - F_s p||` over the probe set.
    pub max_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RetractionOptions {
    pub schedule: Vec<u64>,
    pub stabilization_tol: f64,
    pub probe_count: usize,
    pub probe_seed: u64,
    /// Probe points for the nonexpansive and commuting hypothesis checks.
    pub hypothesis_samples: usize,
    pub hypothesis_tol: f64,
}

impl Default for RetractionOptions {
    fn default() -> Self {
        Self {
            schedule: default_schedule(),
            stabilization_tol: 1e-3,
            probe_count: 32,
            probe_seed: 0,
            hypothesis_samples: 64,
            hypothesis_tol: 1e-9,
        }
    }
}

impl RetractionOptions {
    fn validate(&self) -> Result<()> {
        validate_schedule(&self.schedule)?;
        if !(self.stabilization_tol > 0.0) {
            return Err(Error::input("stabilization tolerance must be positive"));
        }
        if self.probe_count == 0 {
            return Err(Error::input("probe count must be at least 1"));
        }
        Ok(())
    }

    /// Solver tolerance used for the resolvent at `s`.
    pub fn inner_tol(&self, s: u64) -> f64 {
        self.stabilization_tol / (4.0 * s as f64)
    }
}

/// How one stage of a [`RetractionModel`] is evaluated.
pub enum Construction {
    Identity,
    Resolvent {
        previous: RetractionModel,
        map: Arc<dyn SelfMap>,
        s_star: u64,
        solver_tol: f64,
        trace: Vec<StabilizationStep>,
    },
    /// A closed-form retraction supplied by a finder.
    Explicit { map: Arc<dyn SelfMap>, label: String },
}

impl fmt::Debug for Construction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Construction::Identity => f.write_str("Identity"),
            Construction::Resolvent { previous, s_star, solver_tol, .. } => f
                .debug_struct("Resolvent")
                .field("previous_stage", &previous.stage())
                .field("s_star", s_star)
                .field("solver_tol", solver_tol)
                .finish_non_exhaustive(),
            Construction::Explicit { label, .. } => f.debug_struct("Explicit").field("label", label).finish(),
        }
    }
}

#[derive(Default)]
struct MemoCache {
    map: RwLock<HashMap<Vec<i64>, Point>>,
}

impl MemoCache {
    fn key(x: &Point) -> Option<Vec<i64>> {
        x.coords()
            .iter()
            .map(|v| (v.abs() <= CACHE_COORD_LIMIT).then(|| (v / CACHE_QUANTUM).round() as i64))
            .collect()
    }

    fn get(&self, key: &[i64]) -> Option<Point> {
        self.map.read().ok()?.get(key).cloned()
    }

    fn insert(&self, key: Vec<i64>, value: Point) {
        if let Ok(mut m) = self.map.write() {
            if m.len() < CACHE_CAPACITY {
                // Concurrent writers compute the same value; first one wins.
                m.entry(key).or_insert(value);
            }
        }
    }

    fn len(&self) -> usize {
        self.map.read().map(|m| m.len()).unwrap_or(0)
    }
}

struct Inner {
    stage: usize,
    body: ConvexBody,
    norm: NormKind,
    diameter: f64,
    construction: Construction,
    cache: MemoCache,
}

/// A lazily evaluated retraction of a body. Cheap to clone; safe to evaluate
/// from several threads at once.
#[derive(Clone)]
pub struct RetractionModel(Arc<Inner>);

impl fmt::Debug for RetractionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RetractionModel")
            .field("stage", &self.0.stage)
            .field("construction", &self.0.construction)
            .finish()
    }
}

/// Serializable description of a built model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RetractionSummary {
    pub stage: usize,
    /// Chosen `s*` per resolvent stage, innermost first.
    pub s_star: Vec<u64>,
    pub solver_tol: Vec<f64>,
    pub range_bound: f64,
    pub stabilization: Vec<StabilizationStep>,
}

impl RetractionModel {
    fn from_parts(stage: usize, body: &ConvexBody, space: &NormSpec, construction: Construction) -> Self {
        RetractionModel(Arc::new(Inner {
            stage,
            body: body.clone(),
            norm: space.kind,
            diameter: body.diameter(space).value,
            construction,
            cache: MemoCache::default(),
        }))
    }

    pub fn identity(body: &ConvexBody, space: &NormSpec) -> Self {
        Self::from_parts(0, body, space, Construction::Identity)
    }

    /// Wraps a closed-form retraction. Nothing is verified here; see [`certify_retraction`].
    pub fn explicit(map: Arc<dyn SelfMap>, label: impl Into<String>, stage: usize, body: &ConvexBody, space: &NormSpec) -> Self {
        Self::from_parts(stage, body, space, Construction::Explicit { map, label: label.into() })
    }

    pub fn stage(&self) -> usize {
        self.0.stage
    }

    pub fn body(&self) -> &ConvexBody {
        &self.0.body
    }

    pub fn norm(&self) -> NormKind {
        self.0.norm
    }

    pub fn construction(&self) -> &Construction {
        &self.0.construction
    }

    /// Number of cached evaluations held by this stage.
    pub fn cache_len(&self) -> usize {
        self.0.cache.len()
    }

    /// Evaluates the retraction at a point of the body. Points outside the
    /// body are rejected, not projected.
    pub fn evaluate(&self, x: &Point) -> Result<Point> {
        x.check_dim(self.0.body.dim())?;
        if !self.0.body.contains(x, GEOMETRIC_TOL) {
            return Err(Error::input(format!("retraction evaluated at {x}, which is outside the body")));
        }
        self.eval_unchecked(x)
    }

    fn eval_unchecked(&self, x: &Point) -> Result<Point> {
        match &self.0.construction {
            Construction::Identity => Ok(x.clone()),
            Construction::Explicit { map, .. } => map.apply(x),
            Construction::Resolvent { previous, map, s_star, solver_tol, .. } => {
                let key = MemoCache::key(x);
                if let Some(k) = &key {
                    if let Some(v) = self.0.cache.get(k) {
                        return Ok(v);
                    }
                }
                let opts = ResolventOptions {
                    tol: *solver_tol,
                    norm: self.0.norm,
                    diameter: self.0.diameter,
                    max_iter: None,
                };
                let v = resolvent_unchecked(&**map, &Unchecked(previous), *s_star, x, opts)?.fixed_point;
                if let Some(k) = key {
                    self.0.cache.insert(k, v.clone());
                }
                Ok(v)
            }
        }
    }

    /// Chosen `s*` per resolvent stage, innermost first.
    pub fn s_stars(&self) -> Vec<u64> {
        self.stages().filter_map(|c| match c {
            Construction::Resolvent { s_star, .. } => Some(*s_star),
            _ => None,
        })
        .collect()
    }

    /// Stabilization records of all stages, innermost first.
    pub fn stabilization_trace(&self) -> Vec<StabilizationStep> {
        self.stages()
            .flat_map(|c| match c {
                Construction::Resolvent { trace, .. } => trace.clone(),
                _ => Vec::new(),
            })
            .collect()
    }

    fn stages(&self) -> impl Iterator<Item = &Construction> {
        let mut chain = Vec::new();
        let mut cur = Some(self);
        while let Some(m) = cur {
            chain.push(&m.0.construction);
            cur = match &m.0.construction {
                Construction::Resolvent { previous, .. } => Some(previous),
                _ => None,
            };
        }
        chain.into_iter().rev()
    }

    /// Conservative bound on `max_i ||T_i(R x) - R x||`: each resolvent stage
    /// contributes `2 diam / s*` and twice its solver tolerance.
    pub fn range_bound(&self) -> f64 {
        self.stages()
            .map(|c| match c {
                Construction::Resolvent { s_star, solver_tol, .. } => 2.0 * self.0.diameter / *s_star as f64 + 2.0 * solver_tol,
                _ => 0.0,
            })
            .sum()
    }

    pub fn summary(&self) -> RetractionSummary {
        let solver_tol = self
            .stages()
            .filter_map(|c| match c {
                Construction::Resolvent { solver_tol, .. } => Some(*solver_tol),
                _ => None,
            })
            .collect();
        RetractionSummary {
            stage: self.stage(),
            s_star: self.s_stars(),
            solver_tol,
            range_bound: self.range_bound(),
            stabilization: self.stabilization_trace(),
        }
    }
}

impl SelfMap for RetractionModel {
    fn apply(&self, x: &Point) -> Result<Point> {
        self.evaluate(x)
    }

    fn eval_error(&self) -> f64 {
        match &self.0.construction {
            Construction::Identity => 0.0,
            Construction::Explicit { map, .. } => map.eval_error(),
            Construction::Resolvent { solver_tol, map, .. } => solver_tol + map.eval_error(),
        }
    }
}

/// Evaluation without the membership test, used inside Banach iterations.
#[derive(Debug)]
struct Unchecked<'a>(&'a RetractionModel);

impl SelfMap for Unchecked<'_> {
    fn apply(&self, x: &Point) -> Result<Point> {
        self.0.eval_unchecked(x)
    }

    fn eval_error(&self) -> f64 {
        self.0.eval_error()
    }
}

/// Checks the hypotheses of [`build_retraction`]: each member is a
/// nonexpansive self-map and the members commute pairwise.
pub fn check_family_hypotheses(
    family: &[MapExpr],
    body: &ConvexBody,
    space: &NormSpec,
    opts: &RetractionOptions,
) -> Result<Vec<PropertyCertificate>> {
    let mut certs = Vec::new();
    for (i, t) in family.iter().enumerate() {
        let c = certify_nonexpansive(t, body, space, opts.hypothesis_samples, opts.hypothesis_tol)?;
        if !c.is_pass() {
            let note = format!("family member #{i}: {}", c.note.clone().unwrap_or_default());
            return Err(Error::Hypothesis(Box::new(c.with_note(note))));
        }
        certs.push(c);
    }
    if family.len() > 1 {
        let c = certify_commuting(family, body, space, opts.hypothesis_samples, opts.hypothesis_tol)?;
        if !c.is_pass() {
            return Err(Error::Hypothesis(Box::new(c)));
        }
        certs.push(c);
    }
    Ok(certs)
}

/// Builds `R_n` for the family in the given order. The empty family gives the identity.
pub fn build_retraction(
    family: &[MapExpr],
    body: &ConvexBody,
    space: &NormSpec,
    opts: &RetractionOptions,
) -> Result<RetractionModel> {
    opts.validate()?;
    for t in family {
        t.validate()?;
    }
    check_family_hypotheses(family, body, space, opts)?;
    let mut r = RetractionModel::identity(body, space);
    for (k, t) in family.iter().enumerate() {
        r = build_stage(r, Arc::new(t.clone()), k + 1, space, opts)?;
    }
    Ok(r)
}

fn build_stage(
    previous: RetractionModel,
    map: Arc<dyn SelfMap>,
    stage: usize,
    space: &NormSpec,
    opts: &RetractionOptions,
) -> Result<RetractionModel> {
    let body = previous.body().clone();
    let probes = body.sample(SampleStrategy::ExtremeFirst, opts.probe_count, opts.probe_seed)?;
    let diameter = body.diameter(space).value;
    let kind = space.kind;
    let mut values: HashMap<u64, Vec<Point>> = HashMap::new();
    let mut compute = |s: u64| -> Result<Vec<Point>> {
        if let Some(v) = values.get(&s) {
            return Ok(v.clone());
        }
        let ropts = ResolventOptions {
            tol: opts.inner_tol(s),
            norm: kind,
            diameter,
            max_iter: None,
        };
        let v: Vec<Point> = probes
            .par_iter()
            .map(|p| resolvent_unchecked(&*map, &Unchecked(&previous), s, p, ropts).map(|r| r.fixed_point))
            .collect::<Result<_>>()?;
        values.insert(s, v.clone());
        Ok(v)
    };
    let mut trace = Vec::new();
    let mut s_star = None;
    for &s in &opts.schedule {
        let a = compute(s)?;
        let b = compute(2 * s)?;
        let max_delta = a.iter().zip(&b).map(|(u, v)| kind.dist(u, v)).fold(0.0, f64::max);
        trace.push(StabilizationStep { stage, s, max_delta });
        if max_delta <= opts.stabilization_tol {
            s_star = Some(s);
            break;
        }
    }
    let Some(s_star) = s_star else {
        let best_delta = trace.iter().map(|t| t.max_delta).fold(f64::INFINITY, f64::min);
        return Err(Error::Stabilization { stage, tolerance: opts.stabilization_tol, best_delta, trace });
    };
    Ok(RetractionModel::from_parts(
        stage,
        &body,
        space,
        Construction::Resolvent {
            previous,
            map,
            s_star,
            solver_tol: opts.inner_tol(s_star),
            trace,
        },
    ))
}

/// Measurements taken by [`certify_retraction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RetractionCertificate {
    /// `max_x ||T_i(R x) - R x||` per family member.
    pub range_in_fix: Vec<f64>,
    /// `max_x ||R(R x) - R x||`.
    pub idempotence_residual: f64,
    /// `max ||R x - R y|| - ||x - y||` over sampled pairs.
    pub nonexpansiveness: f64,
    pub firmness: Option<PropertyCertificate>,
    pub stabilization: Vec<StabilizationStep>,
    pub range_bound: f64,
    pub tolerance: f64,
    pub sample_count: usize,
    pub pass_range: bool,
    pub pass_idempotence: bool,
    pub pass_nonexpansive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass_firm: Option<bool>,
    /// Per-property certificates with witnesses.
    pub certificates: Vec<PropertyCertificate>,
}

impl RetractionCertificate {
    pub fn pass(&self) -> bool {
        self.pass_range && self.pass_idempotence && self.pass_nonexpansive && self.pass_firm.unwrap_or(true)
    }
}

/// Measures range, idempotence, nonexpansivity and optionally firm
/// nonexpansivity of `r` on `sample_count` probe points.
pub fn certify_retraction<R: SelfMap + ?Sized, M: SelfMap>(
    r: &R,
    family: &[M],
    body: &ConvexBody,
    space: &NormSpec,
    sample_count: usize,
    tol: f64,
    check_firm: bool,
) -> Result<RetractionCertificate> {
    let kind = space.kind;
    let points = body.sample(SampleStrategy::ExtremeFirst, sample_count, 0)?;
    let images: Vec<Point> = points.par_iter().map(|p| r.apply(p)).collect::<Result<_>>()?;

    let mut range = CertificateBuilder::new(Property::RangeInFixedSet, tol).samples(points.len());
    let mut range_in_fix = Vec::with_capacity(family.len());
    for (i, t) in family.iter().enumerate() {
        let res: Vec<f64> = images
            .par_iter()
            .map(|y| Ok(kind.dist(&t.apply(y)?, y)))
            .collect::<Result<_>>()?;
        for (k, &v) in res.iter().enumerate() {
            range.check(v, 0.0, || Witness::new(vec![points[k].clone(), images[k].clone()], v, 0.0).with_indices(vec![i, k]));
        }
        range_in_fix.push(res.into_iter().fold(0.0, f64::max));
    }
    let range = range.finish();

    let twice: Vec<Point> = images.par_iter().map(|y| r.apply(y)).collect::<Result<_>>()?;
    let mut idem = CertificateBuilder::new(Property::Idempotent, tol).samples(points.len());
    let mut idempotence_residual: f64 = 0.0;
    for (k, (y, z)) in images.iter().zip(&twice).enumerate() {
        let v = kind.dist(y, z);
        idempotence_residual = idempotence_residual.max(v);
        idem.check(v, 0.0, || Witness::new(vec![points[k].clone()], v, 0.0).with_indices(vec![k]));
    }
    let idem = idem.finish();

    let nonexp = nonexpansive_on(r, &points, kind, tol)?;
    let firmness = if check_firm && kind == NormKind::Euclidean {
        Some(firmly_nonexpansive_on(r, &points, &DEFAULT_A_GRID, tol)?)
    } else {
        None
    };
    let mut certificates = vec![range.clone(), idem.clone(), nonexp.clone()];
    if let Some(f) = &firmness {
        certificates.push(f.clone());
    }
    Ok(RetractionCertificate {
        range_in_fix,
        idempotence_residual,
        nonexpansiveness: if nonexp.worst_excess.is_finite() { nonexp.worst_excess } else { 0.0 },
        pass_firm: firmness.as_ref().map(|f| f.is_pass()),
        firmness,
        stabilization: Vec::new(),
        range_bound: 0.0,
        tolerance: tol,
        sample_count: points.len(),
        pass_range: range.is_pass(),
        pass_idempotence: idem.is_pass(),
        pass_nonexpansive: nonexp.is_pass(),
        certificates,
    })
}

/// [`certify_retraction`] for a built model; also records its stabilization
/// trace and range bound.
pub fn certify_model<M: SelfMap>(
    r: &RetractionModel,
    family: &[M],
    space: &NormSpec,
    sample_count: usize,
    tol: f64,
    check_firm: bool,
) -> Result<RetractionCertificate> {
    let mut c = certify_retraction(r, family, r.body(), space, sample_count, tol, check_firm)?;
    c.stabilization = r.stabilization_trace();
    c.range_bound = r.range_bound();
    Ok(c)
}

/// Regular grid over the bounding box of `body`, restricted to the body.
pub fn probe_grid(body: &ConvexBody, resolution: f64) -> Result<Vec<Point>> {
    let d = body.dim();
    if d > 3 {
        return Err(Error::input(format!("grid probes need dimension <= 3, got {d}")));
    }
    if !(resolution > 0.0) {
        return Err(Error::input("grid resolution must be positive"));
    }
    let (lo, hi) = body.bounding_box();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let (a, b) = (lo.coords()[i], hi.coords()[i]);
            let steps = ((b - a) / resolution + 1e-9).floor() as usize;
            // Divide the span when the step fits exactly so the lattice hits 0 without drift.
            let exact = ((b - a) - steps as f64 * resolution).abs() <= 1e-9 * resolution.max(1.0);
            (0..=steps)
                .map(|k| if exact && steps > 0 { a + (b - a) * k as f64 / steps as f64 } else { a + k as f64 * resolution })
                .collect()
        })
        .collect();
    let total = axes.iter().map(|a| a.len() as f64).product::<f64>();
    if total > MAX_GRID_POINTS as f64 {
        return Err(Error::input(format!("probe grid would have {total} points, limit is {MAX_GRID_POINTS}")));
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let p = Point::new(idx.iter().zip(&axes).map(|(&k, a)| a[k]).collect())?;
        if body.contains(&p, GEOMETRIC_TOL) {
            out.push(p);
        }
        let mut i = 0;
        loop {
            if i == d {
                return Ok(out);
            }
            idx[i] += 1;
            if idx[i] < axes[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Grid points of `body` moved by at most `grid_tol` (default `resolution / 2`)
/// by every member of `family`. The empty family keeps every grid point.
pub fn fix_set_probe<M: SelfMap>(
    family: &[M],
    body: &ConvexBody,
    kind: NormKind,
    resolution: f64,
    grid_tol: Option<f64>,
) -> Result<Vec<Point>> {
    let tol = grid_tol.unwrap_or(resolution / 2.0);
    let grid = probe_grid(body, resolution)?;
    let keep: Vec<bool> = grid
        .par_iter()
        .map(|x| {
            for t in family {
                if kind.dist(&t.apply(x)?, x) > tol {
                    return Ok(false);
                }
            }
            Ok(true)
        })
        .collect::<Result<_>>()?;
    Ok(grid.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect())
}

/// Outcome of [`commute_retract_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommuteRetractReport {
    pub certificate: PropertyCertificate,
    /// Grid points with `||T(R x) - x|| <= tol`.
    pub fix_composite: Vec<Point>,
    /// Grid points fixed by `T` and by every member of the family.
    pub fix_intersection: Vec<Point>,
    pub resolution: f64,
    pub grid_tol: f64,
}

/// Two-sided grid comparison of `Fix(T R)` with `Fix T` intersected with the
/// common fixed set of `family`. Any grid point in exactly one of the two sets is
/// a witness.
pub fn commute_retract_check<T, M, R>(
    t: &T,
    family: &[M],
    r: &R,
    body: &ConvexBody,
    kind: NormKind,
    resolution: f64,
    grid_tol: Option<f64>,
) -> Result<CommuteRetractReport>
where
    T: SelfMap + ?Sized,
    M: SelfMap,
    R: SelfMap + ?Sized,
{
    let tol = grid_tol.unwrap_or(resolution / 2.0);
    let grid = probe_grid(body, resolution)?;
    let rows: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|x| {
            let composite = kind.dist(&t.apply(&r.apply(x)?)?, x);
            let mut worst = kind.dist(&t.apply(x)?, x);
            for s in family {
                worst = worst.max(kind.dist(&s.apply(x)?, x));
            }
            Ok((composite, worst))
        })
        .collect::<Result<_>>()?;
    let mut b = CertificateBuilder::new(Property::FixCompositeMatchesIntersection, 0.0).samples(grid.len());
    let mut fix_composite = Vec::new();
    let mut fix_intersection = Vec::new();
    for (k, (x, &(composite, worst))) in grid.iter().zip(&rows).enumerate() {
        let in_composite = composite <= tol;
        let in_intersection = worst <= tol;
        if in_composite {
            fix_composite.push(x.clone());
        }
        if in_intersection {
            fix_intersection.push(x.clone());
        }
        if in_composite != in_intersection {
            // Report the residual of the side that claims membership against the grid tolerance.
            let (measured, bound) = if in_composite { (worst, tol) } else { (composite, tol) };
            b.push_witness(Witness::new(vec![x.clone()], measured, bound).with_indices(vec![k]));
        }
    }
    let certificate = b.finish().with_note(format!(
        "grid resolution {resolution}, membership tolerance {tol}; a witness is a grid point in exactly one of the two sets"
    ));
    Ok(CommuteRetractReport { certificate, fix_composite, fix_intersection, resolution, grid_tol: tol })
}

/// Residuals of one map along an approximate fixed point sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResidualSeries {
    pub label: String,
    pub residuals: Vec<f64>,
    /// `max_n s_n * residual_n`.
    pub fitted_constant: f64,
}

/// Outcome of [`apfs_transfer_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ApfsTransferReport {
    pub certificate: PropertyCertificate,
    pub s_values: Vec<u64>,
    pub points: Vec<Point>,
    pub series: Vec<ResidualSeries>,
    pub diameter: f64,
    /// Ceiling on every fitted constant.
    pub constant_bound: f64,
    pub tolerance: f64,
}

/// Builds `x_n = F_{s_n} x` for `T o R` and checks that `x_n` is an
/// approximate fixed point sequence of every family member, of `R` and of `T`.
///
/// "Tends to zero" is read as: the last residual is at most `tol`, and every
/// residual is at most `c / s_n` with `c <= 3 diam(C)`.
pub fn apfs_transfer_check<T, M, R>(
    t: &T,
    family: &[(String, M)],
    r: &R,
    body: &ConvexBody,
    space: &NormSpec,
    x: &Point,
    schedule: &[u64],
    tol: f64,
) -> Result<ApfsTransferReport>
where
    T: SelfMap + ?Sized,
    M: SelfMap,
    R: SelfMap + ?Sized,
{
    validate_schedule(schedule)?;
    let kind = space.kind;
    let diameter = body.diameter(space).value;
    let points: Vec<Point> = schedule
        .par_iter()
        .map(|&s| {
            let opts = ResolventOptions::new(tol / (4.0 * s as f64), body, space);
            resolvent(t, r, s, x, body, opts).map(|rep| rep.fixed_point)
        })
        .collect::<Result<_>>()?;

    let (br, bt) = (Borrowed(r), Borrowed(t));
    let mut labelled: Vec<(String, &dyn SelfMap)> = family.iter().map(|(n, m)| (n.clone(), m as &dyn SelfMap)).collect();
    labelled.push(("R".into(), &br));
    labelled.push(("T".into(), &bt));

    let constant_bound = 3.0 * diameter;
    let mut b = CertificateBuilder::new(Property::ApproximateFixedPointTransfer, 0.0).samples(points.len());
    let mut series = Vec::with_capacity(labelled.len());
    for (idx, (label, m)) in labelled.iter().enumerate() {
        let residuals: Vec<f64> = points
            .par_iter()
            .map(|p| Ok(kind.dist(&m.apply(p)?, p)))
            .collect::<Result<_>>()?;
        let fitted = schedule.iter().zip(&residuals).map(|(&s, v)| s as f64 * v).fold(0.0, f64::max);
        for (n, (&s, &v)) in schedule.iter().zip(&residuals).enumerate() {
            let bound = constant_bound / s as f64;
            b.check(v, bound, || Witness::new(vec![points[n].clone()], v, bound).with_indices(vec![idx, n]));
        }
        if let Some(&last) = residuals.last() {
            b.check(last, tol, || {
                Witness::new(vec![points[points.len() - 1].clone()], last, tol).with_indices(vec![idx, points.len() - 1])
            });
        }
        series.push(ResidualSeries { label: label.clone(), residuals, fitted_constant: fitted });
    }
    let certificate = b.finish().with_note(
        "convergence to zero read as: final residual <= tol and residual_n <= c / s_n with c <= 3 diam(C)",
    );
    Ok(ApfsTransferReport {
        certificate,
        s_values: schedule.to_vec(),
        points,
        series,
        diameter,
        constant_bound,
        tolerance: tol,
    })
}

#[derive(Debug)]
struct Borrowed<'a, M: ?Sized>(&'a M);

impl<M: SelfMap + ?Sized> SelfMap for Borrowed<'_, M> {
    fn apply(&self, x: &Point) -> Result<Point> {
        self.0.apply(x)
    }
    fn eval_error(&self) -> f64 {
        self.0.eval_error()
    }
    fn is_affine(&self) -> bool {
        self.0.is_affine()
    }
}

/// A procedure returning a retraction onto the fixed set of a given self-map.
pub type Finder<'a> = dyn Fn(Arc<dyn SelfMap>) -> Result<RetractionModel> + 'a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruckOptions {
    /// Grid resolution for the per-stage fixed-set comparison; the comparison
    /// is skipped above dimension 3.
    pub resolution: f64,
    pub grid_tol: Option<f64>,
    pub hypothesis_samples: usize,
    pub hypothesis_tol: f64,
}

impl Default for BruckOptions {
    fn default() -> Self {
        Self { resolution: 0.1, grid_tol: None, hypothesis_samples: 64, hypothesis_tol: 1e-9 }
    }
}

#[derive(Debug, Clone)]
pub struct BruckReport {
    pub model: RetractionModel,
    /// One fixed-set comparison per stage (empty above dimension 3).
    pub stages: Vec<CommuteRetractReport>,
}

impl BruckReport {
    pub fn pass(&self) -> bool {
        self.stages.iter().all(|s| s.certificate.is_pass())
    }
}

/// `R_1 = finder(T_1)`, `R_{k+1} = finder(T_{k+1} o R_k)`.
///
/// At every stage the grid fixed set of `T_{k+1} o R_k` is compared with the
/// common fixed set of `T_1..T_{k+1}`.
pub fn bruck_compose(
    family: &[MapExpr],
    finder: &Finder<'_>,
    body: &ConvexBody,
    space: &NormSpec,
    opts: &BruckOptions,
) -> Result<BruckReport> {
    if family.is_empty() {
        return Err(Error::input("composition needs at least one map"));
    }
    if family.len() > 1 {
        let c = certify_commuting(family, body, space, opts.hypothesis_samples, opts.hypothesis_tol)?;
        if !c.is_pass() {
            return Err(Error::Hypothesis(Box::new(c)));
        }
    }
    let grid_checks = body.dim() <= 3;
    let mut stages = Vec::new();
    let mut r = RetractionModel::identity(body, space);
    for (k, t) in family.iter().enumerate() {
        if grid_checks {
            stages.push(commute_retract_check(t, &family[..k], &r, body, space.kind, opts.resolution, opts.grid_tol)?);
        }
        let tk: Arc<dyn SelfMap> = Arc::new(t.clone());
        let composite: Arc<dyn SelfMap> = if k == 0 {
            tk
        } else {
            Arc::new(Composition(vec![tk, Arc::new(r.clone())]))
        };
        r = finder(composite).map_err(|e| Error::Stage { stage: k + 1, source: Box::new(e) })?;
    }
    Ok(BruckReport { model: r, stages })
}

/// Finder that freezes the resolvent of a single map at its stabilized `s*`.
pub fn resolvent_limit_finder<'a>(body: &'a ConvexBody, space: &'a NormSpec, opts: &'a RetractionOptions) -> Box<Finder<'a>> {
    Box::new(move |map| {
        opts.validate()?;
        build_stage(RetractionModel::identity(body, space), map, 1, space, opts)
    })
}

/// Finder for affine maps: recovers `x -> M x + b` by finite differences,
/// solves `(M - I) x = -b` and returns the orthogonal projection onto the
/// affine solution set. Fails when the map is not affine on the body or has
/// no fixed point.
pub fn linear_fixed_space_finder<'a>(body: &'a ConvexBody, space: &'a NormSpec) -> Box<Finder<'a>> {
    Box::new(move |map| {
        let (m, b) = recover_affine(&*map, body)?;
        let n = body.dim();
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| m[(i, j)] - if i == j { 1.0 } else { 0.0 });
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let cut = 1e-9 * smax.max(1.0);
        let v_t = svd.v_t.as_ref().ok_or_else(|| Error::input("singular value decomposition failed"))?;
        let rhs = -&b;
        let x0 = svd
            .solve(&rhs, cut)
            .map_err(|e| Error::input(format!("fixed-set solve failed: {e}")))?;
        if (&a * &x0 - &rhs).norm() > 1e-9 * (1.0 + rhs.norm()) {
            return Err(Error::input("affine map has no fixed point"));
        }
        let mut proj = nalgebra::DMatrix::zeros(n, n);
        for (k, &sv) in svd.singular_values.iter().enumerate() {
            if sv <= cut {
                let v = v_t.row(k).transpose();
                proj += &v * v.transpose();
            }
        }
        // Null directions of a rank-deficient square matrix beyond the computed singular values.
        let rank_deficit = n - svd.singular_values.len();
        if rank_deficit > 0 {
            return Err(Error::input("unexpected rank deficit in singular value decomposition"));
        }
        let offset = &x0 - &proj * &x0;
        let matrix: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| proj[(i, j)]).collect()).collect();
        let expr = MapExpr::affine(matrix, Point::new(offset.iter().copied().collect())?)?;
        Ok(RetractionModel::explicit(Arc::new(expr), "orthogonal projection onto the fixed affine subspace", 1, body, space))
    })
}

fn recover_affine(map: &dyn SelfMap, body: &ConvexBody) -> Result<(nalgebra::DMatrix<f64>, nalgebra::DVector<f64>)> {
    let n = body.dim();
    let a0 = body.anchor().clone();
    let (lo, hi) = body.bounding_box();
    let h = (0..n).map(|i| hi.coords()[i] - lo.coords()[i]).fold(f64::INFINITY, f64::min).max(1e-6) * 1e-3;
    let f0 = map.apply(&a0)?;
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let fj = map.apply(&(&a0 + &Point::unit(n, j).scale(h)))?;
        for i in 0..n {
            m[(i, j)] = (fj.coords()[i] - f0.coords()[i]) / h;
        }
    }
    let a0v = nalgebra::DVector::from_column_slice(a0.coords());
    let b = nalgebra::DVector::from_column_slice(f0.coords()) - &m * &a0v;
    for p in body.sample(SampleStrategy::ExtremeFirst, 16, 0)? {
        let pv = nalgebra::DVector::from_column_slice(p.coords());
        let want = &m * &pv + &b;
        let got = map.apply(&p)?;
        let err = (nalgebra::DVector::from_column_slice(got.coords()) - want).norm();
        if err > 1e-7 * (1.0 + pv.norm()) {
            return Err(Error::input(format!("map is not affine on the body (deviation {err:e} at {p})")));
        }
    }
    Ok((m, b))
}
