//! Banach iteration and the anchored resolvent.
//!
//! For a nonexpansive self-map `G = T o R` of a bounded convex body `C`, an
//! anchor `x` and an integer `s >= 1`, the map
//!
//! ```text
//! T_{x,s}(z) = x / s + (1 - 1/s) G(z)
//! ```
//!
//! is a contraction with factor `1 - 1/s`. Its unique fixed point is `F_s x`.
//! Rearranging the fixed-point equation gives the exact identity
//! `G(F_s x) - F_s x = (G(F_s x) - x) / s`, hence the residual bound
//! `||G(F_s x) - F_s x|| <= diam(C) / s`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{CertificateBuilder, Property, PropertyCertificate, Witness};
use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, NormKind, NormSpec, Point, SampleStrategy, GEOMETRIC_TOL};
use crate::mappings::SelfMap;

/// Slack on the contraction factor before the ratio guard counts a step as a violation.
pub const RATIO_SLACK: f64 = 1e-6;
/// Consecutive ratio violations that abort a run.
pub const RATIO_STRIKES: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct ContractionSolveReport {
    pub fixed_point: Point,
    pub iterations: usize,
    pub contraction_factor: f64,
    /// `q^k / (1 - q) * ||x_1 - x_0||`.
    pub a_priori_bound: f64,
    /// `||G x* - x*||` at the returned point.
    pub a_posteriori_residual: f64,
    /// `q / (1 - q) * ||x_k - x_{k-1}||` plus the noise floor contribution:
    /// the distance to the true fixed point guaranteed by the last step.
    pub error_bound: f64,
    /// True when the run stopped because successive differences reached the
    /// floating-point noise floor rather than the requested threshold.
    pub stagnated: bool,
    /// Successive differences `||x_{k+1} - x_k||`, in order.
    pub differences: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanachOptions {
    /// Contraction factor claimed by the caller; must lie in `[0, 1)`.
    pub q: f64,
    /// Requested distance to the true fixed point.
    pub tol: f64,
    pub max_iter: usize,
    pub norm: NormKind,
    /// Absolute evaluation error of the map. Differences at or below
    /// `2 * noise_floor + 8 eps ||x||` cannot be resolved and end the run.
    pub noise_floor: f64,
}

impl BanachOptions {
    pub fn new(q: f64, tol: f64, max_iter: usize) -> Self {
        Self {
            q,
            tol,
            max_iter,
            norm: NormKind::Euclidean,
            noise_floor: 0.0,
        }
    }
}

/// A-priori iteration count `ceil(log(tol (1 - q) / diam) / log q)` plus 50.
pub fn default_max_iter(q: f64, tol: f64, diam: f64) -> usize {
    if q <= 0.0 || diam <= 0.0 {
        return 51;
    }
    let ratio = tol * (1.0 - q) / diam;
    if ratio >= 1.0 {
        return 50;
    }
    let k = (ratio.ln() / q.ln()).ceil();
    if k.is_finite() && k < 1e12 {
        k as usize + 50
    } else {
        usize::MAX
    }
}

/// Iterates `x_{k+1} = map(x_k)` from `x0` until `||x_{k+1} - x_k|| <= tol (1 - q) / q`,
/// which places `x_{k+1}` within `tol` of the fixed point when `map` is a
/// `q`-contraction.
///
/// The ratio `||x_{k+1} - x_k|| / ||x_k - x_{k-1}||` is monitored; if it
/// exceeds `q + 1e-6` on three consecutive steps the claimed factor is wrong
/// and the run is rejected as an input error.
pub fn banach_solve<M: SelfMap + ?Sized>(map: &M, x0: &Point, opts: BanachOptions) -> Result<ContractionSolveReport> {
    let q = opts.q;
    if !(0.0..1.0).contains(&q) {
        return Err(Error::input(format!("contraction factor must lie in [0, 1), got {q}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::input("solver tolerance must be positive"));
    }
    let threshold = if q == 0.0 { f64::INFINITY } else { opts.tol * (1.0 - q) / q };
    let mut x = x0.clone();
    let mut diffs: Vec<f64> = Vec::new();
    let mut strikes = 0;
    for k in 1..=opts.max_iter {
        let y = map.apply(&x)?;
        let diff = opts.norm.dist(&y, &x);
        let floor = 2.0 * opts.noise_floor + 8.0 * f64::EPSILON * opts.norm.norm(y.coords());
        if let Some(&prev) = diffs.last() {
            if prev > 10.0 * floor && diff > (q + RATIO_SLACK) * prev {
                strikes += 1;
                if strikes >= RATIO_STRIKES {
                    return Err(Error::input(format!(
                        "contraction ratio test failed: ||x_{{k+1}} - x_k|| / ||x_k - x_{{k-1}}|| = {} exceeds q = {q} \
                         on {RATIO_STRIKES} consecutive steps (iteration {k})",
                        diff / prev
                    )));
                }
            } else {
                strikes = 0;
            }
        }
        diffs.push(diff);
        if diff <= threshold || diff <= floor {
            let residual = opts.norm.dist(&map.apply(&y)?, &y);
            let first = diffs[0];
            let a_priori = if q == 0.0 { 0.0 } else { q.powi(k as i32) / (1.0 - q) * first };
            let error_bound = if q == 0.0 {
                floor
            } else {
                (q * diff + floor) / (1.0 - q)
            };
            return Ok(ContractionSolveReport {
                fixed_point: y,
                iterations: k,
                contraction_factor: q,
                a_priori_bound: a_priori,
                a_posteriori_residual: residual,
                error_bound,
                stagnated: diff > threshold,
                differences: diffs,
            });
        }
        x = y;
    }
    let tail = diffs.len().saturating_sub(16);
    Err(Error::Solver {
        message: format!("Banach iteration did not converge in {} iterations (q = {q})", opts.max_iter),
        trace: diffs.split_off(tail),
    })
}

/// `z -> x / s + (1 - 1/s) T(R(z))`.
#[derive(Debug)]
pub struct AnchoredMap<'a, T: ?Sized, R: ?Sized> {
    pub map: &'a T,
    pub retraction: &'a R,
    pub s: u64,
    pub anchor: &'a Point,
}

impl<T: SelfMap + ?Sized, R: SelfMap + ?Sized> SelfMap for AnchoredMap<'_, T, R> {
    fn apply(&self, z: &Point) -> Result<Point> {
        let inv = 1.0 / self.s as f64;
        let g = self.map.apply(&self.retraction.apply(z)?)?;
        Ok(self.anchor.lerp(&g, 1.0 - inv))
    }

    fn eval_error(&self) -> f64 {
        (1.0 - 1.0 / self.s as f64) * (self.map.eval_error() + self.retraction.eval_error())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolventOptions {
    /// Requested distance of the returned point to the true `F_s x`.
    pub tol: f64,
    pub norm: NormKind,
    /// Diameter of the body; only used for the default iteration cap.
    pub diameter: f64,
    /// Overrides the a-priori iteration cap.
    pub max_iter: Option<usize>,
}

impl ResolventOptions {
    pub fn new(tol: f64, body: &ConvexBody, space: &NormSpec) -> Self {
        Self {
            tol,
            norm: space.kind,
            diameter: body.diameter(space).value,
            max_iter: None,
        }
    }
}

/// Computes `F_s x` by Banach iteration with `q = 1 - 1/s`, started at the anchor `x`.
///
/// The anchor must lie in `body`. No membership test is applied to the
/// iterates; they stay in `body` whenever `T o R` is a self-map of it.
pub fn resolvent<T: SelfMap + ?Sized, R: SelfMap + ?Sized>(
    t: &T,
    r: &R,
    s: u64,
    x: &Point,
    body: &ConvexBody,
    opts: ResolventOptions,
) -> Result<ContractionSolveReport> {
    if s == 0 {
        return Err(Error::input("resolvent parameter s must be at least 1"));
    }
    if !body.contains(x, GEOMETRIC_TOL) {
        return Err(Error::input(format!("resolvent anchor {x} is not in the body")));
    }
    resolvent_unchecked(t, r, s, x, opts)
}

pub(crate) fn resolvent_unchecked<T: SelfMap + ?Sized, R: SelfMap + ?Sized>(
    t: &T,
    r: &R,
    s: u64,
    x: &Point,
    opts: ResolventOptions,
) -> Result<ContractionSolveReport> {
    let q = 1.0 - 1.0 / s as f64;
    let anchored = AnchoredMap { map: t, retraction: r, s, anchor: x };
    let max_iter = opts
        .max_iter
        .unwrap_or_else(|| default_max_iter(q, opts.tol, opts.diameter.max(opts.tol)));
    banach_solve(
        &anchored,
        x,
        BanachOptions {
            q,
            tol: opts.tol,
            max_iter,
            norm: opts.norm,
            noise_floor: anchored.eval_error(),
        },
    )
}

/// Samples pairs of `body` and checks `||F_s x - F_s y|| <= ||x - y|| + tol`.
pub fn resolvent_nonexpansive_check<T: SelfMap + ?Sized, R: SelfMap + ?Sized>(
    t: &T,
    r: &R,
    s: u64,
    body: &ConvexBody,
    space: &NormSpec,
    sample_count: usize,
    solver_tol: f64,
    tol: f64,
) -> Result<PropertyCertificate> {
    let points = body.sample(SampleStrategy::ExtremeFirst, sample_count, 0)?;
    let opts = ResolventOptions::new(solver_tol, body, space);
    let values: Vec<Point> = points
        .par_iter()
        .map(|p| resolvent(t, r, s, p, body, opts).map(|rep| rep.fixed_point))
        .collect::<Result<_>>()?;
    let kind = space.kind;
    let mut b = CertificateBuilder::new(Property::Nonexpansive, tol).samples(points.len());
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let measured = kind.dist(&values[i], &values[j]);
            let bound = kind.dist(&points[i], &points[j]);
            b.check(measured, bound, || {
                Witness::new(vec![points[i].clone(), points[j].clone()], measured, bound).with_indices(vec![i, j])
            });
        }
    }
    Ok(b.finish().with_note(format!("resolvent F_s with s = {s}")))
}

/// The doubling schedule `s = 2^k`, `k = 1..=max_exp`.
pub fn doubling_schedule(max_exp: u32) -> Vec<u64> {
    (1..=max_exp).map(|k| 1u64 << k).collect()
}

/// Default resolvent schedule `2, 4, ..., 4096`.
pub fn default_schedule() -> Vec<u64> {
    doubling_schedule(12)
}

pub(crate) fn validate_schedule(schedule: &[u64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::input("s schedule must not be empty"));
    }
    if schedule[0] == 0 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("s schedule must be strictly increasing positive integers"));
    }
    Ok(())
}

/// Approximate fixed point certificate for `T o R` along an `s` schedule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "camelCase")]
pub struct ApfsCertificate {
    pub anchor: Point,
    pub s_values: Vec<u64>,
    /// `F_s x` for each schedule entry.
    pub points: Vec<Point>,
    /// `||T R F_s x - F_s x||`.
    pub residuals: Vec<f64>,
    /// `diam(C) / s`.
    pub bounds: Vec<f64>,
    /// `| residual - ||T R F_s x - x|| / s |`, which vanishes exactly at the true `F_s x`.
    pub identity_gaps: Vec<f64>,
    pub diameter: f64,
    pub diameter_exact: bool,
    /// Least-squares slope of `log residual` against `log s` over positive residuals.
    pub log_log_slope: Option<f64>,
    pub tolerance: f64,
    /// Schedule entries whose residual or identity check failed.
    pub failed_s: Vec<u64>,
    pub pass: bool,
    pub note: String,
}

/// Computes `F_s x` along `schedule` and checks the residual bound
/// `||T R F_s x - F_s x|| <= diam(C) / s + tol` together with the exact
/// identity `residual = ||T R F_s x - x|| / s` (within `tol`).
pub fn apfs_certify<T: SelfMap + ?Sized, R: SelfMap + ?Sized>(
    t: &T,
    r: &R,
    x: &Point,
    body: &ConvexBody,
    space: &NormSpec,
    schedule: &[u64],
    tol: f64,
) -> Result<ApfsCertificate> {
    validate_schedule(schedule)?;
    let diam = body.diameter(space);
    let kind = space.kind;
    let rows: Vec<(Point, f64, f64)> = schedule
        .par_iter()
        .map(|&s| {
            let opts = ResolventOptions::new(tol / (4.0 * s as f64), body, space);
            let f = resolvent(t, r, s, x, body, opts)?.fixed_point;
            let g = t.apply(&r.apply(&f)?)?;
            let residual = kind.dist(&g, &f);
            let gap = (residual - kind.dist(&g, x) / s as f64).abs();
            Ok((f, residual, gap))
        })
        .collect::<Result<_>>()?;
    let mut cert = ApfsCertificate {
        anchor: x.clone(),
        s_values: schedule.to_vec(),
        points: Vec::with_capacity(rows.len()),
        residuals: Vec::with_capacity(rows.len()),
        bounds: Vec::with_capacity(rows.len()),
        identity_gaps: Vec::with_capacity(rows.len()),
        diameter: diam.value,
        diameter_exact: diam.exact,
        log_log_slope: None,
        tolerance: tol,
        failed_s: Vec::new(),
        pass: true,
        note: "residual bound diam(C)/s; identity residual = ||T R F_s x - x|| / s".into(),
    };
    for (&s, (f, residual, gap)) in schedule.iter().zip(rows) {
        let bound = diam.value / s as f64;
        if !(residual <= bound + tol && gap <= tol) {
            cert.failed_s.push(s);
        }
        cert.points.push(f);
        cert.residuals.push(residual);
        cert.bounds.push(bound);
        cert.identity_gaps.push(gap);
    }
    cert.pass = cert.failed_s.is_empty();
    cert.log_log_slope = log_log_slope(schedule, &cert.residuals);
    Ok(cert)
}

/// Least-squares slope of `ln y` against `ln s` over entries with `y > 0`.
pub fn log_log_slope(s: &[u64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = s
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(s, v)| ((*s as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
