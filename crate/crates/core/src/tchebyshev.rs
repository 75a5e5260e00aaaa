//! Tchebyshev radii and centers of finite point sets.
//!
//! The Tchebyshev radius of `A` is the smallest `r` such that some closed ball
//! of radius `r` contains `A`; the center set collects every such center. A
//! nonexpansive map that permutes `A` sends the center set into itself, and a
//! commuting family of such maps has a common fixed point inside it.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::{CertificateBuilder, Property, PropertyCertificate, Witness};
use crate::error::{Error, Result};
use crate::geometry::{solve_well_conditioned, ConvexBody, NormKind, NormSpec, Point};
use crate::mappings::{analytic_nonexpansive, certify_preserves_set, commuting_on, nonexpansive_on, MapExpr};
use crate::retraction::{build_retraction, RetractionOptions, RetractionSummary};

/// Seed of the input shuffle for the enclosing-ball recursion.
const WELZL_SEED: u64 = 0x5eed;
/// Relative slack for "point lies in ball" during the recursion.
const TIE_TOL: f64 = 1e-12;
const SUBGRADIENT_ITERS: usize = 20_000;

/// Axis-aligned box of centers (max norm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterBox {
    pub lo: Point,
    pub hi: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CenterResult {
    pub radius: f64,
    /// The center (Euclidean), or the midpoint of the center box (max norm).
    pub center: Point,
    /// `max_a ||center - a||`.
    pub enclosure: f64,
    pub exact: bool,
    /// Upper bound on `enclosure - r(A)` when the result is not exact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_box: Option<CenterBox>,
    pub norm: NormKind,
    pub tolerance: f64,
    pub method: String,
}

impl CenterResult {
    /// Whether `c` lies in the center set: `max_a ||c - a|| <= r + tol`.
    pub fn contains(&self, points: &[Point], c: &Point, tol: f64) -> bool {
        max_dist(points, c, self.norm) <= self.radius + tol
    }
}

fn max_dist(points: &[Point], c: &Point, kind: NormKind) -> f64 {
    points.iter().map(|a| kind.dist(a, c)).fold(0.0, f64::max)
}

fn check_points(points: &[Point], space: &NormSpec) -> Result<()> {
    if points.is_empty() {
        return Err(Error::input("point set must be nonempty"));
    }
    for p in points {
        p.check_dim(space.dimension)?;
    }
    Ok(())
}

/// Tchebyshev radius and center of a finite set.
///
/// Euclidean: exact enclosing ball by Welzl's recursion (any dimension), with
/// a subgradient run recorded as a cross-check above dimension 3. Max norm:
/// closed form, with the whole center box. Sum norm: linear program, not
/// claimed exact; `gap` bounds the distance to the optimum from above.
pub fn chebyshev_center(points: &[Point], space: &NormSpec, tol: f64) -> Result<CenterResult> {
    check_points(points, space)?;
    let res = match space.kind {
        NormKind::Euclidean => euclidean_center(points, space.dimension, tol),
        NormKind::Max => max_norm_center(points, space.dimension, tol),
        NormKind::Sum => sum_norm_center(points, space.dimension, tol)?,
    };
    if !(res.enclosure <= res.radius + tol.max(1e-12)) {
        return Err(Error::Solver {
            message: format!("center certificate failed: enclosure {} exceeds radius {}", res.enclosure, res.radius),
            trace: Vec::new(),
        });
    }
    Ok(res)
}

#[derive(Debug, Clone)]
struct Ball {
    center: Vec<f64>,
    radius: f64,
}

impl Ball {
    fn contains(&self, p: &[f64]) -> bool {
        if self.radius < 0.0 {
            return false;
        }
        let d = dist(&self.center, p);
        d <= self.radius + TIE_TOL * (1.0 + self.radius)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest ball with every support point on its boundary.
fn ball_through(support: &[&[f64]]) -> Ball {
    match support.len() {
        0 => Ball { center: Vec::new(), radius: -1.0 },
        1 => Ball { center: support[0].to_vec(), radius: 0.0 },
        _ => {
            let p0 = support[0];
            let k = support.len() - 1;
            let v: Vec<Vec<f64>> = support[1..].iter().map(|p| p.iter().zip(p0).map(|(a, b)| a - b).collect()).collect();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let g = nalgebra::DMatrix::from_fn(k, k, |i, j| 2.0 * dot(&v[i], &v[j]));
            let rhs = nalgebra::DVector::from_fn(k, |i, _| dot(&v[i], &v[i]));
            match solve_well_conditioned(g, rhs) {
                Some(lambda) => {
                    let mut c = p0.to_vec();
                    for (j, vj) in v.iter().enumerate() {
                        for (ci, x) in c.iter_mut().zip(vj) {
                            *ci += lambda[j] * x;
                        }
                    }
                    let radius = support.iter().map(|p| dist(&c, p)).fold(0.0, f64::max);
                    Ball { center: c, radius }
                }
                None => {
                    // Affinely dependent support: the widest pair spans the rest.
                    let mut best = Ball { center: p0.to_vec(), radius: 0.0 };
                    for i in 0..support.len() {
                        for j in i + 1..support.len() {
                            let r = dist(support[i], support[j]) / 2.0;
                            if r > best.radius {
                                let center = support[i].iter().zip(support[j]).map(|(a, b)| 0.5 * (a + b)).collect();
                                best = Ball { center, radius: r };
                            }
                        }
                    }
                    let radius = support.iter().map(|p| dist(&best.center, p)).fold(0.0, f64::max);
                    Ball { radius, ..best }
                }
            }
        }
    }
}

fn welzl(points: &[&[f64]], support: &mut Vec<usize>, all: &[&[f64]], dim: usize) -> Ball {
    let sup: Vec<&[f64]> = support.iter().map(|&i| all[i]).collect();
    let mut ball = ball_through(&sup);
    if support.len() == dim + 1 {
        return ball;
    }
    for (i, p) in points.iter().enumerate() {
        if !ball.contains(p) {
            let idx = all.iter().position(|q| std::ptr::eq(*q, *p)).unwrap_or(0);
            support.push(idx);
            ball = welzl(&points[..i], support, all, dim);
            support.pop();
        }
    }
    ball
}

/// Exact Euclidean enclosing ball.
pub fn min_enclosing_ball(points: &[Point]) -> (Point, f64) {
    let dim = points[0].dim();
    let mut order: Vec<&[f64]> = points.iter().map(|p| p.coords()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(WELZL_SEED));
    let ball = welzl(&order, &mut Vec::new(), &order, dim);
    let radius = order.iter().map(|p| dist(&ball.center, p)).fold(0.0, f64::max);
    (Point::new(ball.center).unwrap_or_else(|_| points[0].clone()), radius)
}

fn euclidean_center(points: &[Point], dim: usize, tol: f64) -> CenterResult {
    let (center, radius) = min_enclosing_ball(points);
    let (gap, method) = if dim > 3 {
        let (_, sub_r) = subgradient_center(points, NormKind::Euclidean);
        (Some((sub_r - radius).max(0.0)), "welzl (subgradient cross-check in gap)")
    } else {
        (None, "welzl")
    };
    CenterResult {
        enclosure: radius,
        radius,
        center,
        exact: true,
        gap,
        center_box: None,
        norm: NormKind::Euclidean,
        tolerance: tol,
        method: method.into(),
    }
}

/// Projected-free subgradient descent on `max_a ||c - a||` with diminishing
/// steps, restarted from the centroid and from each coordinate midpoint.
fn subgradient_center(points: &[Point], kind: NormKind) -> (Point, f64) {
    let dim = points[0].dim();
    let (lo, hi) = crate::geometry::bounding_box(points);
    let scale = kind.dist(&lo, &hi).max(1e-300);
    let starts = [crate::geometry::centroid(points), lo.lerp(&hi, 0.5)];
    let mut best: Option<(Point, f64)> = None;
    for start in starts {
        let mut c = start.into_coords();
        for k in 0..SUBGRADIENT_ITERS {
            let cp = Point::new(c.clone()).unwrap_or_else(|_| Point::zeros(dim));
            let (far, f) = points
                .iter()
                .map(|a| (a, kind.dist(a, &cp)))
                .fold((&points[0], -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best.as_ref().is_none_or(|b| f < b.1) {
                best = Some((cp.clone(), f));
            }
            let diff: Vec<f64> = c.iter().zip(far.coords()).map(|(x, y)| x - y).collect();
            let g: Vec<f64> = match kind {
                NormKind::Euclidean => diff.iter().map(|d| d / f.max(1e-300)).collect(),
                NormKind::Sum => diff.iter().map(|d| d.signum()).collect(),
                NormKind::Max => {
                    let m = diff.iter().map(|d| d.abs()).fold(0.0, f64::max);
                    diff.iter().map(|d| if d.abs() == m { d.signum() } else { 0.0 }).collect()
                }
            };
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gn == 0.0 {
                break;
            }
            let step = scale / ((k + 1) as f64).sqrt() / gn * 0.5;
            for (ci, gi) in c.iter_mut().zip(&g) {
                *ci -= step * gi;
            }
        }
    }
    best.expect("at least one start")
}

fn max_norm_center(points: &[Point], dim: usize, tol: f64) -> CenterResult {
    let (lo, hi) = crate::geometry::bounding_box(points);
    let radius = (0..dim).map(|i| (hi.coords()[i] - lo.coords()[i]) / 2.0).fold(0.0, f64::max);
    let center = lo.lerp(&hi, 0.5);
    let box_lo = Point::new((0..dim).map(|i| hi.coords()[i] - radius).collect()).unwrap_or_else(|_| center.clone());
    let box_hi = Point::new((0..dim).map(|i| lo.coords()[i] + radius).collect()).unwrap_or_else(|_| center.clone());
    CenterResult {
        enclosure: max_dist(points, &center, NormKind::Max),
        radius,
        center,
        exact: true,
        gap: None,
        center_box: Some(CenterBox { lo: box_lo, hi: box_hi }),
        norm: NormKind::Max,
        tolerance: tol,
        method: "closed form".into(),
    }
}

fn sum_norm_center(points: &[Point], dim: usize, tol: f64) -> Result<CenterResult> {
    // minimize t  s.t.  sum_i u_{a,i} <= t,  u_{a,i} >= +-(c_i - a_i).
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    let c: Vec<_> = (0..dim).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    for a in points {
        let u: Vec<_> = (0..dim).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
        for i in 0..dim {
            let ai = a.coords()[i];
            lp.add_constraint([(u[i], 1.0), (c[i], -1.0)], ComparisonOp::Ge, -ai);
            lp.add_constraint([(u[i], 1.0), (c[i], 1.0)], ComparisonOp::Ge, ai);
        }
        let mut row: Vec<_> = u.iter().map(|&v| (v, 1.0)).collect();
        row.push((t, -1.0));
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, 0.0);
    }
    let (lp_center, lp_r) = match lp.solve() {
        Ok(sol) => (Point::new(c.iter().map(|&v| sol[v]).collect())?, sol.objective()),
        Err(e) => return Err(Error::Solver { message: format!("sum-norm center program failed: {e}"), trace: Vec::new() }),
    };
    let (sub_c, sub_r) = subgradient_center(points, NormKind::Sum);
    let lp_enc = max_dist(points, &lp_center, NormKind::Sum);
    let (center, enclosure) = if lp_enc <= sub_r { (lp_center, lp_enc) } else { (sub_c, sub_r) };
    // Any center is at distance >= d(a, b) / 2 from one of a, b; the program value is also a lower bound up to rounding.
    let mut pair_lb: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            pair_lb = pair_lb.max(NormKind::Sum.dist(&points[i], &points[j]) / 2.0);
        }
    }
    let lower = pair_lb.max(lp_r - 1e-9 * (1.0 + lp_r.abs()));
    Ok(CenterResult {
        radius: enclosure,
        center,
        enclosure,
        exact: false,
        gap: Some((enclosure - lower).max(0.0)),
        center_box: None,
        norm: NormKind::Sum,
        tolerance: tol,
        method: "linear program with subgradient cross-check".into(),
    })
}

/// Certifies that `T` is nonexpansive on `points`, structurally if possible.
fn nonexpansive_hypothesis(t: &MapExpr, points: &[Point], kind: NormKind, tol: f64) -> Result<PropertyCertificate> {
    if let Some(reason) = analytic_nonexpansive(t, kind) {
        return Ok(PropertyCertificate::analytic(Property::Nonexpansive, tol, reason));
    }
    let c = nonexpansive_on(t, points, kind, tol)?;
    if c.is_pass() {
        Ok(c)
    } else {
        Err(Error::Hypothesis(Box::new(c)))
    }
}

fn preserves_hypothesis(t: &MapExpr, points: &[Point], tol: f64) -> Result<PropertyCertificate> {
    let c = certify_preserves_set(t, points, tol)?;
    if c.is_pass() {
        Ok(c)
    } else {
        Err(Error::Hypothesis(Box::new(c)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvarianceReport {
    pub center: CenterResult,
    /// `T c`.
    pub image: Point,
    /// `max_a ||T c - a||`.
    pub image_enclosure: f64,
    pub hypotheses: Vec<PropertyCertificate>,
    pub certificate: PropertyCertificate,
}

/// Checks `T c` in the center set of `A`, after certifying that `T` is
/// nonexpansive and maps `A` onto itself. A failed hypothesis is an error.
pub fn invariance_check(t: &MapExpr, points: &[Point], space: &NormSpec, tol: f64) -> Result<InvarianceReport> {
    check_points(points, space)?;
    let center = chebyshev_center(points, space, tol)?;
    let preserves = preserves_hypothesis(t, points, tol)?;
    let mut probe = points.to_vec();
    probe.push(center.center.clone());
    let nonexp = nonexpansive_hypothesis(t, &probe, space.kind, tol)?;
    let image = t.evaluate(&center.center)?;
    let image_enclosure = max_dist(points, &image, space.kind);
    let mut b = CertificateBuilder::new(Property::CenterInvariance, tol).samples(1);
    b.check(image_enclosure, center.radius, || {
        Witness::new(vec![center.center.clone(), image.clone()], image_enclosure, center.radius)
    });
    Ok(InvarianceReport {
        certificate: b.finish(),
        image,
        image_enclosure,
        hypotheses: vec![preserves, nonexp],
        center,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CenterFixedPoint {
    pub point: Point,
    pub center: CenterResult,
    /// `max_i ||T_i p - p||`.
    pub residual: f64,
    pub hypotheses: Vec<PropertyCertificate>,
    pub certificate: PropertyCertificate,
    /// Retraction built on the max-norm center box, when one was needed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retraction: Option<RetractionSummary>,
}

/// A common fixed point of `family` inside the center set of `A`.
///
/// Euclidean: the center is unique and is checked to be fixed by every member.
/// Max norm: a retraction onto the common fixed set is built on the center
/// box and evaluated at the box midpoint. Sum norm is not supported.
pub fn fixed_point_in_center(
    family: &[MapExpr],
    points: &[Point],
    space: &NormSpec,
    tol: f64,
    opts: &RetractionOptions,
) -> Result<CenterFixedPoint> {
    check_points(points, space)?;
    if space.kind == NormKind::Sum {
        return Err(Error::config("a fixed point in the center set is only located for the euclidean and max norms"));
    }
    let center = chebyshev_center(points, space, tol)?;
    let mut probe = points.to_vec();
    probe.push(center.center.clone());
    if let Some(b) = &center.center_box {
        probe.push(b.lo.clone());
        probe.push(b.hi.clone());
    }
    let mut hypotheses = Vec::new();
    for t in family {
        t.validate()?;
        hypotheses.push(preserves_hypothesis(t, points, tol)?);
        hypotheses.push(nonexpansive_hypothesis(t, &probe, space.kind, tol)?);
    }
    if family.len() > 1 {
        let c = commuting_on(family, &probe, space.kind, tol)?;
        if !c.is_pass() {
            return Err(Error::Hypothesis(Box::new(c)));
        }
        hypotheses.push(c);
    }

    let (point, slack, retraction) = match &center.center_box {
        None => (center.center.clone(), 0.0, None),
        Some(cb) => {
            let body = ConvexBody::cube(cb.lo.clone(), cb.hi.clone())?;
            let r = build_retraction(family, &body, space, opts)?;
            let p = r.evaluate(&center.center)?;
            (p, r.range_bound(), Some(r.summary()))
        }
    };
    let mut residual: f64 = 0.0;
    let mut b = CertificateBuilder::new(Property::FixedPointInCenter, tol).samples(family.len());
    for (i, t) in family.iter().enumerate() {
        let v = space.kind.dist(&t.evaluate(&point)?, &point);
        residual = residual.max(v);
        b.check(v, slack, || Witness::new(vec![point.clone()], v, slack).with_indices(vec![i]));
    }
    let enc = max_dist(points, &point, space.kind);
    b.check(enc, center.radius, || Witness::new(vec![point.clone()], enc, center.radius));
    Ok(CenterFixedPoint { point, center, residual, hypotheses, certificate: b.finish(), retraction })
}
