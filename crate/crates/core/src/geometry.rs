//! Norms, compact convex bodies, Euclidean metric projections, diameters and
//! probe sampling.
//!
//! Bodies are immutable once built. Construction validates nonemptiness and
//! boundedness, so every `ConvexBody` in circulation is compact.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for geometric identities.
pub const GEOMETRIC_TOL: f64 = 1e-9;
/// Default absolute tolerance for algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-12;

const DYKSTRA_MAX_CYCLES: usize = 10_000;
const DYKSTRA_TOL: f64 = 1e-10;
const FRANK_WOLFE_MAX_ITER: usize = 200_000;
const FRANK_WOLFE_GAP: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Points

/// A point of `R^n` with finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    /// Builds a point, rejecting NaN and infinite coordinates.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("point has a non-finite coordinate"));
        }
        Ok(Point(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Point(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Point) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist2(&self, other: &Point) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, s: f64) -> Point {
        Point(self.0.iter().map(|a| a * s).collect())
    }

    /// `(1 - t) * self + t * other`
    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        Point(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect(),
        )
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::input(format!(
                "dimension mismatch: point has {} coordinates, expected {dim}",
                self.dim()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(a: [f64; N]) -> Self {
        Point(a.to_vec())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Sub for &Point {
    type Output = Point;
    fn sub(self, rhs: &Point) -> Point {
        Point(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Add for &Point {
    type Output = Point;
    fn add(self, rhs: &Point) -> Point {
        Point(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Mul<f64> for &Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        self.scale(s)
    }
}

// ---------------------------------------------------------------------------
// Norms

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Euclidean,
    Sum,
    Max,
}

impl NormKind {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormKind::Euclidean => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
            NormKind::Sum => v.iter().map(|a| a.abs()).sum(),
            NormKind::Max => v.iter().fold(0.0, |m, a| m.max(a.abs())),
        }
    }

    pub fn dist(self, a: &Point, b: &Point) -> f64 {
        match self {
            NormKind::Euclidean => a.dist2(b),
            NormKind::Sum => a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).sum(),
            NormKind::Max => a.0.iter().zip(&b.0).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }

    /// `max ||u||` over Euclidean unit vectors `u` of `R^dim`.
    fn euclidean_unit_sup(self, dim: usize) -> f64 {
        match self {
            NormKind::Euclidean | NormKind::Max => 1.0,
            NormKind::Sum => (dim as f64).sqrt(),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::Euclidean => "euclidean",
            NormKind::Sum => "sum",
            NormKind::Max => "max",
        })
    }
}

/// The normed space `(R^dimension, ||.||_kind)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNormSpec")]
pub struct NormSpec {
    pub kind: NormKind,
    pub dimension: usize,
}

#[derive(Deserialize)]
struct RawNormSpec {
    kind: NormKind,
    dimension: usize,
}

impl TryFrom<RawNormSpec> for NormSpec {
    type Error = Error;
    fn try_from(r: RawNormSpec) -> Result<Self> {
        NormSpec::new(r.kind, r.dimension)
    }
}

impl NormSpec {
    pub fn new(kind: NormKind, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::input("space dimension must be at least 1"));
        }
        Ok(Self { kind, dimension })
    }

    pub fn euclidean(dimension: usize) -> Self {
        Self::new(NormKind::Euclidean, dimension).expect("dimension >= 1")
    }

    pub fn norm(&self, x: &Point) -> Result<f64> {
        x.check_dim(self.dimension)?;
        Ok(self.kind.norm(x.coords()))
    }

    pub fn dist(&self, a: &Point, b: &Point) -> Result<f64> {
        a.check_dim(self.dimension)?;
        b.check_dim(self.dimension)?;
        Ok(self.kind.dist(a, b))
    }
}

// ---------------------------------------------------------------------------
// Bodies

/// The closed halfspace `normal . x <= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Point,
    pub offset: f64,
}

impl Halfspace {
    fn violation(&self, x: &Point) -> f64 {
        (self.normal.dot(x) - self.offset) / self.normal.norm2()
    }

    fn project(&self, x: &Point) -> Point {
        let excess = self.normal.dot(x) - self.offset;
        if excess <= 0.0 {
            x.clone()
        } else {
            let nn = self.normal.dot(&self.normal);
            x - &(&self.normal * (excess / nn))
        }
    }
}

/// Shape description as it appears in scenario files.
///
/// A `ball` is always a Euclidean ball, whatever norm the surrounding space uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Ball { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
    Polytope { halfspaces: Vec<Halfspace> },
    Hull { vertices: Vec<Point> },
}

/// A nonempty compact convex subset of `R^n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Shape", into = "Shape")]
pub struct ConvexBody {
    shape: Shape,
    dim: usize,
    bbox_lo: Point,
    bbox_hi: Point,
    extremes: Vec<Point>,
    anchor: Point,
    polytope_vertices_exact: bool,
}

impl PartialEq for ConvexBody {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
    }
}

impl TryFrom<Shape> for ConvexBody {
    type Error = Error;
    fn try_from(shape: Shape) -> Result<Self> {
        ConvexBody::new(shape)
    }
}

impl From<ConvexBody> for Shape {
    fn from(b: ConvexBody) -> Self {
        b.shape
    }
}

/// Result of [`ConvexBody::diameter`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diameter {
    pub value: f64,
    /// False when `value` is only an upper bound.
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "camelCase")]
pub enum SampleStrategy {
    /// Extreme points first, then a Halton fill projected into the body.
    #[default]
    ExtremeFirst,
    /// Uniform points in the bounding box, projected into the body.
    Random,
}

impl ConvexBody {
    pub fn new(shape: Shape) -> Result<Self> {
        match shape {
            Shape::Ball { center, radius } => {
                if !(radius >= 0.0) || !radius.is_finite() {
                    return Err(Error::input("ball radius must be a finite nonnegative number"));
                }
                let dim = nonzero_dim(center.dim())?;
                let lo = Point(center.0.iter().map(|c| c - radius).collect());
                let hi = Point(center.0.iter().map(|c| c + radius).collect());
                let mut extremes = Vec::with_capacity(2 * dim + 1);
                for i in 0..dim {
                    let mut p = center.clone();
                    p.0[i] += radius;
                    extremes.push(p);
                    let mut p = center.clone();
                    p.0[i] -= radius;
                    extremes.push(p);
                }
                extremes.push(center.clone());
                Ok(Self {
                    anchor: center.clone(),
                    shape: Shape::Ball { center, radius },
                    dim,
                    bbox_lo: lo,
                    bbox_hi: hi,
                    extremes,
                    polytope_vertices_exact: false,
                })
            }
            Shape::Box { lo, hi } => {
                let dim = nonzero_dim(lo.dim())?;
                hi.check_dim(dim)?;
                if lo.0.iter().zip(&hi.0).any(|(l, h)| l > h) {
                    return Err(Error::input("box requires lo <= hi componentwise"));
                }
                // Corners in binary order: bit i set selects hi[i]. Capped so
                // high-dimensional boxes do not enumerate 2^n points.
                let ncorners = if dim < 12 { 1usize << dim } else { 4096 };
                let extremes = (0..ncorners)
                    .map(|mask| {
                        Point(
                            (0..dim)
                                .map(|i| if mask >> i & 1 == 1 { hi.0[i] } else { lo.0[i] })
                                .collect(),
                        )
                    })
                    .collect();
                Ok(Self {
                    anchor: lo.lerp(&hi, 0.5),
                    bbox_lo: lo.clone(),
                    bbox_hi: hi.clone(),
                    shape: Shape::Box { lo, hi },
                    dim,
                    extremes,
                    polytope_vertices_exact: false,
                })
            }
            Shape::Hull { vertices } => {
                let first = vertices
                    .first()
                    .ok_or_else(|| Error::input("hull needs at least one vertex"))?;
                let dim = nonzero_dim(first.dim())?;
                for v in &vertices {
                    v.check_dim(dim)?;
                }
                let (lo, hi) = bounding_box(&vertices);
                let anchor = centroid(&vertices);
                Ok(Self {
                    extremes: vertices.clone(),
                    shape: Shape::Hull { vertices },
                    dim,
                    bbox_lo: lo,
                    bbox_hi: hi,
                    anchor,
                    polytope_vertices_exact: false,
                })
            }
            Shape::Polytope { halfspaces } => Self::new_polytope(halfspaces),
        }
    }

    fn new_polytope(halfspaces: Vec<Halfspace>) -> Result<Self> {
        let first = halfspaces
            .first()
            .ok_or_else(|| Error::input("polytope needs at least one halfspace"))?;
        let dim = nonzero_dim(first.normal.dim())?;
        for h in &halfspaces {
            h.normal.check_dim(dim)?;
            if h.normal.norm2() == 0.0 || !h.offset.is_finite() {
                return Err(Error::input("halfspace normals must be nonzero with finite offsets"));
            }
        }
        // Bounding box by maximizing and minimizing each coordinate. Either
        // direction being unbounded means the set is not compact.
        let mut lo = vec![0.0; dim];
        let mut hi = vec![0.0; dim];
        let mut lp_points = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            for (dir, maximize) in [(OptimizationDirection::Maximize, true), (OptimizationDirection::Minimize, false)] {
                let mut problem = Problem::new(dir);
                let vars: Vec<_> = (0..dim)
                    .map(|j| problem.add_var(if i == j { 1.0 } else { 0.0 }, (f64::NEG_INFINITY, f64::INFINITY)))
                    .collect();
                for h in &halfspaces {
                    let expr: Vec<_> = vars.iter().copied().zip(h.normal.0.iter().copied()).collect();
                    problem.add_constraint(expr.as_slice(), ComparisonOp::Le, h.offset);
                }
                match problem.solve() {
                    Ok(sol) => {
                        let p = Point(vars.iter().map(|v| sol[*v]).collect());
                        if maximize {
                            hi[i] = p.0[i];
                        } else {
                            lo[i] = p.0[i];
                        }
                        lp_points.push(p);
                    }
                    Err(minilp::Error::Infeasible) => {
                        return Err(Error::input("polytope is empty (infeasible halfspace system)"))
                    }
                    Err(minilp::Error::Unbounded) => {
                        return Err(Error::input(format!("polytope is unbounded along coordinate {i}")))
                    }
                }
            }
        }
        let anchor = centroid(&lp_points);
        let (extremes, exact) = if dim <= 3 {
            (enumerate_vertices(&halfspaces, dim), true)
        } else {
            (lp_points, false)
        };
        Ok(Self {
            shape: Shape::Polytope { halfspaces },
            dim,
            bbox_lo: Point(lo),
            bbox_hi: Point(hi),
            extremes,
            anchor,
            polytope_vertices_exact: exact,
        })
    }

    pub fn ball(center: impl Into<Point>, radius: f64) -> Result<Self> {
        Self::new(Shape::Ball { center: center.into(), radius })
    }

    pub fn cube(lo: impl Into<Point>, hi: impl Into<Point>) -> Result<Self> {
        Self::new(Shape::Box { lo: lo.into(), hi: hi.into() })
    }

    pub fn hull(vertices: Vec<Point>) -> Result<Self> {
        Self::new(Shape::Hull { vertices })
    }

    pub fn polytope(halfspaces: Vec<Halfspace>) -> Result<Self> {
        Self::new(Shape::Polytope { halfspaces })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest axis-aligned box containing the body.
    pub fn bounding_box(&self) -> (&Point, &Point) {
        (&self.bbox_lo, &self.bbox_hi)
    }

    /// A point of the body (center, centroid of vertices, or an average of LP vertices).
    pub fn anchor(&self) -> &Point {
        &self.anchor
    }

    /// Extreme points used to seed sampling: corners, vertices, or `center +- r e_i`
    /// followed by the center for balls.
    pub fn extreme_points(&self) -> &[Point] {
        &self.extremes
    }

    pub fn contains(&self, x: &Point, tol: f64) -> bool {
        if x.dim() != self.dim {
            return false;
        }
        match &self.shape {
            Shape::Ball { center, radius } => x.dist2(center) <= radius + tol,
            Shape::Box { lo, hi } => x
                .0
                .iter()
                .zip(lo.0.iter().zip(&hi.0))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            Shape::Polytope { halfspaces } => halfspaces.iter().all(|h| h.violation(x) <= tol),
            Shape::Hull { vertices } => match project_hull(vertices, x) {
                Ok(p) => p.dist2(x) <= tol,
                Err(_) => false,
            },
        }
    }

    /// Euclidean metric projection onto the body.
    ///
    /// Polytope and hull projections are only defined for the Euclidean norm;
    /// asking for them in another norm is a configuration error.
    pub fn project(&self, x: &Point, space: &NormSpec) -> Result<Point> {
        x.check_dim(self.dim)?;
        if space.kind != NormKind::Euclidean
            && matches!(self.shape, Shape::Polytope { .. } | Shape::Hull { .. })
        {
            return Err(Error::config(format!(
                "metric projection onto a polytope or hull is only provided for the euclidean norm, not {}",
                space.kind
            )));
        }
        self.project_euclidean(x)
    }

    pub(crate) fn project_euclidean(&self, x: &Point) -> Result<Point> {
        x.check_dim(self.dim)?;
        match &self.shape {
            Shape::Ball { center, radius } => {
                let d = x.dist2(center);
                if d <= *radius {
                    Ok(x.clone())
                } else {
                    Ok(center.lerp(x, radius / d))
                }
            }
            Shape::Box { lo, hi } => Ok(Point(
                x.0.iter()
                    .zip(lo.0.iter().zip(&hi.0))
                    .map(|(v, (l, h))| v.clamp(*l, *h))
                    .collect(),
            )),
            Shape::Polytope { halfspaces } => {
                if halfspaces.iter().all(|h| h.violation(x) <= 0.0) {
                    Ok(x.clone())
                } else {
                    dykstra(halfspaces, x)
                }
            }
            Shape::Hull { vertices } => project_hull(vertices, x),
        }
    }

    pub fn diameter(&self, space: &NormSpec) -> Diameter {
        let kind = space.kind;
        match &self.shape {
            Shape::Ball { radius, .. } => Diameter {
                value: 2.0 * radius * kind.euclidean_unit_sup(self.dim),
                exact: true,
            },
            Shape::Box { lo, hi } => Diameter {
                value: kind.dist(lo, hi),
                exact: true,
            },
            Shape::Hull { vertices } => Diameter {
                value: max_pairwise(vertices, kind),
                exact: true,
            },
            Shape::Polytope { .. } => {
                if self.polytope_vertices_exact {
                    Diameter {
                        value: max_pairwise(&self.extremes, kind),
                        exact: true,
                    }
                } else {
                    Diameter {
                        value: kind.dist(&self.bbox_lo, &self.bbox_hi),
                        exact: false,
                    }
                }
            }
        }
    }

    /// Deterministic probe points inside the body.
    ///
    /// `ExtremeFirst` returns the extreme points first and then a Halton
    /// sequence over the bounding box, projected into the body; `seed` offsets
    /// the Halton index. `Random` draws uniformly from the bounding box with a
    /// seeded generator and projects.
    pub fn sample(&self, strategy: SampleStrategy, count: usize, seed: u64) -> Result<Vec<Point>> {
        if count == 0 {
            return Err(Error::input("sample count must be at least 1"));
        }
        let mut out = Vec::with_capacity(count);
        let lo = &self.bbox_lo;
        let hi = &self.bbox_hi;
        match strategy {
            SampleStrategy::ExtremeFirst => {
                out.extend(self.extremes.iter().take(count).cloned());
                let mut index = 1 + seed;
                while out.len() < count {
                    let q = Point(
                        (0..self.dim)
                            .map(|i| lo.0[i] + halton(index, PRIMES[i % PRIMES.len()]) * (hi.0[i] - lo.0[i]))
                            .collect(),
                    );
                    out.push(self.project_euclidean(&q)?);
                    index += 1;
                }
            }
            SampleStrategy::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                while out.len() < count {
                    let q = Point(
                        (0..self.dim)
                            .map(|i| lo.0[i] + rng.random::<f64>() * (hi.0[i] - lo.0[i]))
                            .collect(),
                    );
                    out.push(self.project_euclidean(&q)?);
                }
            }
        }
        Ok(out)
    }
}

fn nonzero_dim(d: usize) -> Result<usize> {
    if d == 0 {
        Err(Error::input("body dimension must be at least 1"))
    } else {
        Ok(d)
    }
}

pub(crate) fn centroid(points: &[Point]) -> Point {
    let d = points[0].dim();
    let mut c = vec![0.0; d];
    for p in points {
        for (ci, pi) in c.iter_mut().zip(&p.0) {
            *ci += pi;
        }
    }
    let n = points.len() as f64;
    Point(c.into_iter().map(|v| v / n).collect())
}

pub(crate) fn bounding_box(points: &[Point]) -> (Point, Point) {
    let d = points[0].dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for i in 0..d {
            lo[i] = lo[i].min(p.0[i]);
            hi[i] = hi[i].max(p.0[i]);
        }
    }
    (Point(lo), Point(hi))
}

fn max_pairwise(points: &[Point], kind: NormKind) -> f64 {
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max(kind.dist(p, q));
        }
    }
    best
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while index > 0 {
        f /= b;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Calls `f` with every `k`-subset of `0..n` in lexicographic order.
pub(crate) fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k == 0 || k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Solves the square system `a x = b` when `a` is well conditioned.
pub(crate) fn solve_well_conditioned(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if max == 0.0 || min <= 1e-12 * max {
        return None;
    }
    svd.solve(&b, 0.0).ok()
}

fn enumerate_vertices(halfspaces: &[Halfspace], dim: usize) -> Vec<Point> {
    let mut verts: Vec<Point> = Vec::new();
    for_each_combination(halfspaces.len(), dim, |idx| {
        let a = DMatrix::from_fn(dim, dim, |r, c| halfspaces[idx[r]].normal.0[c]);
        let b = DVector::from_fn(dim, |r, _| halfspaces[idx[r]].offset);
        if let Some(x) = solve_well_conditioned(a, b) {
            let p = Point(x.iter().copied().collect());
            if halfspaces.iter().all(|h| h.violation(&p) <= 1e-9)
                && !verts.iter().any(|v| v.dist2(&p) <= 1e-9)
            {
                verts.push(p);
            }
        }
    });
    verts
}

fn dykstra(halfspaces: &[Halfspace], x0: &Point) -> Result<Point> {
    let mut x = x0.clone();
    let mut increments = vec![Point::zeros(x0.dim()); halfspaces.len()];
    let mut change = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_CYCLES {
        let start = x.clone();
        for (h, inc) in halfspaces.iter().zip(increments.iter_mut()) {
            let y = &x + inc;
            let p = h.project(&y);
            *inc = &y - &p;
            x = p;
        }
        change = x.dist2(&start);
        let violation = halfspaces.iter().map(|h| h.violation(&x)).fold(f64::NEG_INFINITY, f64::max);
        if change <= DYKSTRA_TOL && violation <= DYKSTRA_TOL {
            return Ok(x);
        }
    }
    Err(Error::Solver {
        message: format!("Dykstra projection did not converge in {DYKSTRA_MAX_CYCLES} cycles"),
        trace: vec![change],
    })
}

/// Euclidean projection onto the convex hull of `vertices`.
///
/// Up to dimension 3 this enumerates every affinely independent vertex subset
/// of size at most `d + 1`, projects onto its affine hull, and keeps the
/// nearest candidate with nonnegative barycentric coordinates. The nearest
/// point of the hull lies in the relative interior of one such simplex, so the
/// enumeration is exact. Higher dimensions use pairwise Frank-Wolfe.
pub(crate) fn project_hull(vertices: &[Point], x: &Point) -> Result<Point> {
    x.check_dim(vertices[0].dim())?;
    let dim = x.dim();
    if vertices.len() == 1 {
        return Ok(vertices[0].clone());
    }
    if dim > 3 {
        return frank_wolfe_hull(vertices, x);
    }
    let mut best: Option<(f64, Point)> = None;
    for k in 1..=(dim + 1).min(vertices.len()) {
        for_each_combination(vertices.len(), k, |idx| {
            if let Some(p) = project_simplex_face(vertices, idx, x) {
                let d = p.dist2(x);
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, p));
                }
            }
        });
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Solver { message: "hull projection found no candidate face".into(), trace: vec![] })
}

/// Projection of `x` onto the affine hull of the chosen vertices, if the
/// vertices are affinely independent and the projection lies in their simplex.
fn project_simplex_face(vertices: &[Point], idx: &[usize], x: &Point) -> Option<Point> {
    let v0 = &vertices[idx[0]];
    if idx.len() == 1 {
        return Some(v0.clone());
    }
    let k = idx.len() - 1;
    let dirs: Vec<Point> = idx[1..].iter().map(|&i| &vertices[i] - v0).collect();
    let gram = DMatrix::from_fn(k, k, |r, c| dirs[r].dot(&dirs[c]));
    let rel = x - v0;
    let rhs = DVector::from_fn(k, |r, _| dirs[r].dot(&rel));
    let mu = solve_well_conditioned(gram, rhs)?;
    let lambda0 = 1.0 - mu.sum();
    if lambda0 < -1e-12 || mu.iter().any(|m| *m < -1e-12) {
        return None;
    }
    let mut p = v0.clone();
    for (d, m) in dirs.iter().zip(mu.iter()) {
        for (pi, di) in p.0.iter_mut().zip(&d.0) {
            *pi += m * di;
        }
    }
    Some(p)
}

fn frank_wolfe_hull(vertices: &[Point], x: &Point) -> Result<Point> {
    let m = vertices.len();
    // Start from the nearest vertex.
    let start = (0..m)
        .min_by(|&a, &b| vertices[a].dist2(x).total_cmp(&vertices[b].dist2(x)))
        .unwrap_or(0);
    let mut weights = vec![0.0; m];
    weights[start] = 1.0;
    let mut p = vertices[start].clone();
    let mut gap = f64::INFINITY;
    for _ in 0..FRANK_WOLFE_MAX_ITER {
        let residual = &p - x;
        let grads: Vec<f64> = vertices.iter().map(|v| v.dot(&residual)).collect();
        let fw = (0..m).min_by(|&a, &b| grads[a].total_cmp(&grads[b])).unwrap_or(0);
        let away = (0..m)
            .filter(|&i| weights[i] > 0.0)
            .max_by(|&a, &b| grads[a].total_cmp(&grads[b]))
            .unwrap_or(fw);
        gap = residual.dot(&p) - grads[fw];
        if gap <= FRANK_WOLFE_GAP {
            return Ok(p);
        }
        let dir = &vertices[fw] - &vertices[away];
        let dd = dir.dot(&dir);
        if dd == 0.0 {
            return Ok(p);
        }
        let step = (-residual.dot(&dir) / dd).clamp(0.0, weights[away]);
        weights[fw] += step;
        weights[away] -= step;
        p = &p + &(&dir * step);
    }
    Err(Error::Solver {
        message: format!("Frank-Wolfe hull projection stopped with gap {gap:e}"),
        trace: vec![gap],
    })
}
