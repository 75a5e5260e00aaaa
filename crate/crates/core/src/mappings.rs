//! Self-maps of a body and certificates for their properties.
//!
//! [`MapExpr`] is a small closed expression language (affine maps, metric
//! projections, plane rotations, constants, compositions and convex
//! combinations). Anything that can be evaluated pointwise, including the
//! numerically defined retractions of the `retraction` module, implements
//! [`SelfMap`], and the sampled checks here accept any `SelfMap`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{CertificateBuilder, Property, PropertyCertificate, Witness};
use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, NormKind, NormSpec, Point, SampleStrategy};

/// Averaging weights checked by the firm nonexpansivity test when the caller
/// does not supply a grid.
pub const DEFAULT_A_GRID: [f64; 11] = [0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99];

/// Slack allowed on an operator norm before it no longer counts as `<= 1`.
const OPERATOR_NORM_SLACK: f64 = 1e-10;
const GOLDEN_TOL: f64 = 1e-9;

/// Something that can be evaluated at a point.
pub trait SelfMap: Send + Sync + fmt::Debug {
    fn apply(&self, x: &Point) -> Result<Point>;

    /// Absolute error bound of a single evaluation; zero for closed-form maps.
    fn eval_error(&self) -> f64 {
        0.0
    }

    /// Whether the map is known to be affine.
    fn is_affine(&self) -> bool {
        false
    }
}

impl<T: SelfMap + ?Sized> SelfMap for Arc<T> {
    fn apply(&self, x: &Point) -> Result<Point> {
        (**self).apply(x)
    }
    fn eval_error(&self) -> f64 {
        (**self).eval_error()
    }
    fn is_affine(&self) -> bool {
        (**self).is_affine()
    }
}

impl<T: SelfMap + ?Sized> SelfMap for &T {
    fn apply(&self, x: &Point) -> Result<Point> {
        (**self).apply(x)
    }
    fn eval_error(&self) -> f64 {
        (**self).eval_error()
    }
    fn is_affine(&self) -> bool {
        (**self).is_affine()
    }
}

/// `maps[0] o maps[1] o ... o maps[k-1]`, applied right to left.
#[derive(Debug, Clone)]
pub struct Composition(pub Vec<Arc<dyn SelfMap>>);

impl SelfMap for Composition {
    fn apply(&self, x: &Point) -> Result<Point> {
        let mut y = x.clone();
        for m in self.0.iter().rev() {
            y = m.apply(&y)?;
        }
        Ok(y)
    }

    fn eval_error(&self) -> f64 {
        // Later maps are taken to be nonexpansive, so errors add up.
        self.0.iter().map(|m| m.eval_error()).sum()
    }

    fn is_affine(&self) -> bool {
        self.0.iter().all(|m| m.is_affine())
    }
}

/// Expression tree for a self-map of a body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "map", rename_all = "camelCase")]
pub enum MapExpr {
    /// `x -> matrix * x + offset`, with `matrix` given row by row.
    Affine { matrix: Vec<Vec<f64>>, offset: Point },
    /// Euclidean metric projection onto a body.
    ProjectOnto { body: ConvexBody },
    /// Rotation by `angle` radians in the coordinate plane `(plane[0], plane[1])`.
    Rotation { plane: [usize; 2], angle: f64 },
    Constant { point: Point },
    /// Composition, applied right to left.
    Compose { of: Vec<MapExpr> },
    ConvexCombo { weights: Vec<f64>, of: Vec<MapExpr> },
    Identity,
}

impl MapExpr {
    pub fn rotation(i: usize, j: usize, angle: f64) -> Self {
        MapExpr::Rotation { plane: [i, j], angle }
    }

    pub fn project_onto(body: ConvexBody) -> Self {
        MapExpr::ProjectOnto { body }
    }

    pub fn constant(p: impl Into<Point>) -> Self {
        MapExpr::Constant { point: p.into() }
    }

    pub fn affine(matrix: Vec<Vec<f64>>, offset: impl Into<Point>) -> Result<Self> {
        let m = MapExpr::Affine { matrix, offset: offset.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn linear(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.len();
        Self::affine(matrix, Point::zeros(n))
    }

    pub fn compose(of: Vec<MapExpr>) -> Self {
        MapExpr::Compose { of }
    }

    pub fn convex_combo(weights: Vec<f64>, of: Vec<MapExpr>) -> Result<Self> {
        let m = MapExpr::ConvexCombo { weights, of };
        m.validate()?;
        Ok(m)
    }

    /// Structural validation: rectangular square matrices, ordered rotation
    /// planes, and convex weights summing to one within `1e-12`.
    pub fn validate(&self) -> Result<()> {
        match self {
            MapExpr::Affine { matrix, offset } => {
                let n = matrix.len();
                if n == 0 || offset.dim() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::input("affine map needs a square n x n matrix and an offset of length n"));
                }
                if matrix.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::input("affine matrix has a non-finite entry"));
                }
                Ok(())
            }
            MapExpr::Rotation { plane: [i, j], angle } => {
                if i >= j {
                    return Err(Error::input("rotation plane indices must satisfy i < j"));
                }
                if !angle.is_finite() {
                    return Err(Error::input("rotation angle must be finite"));
                }
                Ok(())
            }
            MapExpr::Compose { of } => of.iter().try_for_each(MapExpr::validate),
            MapExpr::ConvexCombo { weights, of } => {
                if weights.len() != of.len() || of.is_empty() {
                    return Err(Error::input("convex combination needs one weight per map"));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::input("convex combination weights must be nonnegative"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::input(format!("convex combination weights sum to {total}, not 1")));
                }
                of.iter().try_for_each(MapExpr::validate)
            }
            MapExpr::ProjectOnto { .. } | MapExpr::Constant { .. } | MapExpr::Identity => Ok(()),
        }
    }

    pub fn evaluate(&self, x: &Point) -> Result<Point> {
        match self {
            MapExpr::Identity => Ok(x.clone()),
            MapExpr::Constant { point } => {
                x.check_dim(point.dim())?;
                Ok(point.clone())
            }
            MapExpr::ProjectOnto { body } => body.project_euclidean(x),
            MapExpr::Rotation { plane: [i, j], angle } => {
                if i >= j || *j >= x.dim() {
                    return Err(Error::input(format!(
                        "rotation plane ({i}, {j}) is invalid in dimension {}",
                        x.dim()
                    )));
                }
                let (s, c) = angle.sin_cos();
                let mut y = x.clone().into_coords();
                let (a, b) = (y[*i], y[*j]);
                y[*i] = c * a - s * b;
                y[*j] = s * a + c * b;
                Ok(Point::new(y)?)
            }
            MapExpr::Affine { matrix, offset } => {
                x.check_dim(matrix.len())?;
                if matrix.iter().any(|r| r.len() != x.dim()) || offset.dim() != x.dim() {
                    return Err(Error::input("affine map shape does not match the point"));
                }
                let xs = x.coords();
                Point::new(
                    matrix
                        .iter()
                        .zip(offset.coords())
                        .map(|(row, b)| row.iter().zip(xs).map(|(m, v)| m * v).sum::<f64>() + b)
                        .collect(),
                )
            }
            MapExpr::Compose { of } => {
                let mut y = x.clone();
                for m in of.iter().rev() {
                    y = m.evaluate(&y)?;
                }
                Ok(y)
            }
            MapExpr::ConvexCombo { weights, of } => {
                self.validate()?;
                let mut acc = vec![0.0; x.dim()];
                for (w, m) in weights.iter().zip(of) {
                    let y = m.evaluate(x)?;
                    y.check_dim(x.dim())?;
                    for (a, v) in acc.iter_mut().zip(y.coords()) {
                        *a += w * v;
                    }
                }
                Point::new(acc)
            }
        }
    }

    /// The matrix of a rotation node in dimension `dim`.
    pub fn rotation_matrix(plane: [usize; 2], angle: f64, dim: usize) -> Vec<Vec<f64>> {
        let mut m = identity_matrix(dim);
        let [i, j] = plane;
        let (s, c) = angle.sin_cos();
        m[i][i] = c;
        m[i][j] = -s;
        m[j][i] = s;
        m[j][j] = c;
        m
    }

    fn affine_node(&self) -> bool {
        match self {
            MapExpr::Affine { .. } | MapExpr::Rotation { .. } | MapExpr::Constant { .. } | MapExpr::Identity => true,
            MapExpr::ProjectOnto { .. } => false,
            MapExpr::Compose { of } | MapExpr::ConvexCombo { of, .. } => of.iter().all(MapExpr::affine_node),
        }
    }
}

impl SelfMap for MapExpr {
    fn apply(&self, x: &Point) -> Result<Point> {
        self.evaluate(x)
    }

    fn is_affine(&self) -> bool {
        self.affine_node()
    }
}

pub(crate) fn identity_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

// ---------------------------------------------------------------------------
// Operator norms

/// Operator norm of a square matrix induced by `kind`.
///
/// Sum norm: largest absolute column sum. Max norm: largest absolute row sum.
/// Euclidean: the spectral norm, by power iteration on `A^T A` (relative
/// tolerance `1e-10`), short-circuited by the bound `sqrt(|A|_1 |A|_inf)`.
pub fn operator_norm(matrix: &[Vec<f64>], kind: NormKind) -> f64 {
    let n = matrix.len();
    let col_sum = (0..n).map(|j| matrix.iter().map(|r| r[j].abs()).sum::<f64>()).fold(0.0, f64::max);
    let row_sum = matrix.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    match kind {
        NormKind::Sum => col_sum,
        NormKind::Max => row_sum,
        NormKind::Euclidean => {
            let bound = (col_sum * row_sum).sqrt();
            if bound <= 1.0 {
                return bound;
            }
            spectral_norm(matrix).min(bound)
        }
    }
}

fn spectral_norm(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_749_895).fract()).collect();
    let mut lambda_prev = 0.0;
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let av: Vec<f64> = a.iter().map(|r| r.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
        let w: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[i][j] * av[i]).sum()).collect();
        lambda = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lambda == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / lambda).collect();
        if (lambda - lambda_prev).abs() <= 1e-10 * lambda {
            break;
        }
        lambda_prev = lambda;
    }
    lambda.sqrt()
}

/// A structural reason why `map` is nonexpansive in `kind`, if one exists.
pub fn analytic_nonexpansive(map: &MapExpr, kind: NormKind) -> Option<String> {
    match map {
        MapExpr::Identity => Some("identity is an isometry".into()),
        MapExpr::Constant { .. } => Some("constant maps have Lipschitz constant 0".into()),
        MapExpr::ProjectOnto { .. } => (kind == NormKind::Euclidean)
            .then(|| "euclidean metric projections onto convex sets are nonexpansive".into()),
        MapExpr::Rotation { plane, angle } => {
            if kind == NormKind::Euclidean {
                return Some("rotations are euclidean isometries".into());
            }
            let m = MapExpr::rotation_matrix(*plane, *angle, 2.max(plane[1] + 1));
            let norm = operator_norm(&m, kind);
            (norm <= 1.0 + OPERATOR_NORM_SLACK).then(|| format!("rotation operator norm {norm} <= 1"))
        }
        MapExpr::Affine { matrix, .. } => {
            let norm = operator_norm(matrix, kind);
            (norm <= 1.0 + OPERATOR_NORM_SLACK).then(|| format!("{kind} operator norm {norm} <= 1"))
        }
        MapExpr::Compose { of } => of
            .iter()
            .all(|m| analytic_nonexpansive(m, kind).is_some())
            .then(|| "composition of nonexpansive maps".into()),
        MapExpr::ConvexCombo { of, .. } => of
            .iter()
            .all(|m| analytic_nonexpansive(m, kind).is_some())
            .then(|| "convex combination of nonexpansive maps".into()),
    }
}

// ---------------------------------------------------------------------------
// Certificates

fn probe_points(body: &ConvexBody, sample_count: usize) -> Result<Vec<Point>> {
    body.sample(SampleStrategy::ExtremeFirst, sample_count, 0)
}

fn images<M: SelfMap + ?Sized>(map: &M, points: &[Point]) -> Result<Vec<Point>> {
    points.par_iter().map(|p| map.apply(p)).collect()
}

/// Checks that `map` sends every point into `body`. Nothing is clamped: an
/// image outside the body is a violation.
pub fn certify_self_map<M: SelfMap + ?Sized>(
    map: &M,
    body: &ConvexBody,
    points: &[Point],
    tol: f64,
) -> Result<PropertyCertificate> {
    let imgs = images(map, points)?;
    let mut b = CertificateBuilder::new(Property::SelfMap, tol).samples(points.len());
    for (i, (x, y)) in points.iter().zip(&imgs).enumerate() {
        if !body.contains(y, tol) {
            let gap = body.project_euclidean(y).map(|p| p.dist2(y)).unwrap_or(f64::NAN);
            b.push_witness(Witness::new(vec![x.clone(), y.clone()], gap, 0.0).with_indices(vec![i]));
        }
    }
    Ok(b.finish())
}

/// Certifies `||Tx - Ty|| <= ||x - y||` on `body`.
///
/// The self-map property is checked first on the same probe points. Then, if
/// the expression is nonexpansive by construction the verdict is
/// `certified-analytic`; otherwise every pair of `sample_count` probe points
/// is checked.
pub fn certify_nonexpansive(
    map: &MapExpr,
    body: &ConvexBody,
    space: &NormSpec,
    sample_count: usize,
    tol: f64,
) -> Result<PropertyCertificate> {
    let points = probe_points(body, sample_count)?;
    let self_map = certify_self_map(map, body, &points, tol)?;
    if !self_map.is_pass() {
        return Ok(self_map.relabel(Property::Nonexpansive, "not a self-map of the body"));
    }
    if let Some(reason) = analytic_nonexpansive(map, space.kind) {
        return Ok(PropertyCertificate::analytic(Property::Nonexpansive, tol, reason));
    }
    nonexpansive_on(map, &points, space.kind, tol)
}

/// Sampled nonexpansivity over all pairs of `points`.
pub fn nonexpansive_on<M: SelfMap + ?Sized>(
    map: &M,
    points: &[Point],
    kind: NormKind,
    tol: f64,
) -> Result<PropertyCertificate> {
    let imgs = images(map, points)?;
    let mut b = CertificateBuilder::new(Property::Nonexpansive, tol).samples(points.len());
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let measured = kind.dist(&imgs[i], &imgs[j]);
            let bound = kind.dist(&points[i], &points[j]);
            b.check(measured, bound, || {
                Witness::new(vec![points[i].clone(), points[j].clone()], measured, bound).with_indices(vec![i, j])
            });
        }
    }
    Ok(b.finish())
}

/// Certifies firm nonexpansivity in the euclidean norm:
/// `||Tx - Ty|| <= ||a(x - y) + (1 - a)(Tx - Ty)||` for every `a` in `a_grid`.
///
/// For affine maps the right-hand side is also minimized over `a` by golden
/// section, so the worst weight is checked even when it is off the grid. Each
/// failing pair is reported once, with its worst `a`.
pub fn certify_firmly_nonexpansive(
    map: &MapExpr,
    body: &ConvexBody,
    sample_count: usize,
    a_grid: &[f64],
    tol: f64,
) -> Result<PropertyCertificate> {
    let points = probe_points(body, sample_count)?;
    let self_map = certify_self_map(map, body, &points, tol)?;
    if !self_map.is_pass() {
        return Ok(self_map.relabel(Property::FirmlyNonexpansive, "not a self-map of the body"));
    }
    firmly_nonexpansive_on(map, &points, a_grid, tol)
}

pub fn firmly_nonexpansive_on<M: SelfMap + ?Sized>(
    map: &M,
    points: &[Point],
    a_grid: &[f64],
    tol: f64,
) -> Result<PropertyCertificate> {
    if a_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::input("averaging weights must lie in (0, 1)"));
    }
    let imgs = images(map, points)?;
    let affine = map.is_affine();
    let mut b = CertificateBuilder::new(Property::FirmlyNonexpansive, tol).samples(points.len());
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let dx = &points[i] - &points[j];
            let dt = &imgs[i] - &imgs[j];
            let lhs = dt.norm2();
            let rhs = |a: f64| dx.lerp(&dt, 1.0 - a).norm2();
            let mut worst_a = f64::NAN;
            let mut worst_rhs = f64::INFINITY;
            for &a in a_grid {
                let r = rhs(a);
                if r < worst_rhs {
                    worst_rhs = r;
                    worst_a = a;
                }
            }
            if affine {
                let (a, r) = golden_section_min(rhs, 0.0, 1.0, GOLDEN_TOL);
                if r < worst_rhs && a > 0.0 && a < 1.0 {
                    worst_rhs = r;
                    worst_a = a;
                }
            }
            b.check(lhs, worst_rhs, || {
                Witness::new(vec![points[i].clone(), points[j].clone()], lhs, worst_rhs)
                    .with_indices(vec![i, j])
                    .with_parameter(worst_a)
            });
        }
    }
    Ok(b.finish())
}

/// Minimizes a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Certifies `T_i T_j x = T_j T_i x` for all `i < j` on probe points of `body`.
/// Every map is first checked to be a self-map of `body`.
pub fn certify_commuting(
    maps: &[MapExpr],
    body: &ConvexBody,
    space: &NormSpec,
    sample_count: usize,
    tol: f64,
) -> Result<PropertyCertificate> {
    let points = probe_points(body, sample_count)?;
    for (k, m) in maps.iter().enumerate() {
        let c = certify_self_map(m, body, &points, tol)?;
        if !c.is_pass() {
            return Ok(c.relabel(Property::Commuting, format!("map #{k} is not a self-map of the body")));
        }
    }
    commuting_on(maps, &points, space.kind, tol)
}

pub fn commuting_on<M: SelfMap>(maps: &[M], points: &[Point], kind: NormKind, tol: f64) -> Result<PropertyCertificate> {
    let mut b = CertificateBuilder::new(Property::Commuting, tol).samples(points.len());
    for i in 0..maps.len() {
        for j in i + 1..maps.len() {
            let gaps: Vec<f64> = points
                .par_iter()
                .map(|x| {
                    let ij = maps[i].apply(&maps[j].apply(x)?)?;
                    let ji = maps[j].apply(&maps[i].apply(x)?)?;
                    Ok(kind.dist(&ij, &ji))
                })
                .collect::<Result<_>>()?;
            for (x, gap) in points.iter().zip(gaps) {
                b.check(gap, 0.0, || Witness::new(vec![x.clone()], gap, 0.0).with_indices(vec![i, j]));
            }
        }
    }
    Ok(b.finish())
}

/// Checks `T(A) = A` for a finite set `A`, up to `tol` in the euclidean norm:
/// every image is near some point of `A` and every point of `A` is near some image.
pub fn certify_preserves_set<M: SelfMap + ?Sized>(map: &M, points: &[Point], tol: f64) -> Result<PropertyCertificate> {
    let imgs = images(map, points)?;
    let nearest = |p: &Point, set: &[Point]| set.iter().map(|q| p.dist2(q)).fold(f64::INFINITY, f64::min);
    let mut b = CertificateBuilder::new(Property::PreservesSet, tol).samples(points.len());
    for (i, (x, y)) in points.iter().zip(&imgs).enumerate() {
        let d = nearest(y, points);
        b.check(d, 0.0, || Witness::new(vec![x.clone(), y.clone()], d, 0.0).with_indices(vec![i]));
    }
    for (i, a) in points.iter().enumerate() {
        let d = nearest(a, &imgs);
        b.check(d, 0.0, || Witness::new(vec![a.clone()], d, 0.0).with_indices(vec![i]));
    }
    Ok(b.finish())
}

/// Points of a regular `n`-gon on the circle of radius `r`, starting at `(r, 0)`.
pub fn regular_polygon(n: usize, r: f64) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            Point::from([r * t.cos(), r * t.sin()])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::Verdict;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn e2() -> NormSpec {
        NormSpec::euclidean(2)
    }

    fn disk() -> ConvexBody {
        ConvexBody::ball([0.0, 0.0], 1.0).unwrap()
    }

    fn x_segment(a: f64, b: f64) -> MapExpr {
        MapExpr::project_onto(ConvexBody::hull(vec![Point::from([a, 0.0]), Point::from([b, 0.0])]).unwrap())
    }

    #[test]
    fn evaluate_examples() {
        let r = MapExpr::rotation(0, 1, FRAC_PI_2).evaluate(&Point::from([1.0, 0.0])).unwrap();
        assert!(r.dist2(&Point::from([0.0, 1.0])) < 1e-15);

        let p = MapExpr::compose(vec![x_segment(0.0, 1.0)]);
        assert_eq!(p.evaluate(&Point::from([0.5, 1.0])).unwrap(), Point::from([0.5, 0.0]));

        let avg = MapExpr::convex_combo(vec![0.5, 0.5], vec![MapExpr::Identity, MapExpr::constant([0.0, 0.0])]).unwrap();
        assert_eq!(avg.evaluate(&Point::from([2.0, 4.0])).unwrap(), Point::from([1.0, 2.0]));
    }

    #[test]
    fn evaluate_errors() {
        assert!(MapExpr::rotation(0, 2, 1.0).evaluate(&Point::from([1.0, 0.0])).is_err());
        assert!(MapExpr::constant([0.0]).evaluate(&Point::from([1.0, 0.0])).is_err());
        assert!(MapExpr::convex_combo(vec![0.5, 0.6], vec![MapExpr::Identity, MapExpr::Identity]).is_err());
        assert!(MapExpr::affine(vec![vec![1.0, 0.0]], [0.0]).is_err());
    }

    #[test]
    fn compose_is_right_to_left() {
        let shift = MapExpr::affine(vec![vec![1.0]], [1.0]).unwrap();
        let double = MapExpr::linear(vec![vec![2.0]]).unwrap();
        let m = MapExpr::compose(vec![shift, double]);
        assert_eq!(m.evaluate(&Point::from([3.0])).unwrap(), Point::from([7.0]));
    }

    #[test]
    fn json_encoding() {
        let m: MapExpr =
            serde_json::from_str(r#"{"map":"rotation","plane":[0,1],"angle":1.5707963267948966}"#).unwrap();
        assert_eq!(m, MapExpr::rotation(0, 1, FRAC_PI_2));
        let c: MapExpr = serde_json::from_str(r#"{"map":"compose","of":[{"map":"identity"}]}"#).unwrap();
        assert_eq!(c, MapExpr::compose(vec![MapExpr::Identity]));
        let back: MapExpr = serde_json::from_str(&serde_json::to_string(&x_segment(0.0, 1.0)).unwrap()).unwrap();
        assert_eq!(back, x_segment(0.0, 1.0));
    }

    #[test]
    fn operator_norms() {
        let half = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        assert!((operator_norm(&half, NormKind::Euclidean) - 0.5).abs() < 1e-12);
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(operator_norm(&a, NormKind::Sum), 6.0);
        assert_eq!(operator_norm(&a, NormKind::Max), 7.0);
        // Largest singular value of [[1,2],[3,4]].
        let sigma = ((15.0 + 221f64.sqrt()) / 1.0).sqrt();
        assert!((operator_norm(&a, NormKind::Euclidean) - sigma).abs() < 1e-6);
        let rot = MapExpr::rotation_matrix([0, 1], 0.7, 2);
        assert!((operator_norm(&rot, NormKind::Euclidean) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nonexpansive_examples() {
        let sq = ConvexBody::cube([0.0, 0.0], [1.0, 1.0]).unwrap();
        let half = MapExpr::linear(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        let c = certify_nonexpansive(&half, &sq, &e2(), 20, 1e-9).unwrap();
        assert_eq!(c.verdict, Verdict::CertifiedAnalytic);

        let big = ConvexBody::ball([0.0, 0.0], 10.0).unwrap();
        let small = ConvexBody::ball([0.0, 0.0], 1.0).unwrap();
        let double = MapExpr::linear(vec![vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let c = certify_nonexpansive(&double, &small, &e2(), 20, 1e-9).unwrap();
        // Leaves the unit disk before any distance is compared.
        assert_eq!(c.verdict, Verdict::Fail);
        assert_eq!(c.note.as_deref(), Some("not a self-map of the body"));
        let c = nonexpansive_on(&double, &big.sample(SampleStrategy::ExtremeFirst, 10, 0).unwrap(), NormKind::Euclidean, 1e-9)
            .unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
        let w = &c.witnesses[0];
        assert!((w.measured - 2.0 * w.bound).abs() < 1e-12);

        for body in [sq.clone(), disk()] {
            let p = MapExpr::project_onto(ConvexBody::hull(vec![Point::from([0.0, 0.0]), Point::from([1.0, 0.0])]).unwrap());
            let c = certify_nonexpansive(&p, &body, &e2(), 30, 1e-9).unwrap();
            assert_eq!(c.verdict, Verdict::CertifiedAnalytic);
            // Backing oracle for the closure rule.
            let pts = body.sample(SampleStrategy::ExtremeFirst, 30, 0).unwrap();
            assert!(nonexpansive_on(&p, &pts, NormKind::Euclidean, 1e-9).unwrap().is_pass());
        }
    }

    #[test]
    fn non_euclidean_rotation_falls_back_to_sampling() {
        let max2 = NormSpec::new(NormKind::Max, 2).unwrap();
        let quarter = MapExpr::rotation(0, 1, FRAC_PI_2);
        let c = certify_nonexpansive(&quarter, &disk(), &max2, 20, 1e-9).unwrap();
        assert_eq!(c.verdict, Verdict::CertifiedAnalytic);
        let eighth = MapExpr::rotation(0, 1, PI / 4.0);
        let c = certify_nonexpansive(&eighth, &disk(), &max2, 40, 1e-9).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
    }

    #[test]
    fn firm_examples() {
        let grid = DEFAULT_A_GRID;
        let c = certify_firmly_nonexpansive(&MapExpr::Identity, &disk(), 20, &grid, 1e-9).unwrap();
        assert_eq!(c.verdict, Verdict::PassSampled);

        let sq = ConvexBody::cube([0.0, 0.0], [1.0, 1.0]).unwrap();
        let c = certify_firmly_nonexpansive(&x_segment(0.0, 1.0), &sq, 30, &grid, 1e-9).unwrap();
        assert_eq!(c.verdict, Verdict::PassSampled);

        let c = certify_firmly_nonexpansive(&MapExpr::rotation(0, 1, PI), &disk(), 20, &grid, 1e-9).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
        let w = &c.witnesses[0];
        assert_eq!(w.inputs[0], Point::from([1.0, 0.0]));
        assert_eq!(w.inputs[1], Point::from([-1.0, 0.0]));
        assert_eq!(w.parameter, Some(0.5));
        // Hand evaluation: left side 2, right side |4a - 2| = 0 at a = 1/2.
        assert!((w.measured - 2.0).abs() < 1e-12);
        assert!(w.bound < 1e-12);
    }

    #[test]
    fn golden_section_finds_off_grid_weight() {
        // Rotation by 2pi/3: the right side is minimized at a = 0.5, but a
        // grid without 0.5 only sees the neighbouring weights.
        let rot = MapExpr::rotation(0, 1, 2.0 * PI / 3.0);
        let pts = vec![Point::from([1.0, 0.0]), Point::from([-1.0, 0.0])];
        let c = firmly_nonexpansive_on(&rot, &pts, &[0.3, 0.8], 1e-12).unwrap();
        let a = c.witnesses[0].parameter.unwrap();
        assert!((a - 0.5).abs() < 1e-6, "{a}");
    }

    #[test]
    fn commuting_examples() {
        let d = disk();
        let rots = [MapExpr::rotation(0, 1, 0.3), MapExpr::rotation(0, 1, 1.1)];
        assert!(certify_commuting(&rots, &d, &e2(), 30, 1e-9).unwrap().is_pass());

        let p = x_segment(-1.0, 1.0);
        assert!(certify_commuting(&[p.clone(), MapExpr::rotation(0, 1, PI)], &d, &e2(), 30, 1e-9).unwrap().is_pass());

        let c = certify_commuting(&[p, MapExpr::rotation(0, 1, FRAC_PI_2)], &d, &e2(), 30, 1e-9).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
        // PT(1,0) = P(0,1) = (0,0) while TP(1,0) = (0,1).
        let w = c.witnesses.iter().find(|w| w.inputs[0] == Point::from([1.0, 0.0])).unwrap();
        assert!((w.measured - 1.0).abs() < 1e-12);
        assert_eq!(w.indices, vec![0, 1]);
    }

    #[test]
    fn preserves_set_examples() {
        let tri = regular_polygon(3, 1.0);
        assert!(certify_preserves_set(&MapExpr::rotation(0, 1, 2.0 * PI / 3.0), &tri, 1e-9).unwrap().is_pass());
        let two = vec![Point::from([0.0, 0.0]), Point::from([1.0, 0.0])];
        let c = certify_preserves_set(&MapExpr::constant([0.0, 0.0]), &two, 1e-9).unwrap();
        assert_eq!(c.verdict, Verdict::Fail);
        assert!(certify_preserves_set(&MapExpr::Identity, &tri, 0.0).unwrap().is_pass());
    }

    fn arb_linear() -> impl Strategy<Value = MapExpr> {
        prop::collection::vec(-1.2f64..1.2, 4)
            .prop_map(|v| MapExpr::linear(vec![vec![v[0], v[1]], vec![v[2], v[3]]]).unwrap())
    }

    fn arb_map() -> impl Strategy<Value = MapExpr> {
        let leaf = prop_oneof![
            arb_linear(),
            (0.0f64..6.3).prop_map(|t| MapExpr::rotation(0, 1, t)),
            Just(MapExpr::Identity),
            (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| MapExpr::constant([a, b])),
            Just(x_segment(-1.0, 1.0)),
            Just(MapExpr::project_onto(ConvexBody::ball([0.3, 0.1], 0.5).unwrap())),
        ];
        leaf.prop_recursive(2, 8, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..3).prop_map(MapExpr::compose),
                (inner.clone(), inner, 0.0f64..1.0)
                    .prop_map(|(a, b, w)| MapExpr::convex_combo(vec![w, 1.0 - w], vec![a, b]).unwrap()),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn analytic_certificates_survive_sampling(m in arb_map()) {
            // 32 points give 496 pairs.
            let pts = ConvexBody::ball([0.0, 0.0], 3.0).unwrap().sample(SampleStrategy::Random, 32, 3).unwrap();
            if analytic_nonexpansive(&m, NormKind::Euclidean).is_some() {
                prop_assert!(nonexpansive_on(&m, &pts, NormKind::Euclidean, 1e-9).unwrap().is_pass());
            }
        }

        #[test]
        fn firm_implies_nonexpansive(m in arb_map()) {
            let pts = ConvexBody::ball([0.0, 0.0], 2.0).unwrap().sample(SampleStrategy::Random, 16, 5).unwrap();
            let tol = 1e-9;
            if firmly_nonexpansive_on(&m, &pts, &DEFAULT_A_GRID, tol).unwrap().is_pass() {
                // The a = 0.01 grid point bounds ||Tx - Ty|| - ||x - y|| by 100 tol.
                prop_assert!(nonexpansive_on(&m, &pts, NormKind::Euclidean, 100.0 * tol).unwrap().is_pass());
            }
        }

        #[test]
        fn commuting_verdict_is_order_invariant(a in arb_map(), b in arb_map(), c in arb_map()) {
            let pts = ConvexBody::ball([0.0, 0.0], 1.0).unwrap().sample(SampleStrategy::ExtremeFirst, 12, 0).unwrap();
            let fwd = commuting_on(&[a.clone(), b.clone(), c.clone()], &pts, NormKind::Euclidean, 1e-9).unwrap();
            let rev = commuting_on(&[c, a, b], &pts, NormKind::Euclidean, 1e-9).unwrap();
            prop_assert_eq!(fwd.verdict, rev.verdict);
        }
    }
}
