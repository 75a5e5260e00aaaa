//! Exact enumeration on finite metric spaces.
//!
//! A [`FiniteSystem`] is a distance matrix together with named self-maps
//! given as index tables. Everything here is decided by enumeration: eventual
//! cores (iterated common images), semigroup closures, the gamma set (points
//! at which every pair of semigroup elements commutes) and isometry checks.
//!
//! A run whose hypotheses hold but whose guaranteed conclusion fails is
//! reported as a [`Falsification`] with a bundle that reproduces it. Those
//! conclusions are theorems, so a falsification means a bug here.

use std::collections::{HashMap, HashSet, VecDeque};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::certificate::{CertificateBuilder, Property, PropertyCertificate, Witness};
use crate::error::{Error, Result};
use crate::geometry::{centroid, NormKind, NormSpec, Point};
use crate::mappings::MapExpr;
use crate::retraction::RetractionOptions;
use crate::tchebyshev::{fixed_point_in_center, CenterFixedPoint};

/// Default cap on the number of semigroup elements.
pub const DEFAULT_MAX_ELEMENTS: usize = 1_000_000;
/// Distance tolerance when some entry is not an integer.
pub const FLOAT_DISTANCE_TOL: f64 = 1e-12;
/// Largest integer below which `f64` arithmetic on distances is exact.
const EXACT_INTEGER_LIMIT: f64 = 4_503_599_627_370_496.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawFiniteSystem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    distance: Option<Vec<Vec<f64>>>,
    maps: IndexMap<String, Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<Point>>,
}

/// A finite metric space with named self-maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFiniteSystem", into = "RawFiniteSystem")]
pub struct FiniteSystem {
    distance: Vec<Vec<f64>>,
    maps: IndexMap<String, Vec<usize>>,
    embedding: Option<Vec<Point>>,
    tolerance: f64,
}

impl TryFrom<RawFiniteSystem> for FiniteSystem {
    type Error = Error;
    fn try_from(raw: RawFiniteSystem) -> Result<Self> {
        let distance = match (raw.distance, &raw.embedding) {
            (Some(d), _) => d,
            (None, Some(emb)) => emb.iter().map(|a| emb.iter().map(|b| a.dist2(b)).collect()).collect(),
            (None, None) => return Err(Error::input("finite system needs a distance matrix or an embedding")),
        };
        FiniteSystem::new(distance, raw.maps, raw.embedding)
    }
}

impl From<FiniteSystem> for RawFiniteSystem {
    fn from(s: FiniteSystem) -> Self {
        RawFiniteSystem { distance: Some(s.distance), maps: s.maps, embedding: s.embedding }
    }
}

/// A certified-hypothesis run that contradicts a guaranteed conclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Falsification {
    pub theorem: String,
    pub detail: String,
    /// Everything needed to reproduce the event.
    pub bundle: serde_json::Value,
}

impl FiniteSystem {
    /// Validates the metric axioms over all pairs and triples. Integer
    /// distances are compared exactly; otherwise with [`FLOAT_DISTANCE_TOL`].
    pub fn new(distance: Vec<Vec<f64>>, maps: IndexMap<String, Vec<usize>>, embedding: Option<Vec<Point>>) -> Result<Self> {
        let n = distance.len();
        if n == 0 {
            return Err(Error::input("finite system must have at least one point"));
        }
        if distance.iter().any(|row| row.len() != n) {
            return Err(Error::input("distance matrix must be square"));
        }
        if distance.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("distances must be finite"));
        }
        let integral = distance.iter().flatten().all(|v| v.fract() == 0.0 && v.abs() < EXACT_INTEGER_LIMIT);
        let tol = if integral { 0.0 } else { FLOAT_DISTANCE_TOL };
        for i in 0..n {
            if distance[i][i] != 0.0 {
                return Err(Error::input(format!("distance[{i}][{i}] must be 0")));
            }
            for j in 0..n {
                if (distance[i][j] - distance[j][i]).abs() > tol {
                    return Err(Error::input(format!("distance matrix is not symmetric at ({i}, {j})")));
                }
                if i != j && !(distance[i][j] > 0.0) {
                    return Err(Error::input(format!("distinct points {i} and {j} must be at positive distance")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if distance[i][k] > distance[i][j] + distance[j][k] + tol {
                        return Err(Error::input(format!("triangle inequality fails for ({i}, {j}, {k})")));
                    }
                }
            }
        }
        for (name, table) in &maps {
            if table.len() != n {
                return Err(Error::input(format!("map {name} has {} entries, expected {n}", table.len())));
            }
            if let Some(bad) = table.iter().find(|&&v| v >= n) {
                return Err(Error::input(format!("map {name} has out-of-range index {bad}")));
            }
        }
        if let Some(emb) = &embedding {
            if emb.len() != n {
                return Err(Error::input(format!("embedding has {} points, expected {n}", emb.len())));
            }
            let d = emb[0].dim();
            if emb.iter().any(|p| p.dim() != d) {
                return Err(Error::input("embedding points must share one dimension"));
            }
        }
        Ok(Self { distance, maps, embedding, tolerance: tol })
    }

    pub fn size(&self) -> usize {
        self.distance.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distance[i][j]
    }

    pub fn maps(&self) -> &IndexMap<String, Vec<usize>> {
        &self.maps
    }

    pub fn embedding(&self) -> Option<&[Point]> {
        self.embedding.as_deref()
    }

    /// Tolerance used for distance comparisons: 0 for integer inputs.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Resolves a map subset by name; an empty subset selects every map.
    pub fn select(&self, names: &[String]) -> Result<Vec<(String, Vec<usize>)>> {
        if names.is_empty() {
            return Ok(self.maps.iter().map(|(k, v)| (k.clone(), v.clone())).collect());
        }
        names
            .iter()
            .map(|n| {
                self.maps
                    .get(n)
                    .map(|v| (n.clone(), v.clone()))
                    .ok_or_else(|| Error::input(format!("unknown map {n}")))
            })
            .collect()
    }

    fn bundle(&self, names: &[String], extra: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "system": serde_json::to_value(self).unwrap_or(serde_json::Value::Null),
            "maps": names,
            "context": extra,
        })
    }
}

fn compose(g: &[usize], u: &[usize]) -> Vec<usize> {
    u.iter().map(|&x| g[x]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoreReport {
    pub core: Vec<usize>,
    pub iterations: usize,
    /// Whether the selected maps commute pointwise on the starting set.
    pub commuting: bool,
    /// Per map: does it map the core onto itself.
    pub surjective: IndexMap<String, bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub falsification: Option<Falsification>,
}

/// Iterates `C_{k+1} = intersection of T(C_k)` from the whole space until it stops changing.
pub fn eventual_core(system: &FiniteSystem, names: &[String]) -> Result<CoreReport> {
    eventual_core_from(system, names, &(0..system.size()).collect::<Vec<_>>())
}

/// [`eventual_core`] started from `start`, which must be invariant under every selected map.
pub fn eventual_core_from(system: &FiniteSystem, names: &[String], start: &[usize]) -> Result<CoreReport> {
    let maps = system.select(names)?;
    let n = system.size();
    let start_set: HashSet<usize> = start.iter().copied().collect();
    for (name, t) in &maps {
        if let Some(&x) = start.iter().find(|&&x| !start_set.contains(&t[x])) {
            return Err(Error::input(format!("map {name} sends {x} outside the starting set")));
        }
    }
    let mut cur: Vec<bool> = (0..n).map(|i| start_set.contains(&i)).collect();
    let mut iterations = 0;
    loop {
        let mut next = vec![true; n];
        for (_, t) in &maps {
            let mut img = vec![false; n];
            for x in (0..n).filter(|&x| cur[x]) {
                img[t[x]] = true;
            }
            for (a, b) in next.iter_mut().zip(img) {
                *a &= b;
            }
        }
        if maps.is_empty() {
            next = cur.clone();
        }
        iterations += 1;
        if next == cur {
            break;
        }
        cur = next;
    }
    let core: Vec<usize> = (0..n).filter(|&x| cur[x]).collect();
    let commuting = maps
        .iter()
        .enumerate()
        .all(|(i, (_, f))| maps[i + 1..].iter().all(|(_, g)| start.iter().all(|&x| f[g[x]] == g[f[x]])));
    let mut surjective = IndexMap::new();
    for (name, t) in &maps {
        let img: HashSet<usize> = core.iter().map(|&x| t[x]).collect();
        surjective.insert(name.clone(), img.len() == core.len() && core.iter().all(|x| img.contains(x)));
    }
    let mut note = None;
    let mut falsification = None;
    let names_resolved: Vec<String> = maps.iter().map(|(k, _)| k.clone()).collect();
    if !commuting {
        note = Some("hypothesis unmet: maps do not commute pointwise; no conclusion asserted".into());
    } else if core.is_empty() || surjective.values().any(|s| !s) {
        falsification = Some(Falsification {
            theorem: "commuting self-maps of a compact set are all surjective on some nonempty compact subset".into(),
            detail: if core.is_empty() {
                "eventual core is empty".into()
            } else {
                "a map is not surjective on the eventual core".into()
            },
            bundle: system.bundle(&names_resolved, serde_json::json!({ "start": start, "core": core })),
        });
    }
    Ok(CoreReport { core, iterations, commuting, surjective, note, falsification })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SemigroupClosure {
    /// Deduplicated image tables.
    pub elements: Vec<Vec<usize>>,
    /// Shortest generator word per element, applied right to left; the
    /// identity, when adjoined, has the empty word.
    pub words: Vec<Vec<String>>,
    pub identity_adjoined: bool,
}

impl SemigroupClosure {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Breadth-first closure of the selected maps under composition.
pub fn semigroup_closure(
    system: &FiniteSystem,
    names: &[String],
    max_elements: usize,
    adjoin_identity: bool,
) -> Result<SemigroupClosure> {
    let gens = system.select(names)?;
    closure_of(&gens, system.size(), max_elements, adjoin_identity)
}

fn closure_of(gens: &[(String, Vec<usize>)], n: usize, max_elements: usize, adjoin_identity: bool) -> Result<SemigroupClosure> {
    if max_elements < gens.len() + usize::from(adjoin_identity) {
        return Err(Error::input("maximum closure size is smaller than the generator count"));
    }
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut out = SemigroupClosure { elements: Vec::new(), words: Vec::new(), identity_adjoined: adjoin_identity };
    let mut queue = VecDeque::new();
    let mut push = |table: Vec<usize>, word: Vec<String>, out: &mut SemigroupClosure, queue: &mut VecDeque<usize>| -> Result<()> {
        if index.contains_key(&table) {
            return Ok(());
        }
        if out.elements.len() >= max_elements {
            return Err(Error::Resource(format!("semigroup closure exceeds {max_elements} elements")));
        }
        index.insert(table.clone(), out.elements.len());
        queue.push_back(out.elements.len());
        out.elements.push(table);
        out.words.push(word);
        Ok(())
    };
    if adjoin_identity {
        push((0..n).collect(), Vec::new(), &mut out, &mut queue)?;
    }
    for (name, t) in gens {
        push(t.clone(), vec![name.clone()], &mut out, &mut queue)?;
    }
    while let Some(i) = queue.pop_front() {
        for (name, g) in gens {
            let table = compose(g, &out.elements[i]);
            let mut word = vec![name.clone()];
            word.extend(out.words[i].iter().cloned());
            push(table, word, &mut out, &mut queue)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GammaReport {
    /// Points at which every pair of closure elements commutes.
    pub gamma: Vec<usize>,
    pub closure_size: usize,
    /// False when `gamma` is empty.
    pub somewhere_commuting: bool,
}

/// `{x : U(V(x)) = V(U(x)) for all U, V in the generated semigroup}`.
pub fn gamma_set(system: &FiniteSystem, names: &[String], max_elements: usize) -> Result<GammaReport> {
    let closure = semigroup_closure(system, names, max_elements, false)?;
    let n = system.size();
    let els = &closure.elements;
    let gamma: Vec<usize> = (0..n)
        .filter(|&x| {
            els.iter()
                .enumerate()
                .all(|(i, u)| els[i + 1..].iter().all(|v| u[v[x]] == v[u[x]]))
        })
        .collect();
    Ok(GammaReport { somewhere_commuting: !gamma.is_empty(), gamma, closure_size: closure.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GammaPropertiesReport {
    pub gamma: Vec<usize>,
    pub common_fixed: Vec<usize>,
    pub certificate: PropertyCertificate,
    pub falsifications: Vec<Falsification>,
}

/// Checks that the gamma set is invariant under every generator and contains
/// every common fixed point. Closedness holds trivially in a finite space.
pub fn gamma_properties_check(system: &FiniteSystem, names: &[String], max_elements: usize) -> Result<GammaPropertiesReport> {
    let maps = system.select(names)?;
    let gamma = gamma_set(system, names, max_elements)?.gamma;
    let in_gamma: HashSet<usize> = gamma.iter().copied().collect();
    let n = system.size();
    let common_fixed: Vec<usize> = (0..n).filter(|&x| maps.iter().all(|(_, t)| t[x] == x)).collect();
    let mut b = CertificateBuilder::new(Property::GammaProperties, 0.0).samples(n);
    let mut falsifications = Vec::new();
    let names_resolved: Vec<String> = maps.iter().map(|(k, _)| k.clone()).collect();
    for (k, (name, t)) in maps.iter().enumerate() {
        for &x in &gamma {
            if !in_gamma.contains(&t[x]) {
                b.push_witness(Witness::new(vec![], 1.0, 0.0).with_indices(vec![k, x, t[x]]));
                falsifications.push(Falsification {
                    theorem: "the gamma set is invariant under the family".into(),
                    detail: format!("{name} maps {x} in gamma to {} outside gamma", t[x]),
                    bundle: system.bundle(&names_resolved, serde_json::json!({ "gamma": gamma })),
                });
            }
        }
    }
    for &x in &common_fixed {
        if !in_gamma.contains(&x) {
            b.push_witness(Witness::new(vec![], 1.0, 0.0).with_indices(vec![x]));
            falsifications.push(Falsification {
                theorem: "common fixed points lie in the gamma set".into(),
                detail: format!("common fixed point {x} is not in gamma"),
                bundle: system.bundle(&names_resolved, serde_json::json!({ "gamma": gamma })),
            });
        }
    }
    let certificate = b
        .finish()
        .with_note("invariance and fixed-point containment checked exactly; closedness is automatic in a finite space");
    Ok(GammaPropertiesReport { gamma, common_fixed, certificate, falsifications })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IsometryReport {
    pub map: String,
    pub subset: Vec<usize>,
    pub nonexpansive: bool,
    pub surjective: bool,
    pub isometry: bool,
    pub certificate: PropertyCertificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub falsification: Option<Falsification>,
}

/// Checks nonexpansivity, surjectivity and distance preservation of `map` on
/// `subset` (the whole space when `None`). A nonexpansive surjection that is
/// not an isometry is a falsification.
pub fn isometry_check(system: &FiniteSystem, map: &str, subset: Option<&[usize]>) -> Result<IsometryReport> {
    let t = system.maps.get(map).ok_or_else(|| Error::input(format!("unknown map {map}")))?;
    let all: Vec<usize> = (0..system.size()).collect();
    let sub = subset.unwrap_or(&all);
    let set: HashSet<usize> = sub.iter().copied().collect();
    if let Some(&x) = sub.iter().find(|&&x| !set.contains(&t[x])) {
        return Err(Error::input(format!("map {map} sends {x} outside the subset")));
    }
    let tol = system.tolerance;
    let d = |a: usize, b: usize| system.distance[a][b];
    let mut nonexpansive = true;
    let mut b = CertificateBuilder::new(Property::Isometry, tol).samples(sub.len());
    for (i, &x) in sub.iter().enumerate() {
        for &y in &sub[i + 1..] {
            let (before, after) = (d(x, y), d(t[x], t[y]));
            if after > before + tol {
                nonexpansive = false;
            }
            let gap = (after - before).abs();
            b.check(gap, 0.0, || Witness::new(vec![], after, before).with_indices(vec![x, y]));
        }
    }
    let image: HashSet<usize> = sub.iter().map(|&x| t[x]).collect();
    let surjective = image.len() == set.len();
    let certificate = b.finish();
    let isometry = certificate.is_pass();
    let falsification = (nonexpansive && surjective && !isometry).then(|| Falsification {
        theorem: "a nonexpansive surjection of a compact metric space is an isometry".into(),
        detail: format!("{map} is a nonexpansive surjection of the subset but changes a distance"),
        bundle: system.bundle(&[map.to_string()], serde_json::json!({ "subset": sub })),
    });
    Ok(IsometryReport {
        map: map.to_string(),
        subset: sub.to_vec(),
        nonexpansive,
        surjective,
        isometry,
        certificate,
        falsification,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineReport {
    pub gamma: GammaReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub core: Option<CoreReport>,
    pub isometries: Vec<IsometryReport>,
    /// Affine extensions of the maps on the embedded core, when an embedding is given.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub extensions: Vec<MapExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<CenterFixedPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopped: Option<String>,
    pub falsifications: Vec<Falsification>,
}

impl PipelineReport {
    pub fn pass(&self) -> bool {
        self.stopped.is_none()
            && self.falsifications.is_empty()
            && self.isometries.iter().all(|r| r.isometry)
            && self.center.as_ref().is_none_or(|c| c.certificate.is_pass())
    }
}

/// gamma set, then eventual core inside it, then isometry checks on the core,
/// then (with an embedding) a common fixed point in the Tchebyshev center of
/// the embedded core.
pub fn finite_pipeline(
    system: &FiniteSystem,
    names: &[String],
    max_elements: usize,
    tol: f64,
    opts: &RetractionOptions,
) -> Result<PipelineReport> {
    let maps = system.select(names)?;
    let resolved: Vec<String> = maps.iter().map(|(k, _)| k.clone()).collect();
    let gamma = gamma_set(system, &resolved, max_elements)?;
    let mut report = PipelineReport {
        gamma,
        core: None,
        isometries: Vec::new(),
        extensions: Vec::new(),
        center: None,
        stopped: None,
        falsifications: Vec::new(),
    };
    if !report.gamma.somewhere_commuting {
        report.stopped = Some("not somewhere commuting: the gamma set is empty".into());
        return Ok(report);
    }
    let props = gamma_properties_check(system, &resolved, max_elements)?;
    report.falsifications.extend(props.falsifications);
    if !report.falsifications.is_empty() {
        report.stopped = Some("gamma set is not invariant".into());
        return Ok(report);
    }
    let core = eventual_core_from(system, &resolved, &report.gamma.gamma)?;
    report.falsifications.extend(core.falsification.clone());
    let core_pts = core.core.clone();
    report.core = Some(core);
    for name in &resolved {
        let iso = isometry_check(system, name, Some(&core_pts))?;
        report.falsifications.extend(iso.falsification.clone());
        report.isometries.push(iso);
    }
    if let (Some(emb), false) = (system.embedding(), core_pts.is_empty()) {
        let pts: Vec<Point> = core_pts.iter().map(|&i| emb[i].clone()).collect();
        let mut family = Vec::new();
        for (name, t) in &maps {
            let images: Vec<Point> = core_pts.iter().map(|&i| emb[t[i]].clone()).collect();
            match affine_extension(&pts, &images, tol) {
                Some(m) => family.push(m),
                None => {
                    report.stopped = Some(format!("map {name} is not affine on the embedded core"));
                    return Ok(report);
                }
            }
        }
        let space = NormSpec::euclidean(pts[0].dim());
        report.center = Some(fixed_point_in_center(&family, &pts, &space, tol, opts)?);
        report.extensions = family;
    }
    Ok(report)
}

/// Minimum-norm affine map `x -> M (x - m) + m'` sending each `from[i]` to
/// `to[i]`, where `m`, `m'` are the centroids. `None` when no affine map
/// fits within `tol`.
pub fn affine_extension(from: &[Point], to: &[Point], tol: f64) -> Option<MapExpr> {
    let d = from[0].dim();
    let k = from.len();
    let (m0, m1) = (centroid(from), centroid(to));
    let x = nalgebra::DMatrix::from_fn(d, k, |i, j| from[j].coords()[i] - m0.coords()[i]);
    let y = nalgebra::DMatrix::from_fn(d, k, |i, j| to[j].coords()[i] - m1.coords()[i]);
    let pinv = x.clone().pseudo_inverse(1e-12).ok()?;
    let m = &y * pinv;
    if (&m * &x - &y).amax() > tol.max(1e-12) {
        return None;
    }
    let m0v = nalgebra::DVector::from_column_slice(m0.coords());
    let offset = nalgebra::DVector::from_column_slice(m1.coords()) - &m * m0v;
    let matrix: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect();
    MapExpr::affine(matrix, Point::new(offset.iter().copied().collect()).ok()?).ok()
}

impl FiniteSystem {
    /// Euclidean distances of an embedded point set.
    pub fn from_embedding(points: Vec<Point>, maps: IndexMap<String, Vec<usize>>) -> Result<Self> {
        let distance = points.iter().map(|a| points.iter().map(|b| NormKind::Euclidean.dist(a, b)).collect()).collect();
        Self::new(distance, maps, Some(points))
    }
}
