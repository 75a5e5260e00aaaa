//! Acceptance run: one PASS/FAIL line per criterion, each with its runtime
//! limit. Exits non-zero when any criterion fails.

use std::collections::HashSet;
use std::f64::consts::{PI, SQRT_2};
use std::time::{Duration, Instant};

use fixret_core::contraction::{apfs_certify, doubling_schedule, resolvent, ResolventOptions};
use fixret_core::finite::{
    eventual_core, gamma_properties_check, gamma_set, isometry_check, semigroup_closure, FiniteSystem,
    DEFAULT_MAX_ELEMENTS,
};
use fixret_core::geometry::SampleStrategy;
use fixret_core::mappings::{certify_firmly_nonexpansive, regular_polygon, DEFAULT_A_GRID};
use fixret_core::retraction::{
    apfs_transfer_check, build_retraction, certify_model, commute_retract_check, RetractionOptions,
};
use fixret_core::tchebyshev::{chebyshev_center, fixed_point_in_center, invariance_check};
use fixret_core::{ConvexBody, MapExpr, NormKind, NormSpec, Point, RetractionModel, Verdict};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn p(x: f64, y: f64) -> Point {
    Point::from([x, y])
}

fn segment(a: Point, b: Point) -> MapExpr {
    MapExpr::project_onto(ConvexBody::hull(vec![a, b]).unwrap())
}

fn unit_square() -> ConvexBody {
    ConvexBody::cube([0.0, 0.0], [1.0, 1.0]).unwrap()
}

fn box2() -> ConvexBody {
    ConvexBody::cube([-1.0, -1.0], [1.0, 1.0]).unwrap()
}

fn p_map() -> MapExpr {
    segment(p(-1.0, 0.0), p(1.0, 0.0))
}

fn q_map() -> MapExpr {
    segment(p(0.0, -1.0), p(0.0, 1.0))
}

fn fine_opts() -> RetractionOptions {
    RetractionOptions { schedule: doubling_schedule(24), stabilization_tol: 1e-7, ..Default::default() }
}

/// Minimax over a grid of step `h` covering the bounding box of `pts`:
/// returns the best grid point and its enclosure radius.
fn grid_oracle(pts: &[Point], kind: NormKind, h: f64) -> (Point, f64) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for q in pts {
        for k in 0..2 {
            lo[k] = lo[k].min(q.coords()[k]);
            hi[k] = hi[k].max(q.coords()[k]);
        }
    }
    let n0 = ((hi[0] - lo[0]) / h).ceil() as usize + 1;
    let n1 = ((hi[1] - lo[1]) / h).ceil() as usize + 1;
    let mut best = (p(lo[0], lo[1]), f64::INFINITY);
    for i in 0..n0 {
        for j in 0..n1 {
            let c = p(lo[0] + i as f64 * h, lo[1] + j as f64 * h);
            let r = pts.iter().map(|a| kind.dist(a, &c)).fold(0.0, f64::max);
            if r < best.1 {
                best = (c, r);
            }
        }
    }
    best
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn residual_bound() -> Check {
    let body = unit_square();
    let space = NormSpec::euclidean(2);
    let t = segment(p(0.0, 0.0), p(1.0, 0.0));
    let r = RetractionModel::identity(&body, &space);
    let schedule = doubling_schedule(10);
    let cert = apfs_certify(&t, &r, &p(0.5, 1.0), &body, &space, &schedule, 1e-9).map_err(err)?;
    ensure!(cert.pass, "certificate failed at s = {:?}", cert.failed_s);
    for (s, res) in schedule.iter().zip(&cert.residuals) {
        let s = *s as f64;
        // F_s(0.5, 1) = (0.5, 1/s), and T moves it by exactly 1/s.
        ensure!((res - 1.0 / s).abs() <= 1e-9, "s = {s}: residual {res} vs 1/s");
        ensure!(*res <= SQRT_2 / s, "s = {s}: residual {res} above sqrt(2)/s");
    }
    let xs: Vec<f64> = schedule.iter().map(|s| (*s as f64).ln()).collect();
    let ys: Vec<f64> = cert.residuals.iter().map(|r| r.ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    ensure!((slope + 1.0).abs() <= 0.05, "slope {slope}");
    let reported = cert.log_log_slope.ok_or("no slope reported")?;
    ensure!((reported - slope).abs() <= 1e-9, "reported slope {reported} vs {slope}");
    Ok(format!("slope {slope:.6}"))
}

fn resolvent_closed_form() -> Check {
    let body = unit_square();
    let space = NormSpec::euclidean(2);
    let t = segment(p(0.0, 0.0), p(1.0, 0.0));
    let r = RetractionModel::identity(&body, &space);
    let rep = resolvent(&t, &r, 10, &p(0.5, 1.0), &body, ResolventOptions::new(1e-12, &body, &space)).map_err(err)?;
    let d = rep.fixed_point.dist2(&p(0.5, 0.1));
    ensure!(d <= 1e-9, "F_10(0.5, 1) = {} ({d:e} from (0.5, 0.1))", rep.fixed_point);
    Ok(format!("F_10(0.5, 1) = {} in {} iterations", rep.fixed_point, rep.iterations))
}

fn retraction_build() -> Check {
    let body = box2();
    let space = NormSpec::euclidean(2);
    let r = build_retraction(&[p_map(), q_map()], &body, &space, &fine_opts()).map_err(err)?;
    let swapped = build_retraction(&[q_map(), p_map()], &body, &space, &fine_opts()).map_err(err)?;
    let pts = body.sample(SampleStrategy::Random, 100, 11).map_err(err)?;
    let mut worst: f64 = 0.0;
    for x in &pts {
        let y = r.evaluate(x).map_err(err)?;
        let z = swapped.evaluate(x).map_err(err)?;
        ensure!(y.norm2() <= 1e-6, "R({x}) = {y}");
        ensure!(y.dist2(&z) <= 1e-6, "order changes R({x}): {y} vs {z}");
        worst = worst.max(y.norm2());
    }
    let cert = certify_model(&r, &[p_map(), q_map()], &space, 100, 1e-6, false).map_err(err)?;
    ensure!(cert.pass_range && cert.pass_idempotence && cert.pass_nonexpansive, "certificate {cert:?}");
    Ok(format!("max |R x| = {worst:.3e}, s* = {:?}", r.s_stars()))
}

fn composite_fixed_set() -> Check {
    let body = box2();
    let t = MapExpr::rotation(0, 1, PI);
    let rep = commute_retract_check(&t, &[p_map()], &p_map(), &body, NormKind::Euclidean, 0.05, None).map_err(err)?;
    ensure!(rep.certificate.is_pass(), "certificate {:?}", rep.certificate);
    let origin = vec![p(0.0, 0.0)];
    ensure!(rep.fix_composite == origin, "Fix(TR) = {:?}", rep.fix_composite);
    ensure!(rep.fix_intersection == origin, "Fix T cap Fix S = {:?}", rep.fix_intersection);
    // Independent count: T(P x) = (-x1, 0) is within h/2 of x only at the origin.
    let h = 0.05;
    let mut hits = 0;
    for i in 0..=40 {
        for j in 0..=40 {
            let (x1, x2) = (-1.0 + i as f64 * h, -1.0 + j as f64 * h);
            if (2.0 * x1).hypot(x2) <= h / 2.0 {
                hits += 1;
            }
        }
    }
    ensure!(hits == 1, "hand oracle found {hits} points");
    Ok("both sets are {(0, 0)}".into())
}

fn transfer() -> Check {
    let body = box2();
    let space = NormSpec::euclidean(2);
    let r = build_retraction(&[p_map(), q_map()], &body, &space, &fine_opts()).map_err(err)?;
    let t = MapExpr::rotation(0, 1, PI);
    let family = [("P".to_string(), p_map()), ("Q".to_string(), q_map())];
    let schedule = doubling_schedule(24);
    let rep = apfs_transfer_check(&t, &family, &r, &body, &space, &p(0.7, -0.4), &schedule, 1e-6).map_err(err)?;
    let diam = 2.0 * SQRT_2;
    for series in &rep.series {
        for (s, res) in schedule.iter().zip(&series.residuals) {
            ensure!(*res <= 3.0 * diam / *s as f64, "{}: residual {res} at s = {s}", series.label);
        }
        let last = *series.residuals.last().unwrap();
        ensure!(last <= 1e-6, "{}: final residual {last}", series.label);
    }
    ensure!(rep.certificate.is_pass(), "certificate {:?}", rep.certificate);
    let labels: Vec<&str> = rep.series.iter().map(|s| s.label.as_str()).collect();
    ensure!(labels == ["P", "Q", "R", "T"], "series {labels:?}");
    Ok(format!("{} series, final residuals <= 1e-6", rep.series.len()))
}

fn pentagon() -> Check {
    let pts = regular_polygon(5, 1.0);
    let space = NormSpec::euclidean(2);
    let family = [MapExpr::rotation(0, 1, 2.0 * PI / 5.0), MapExpr::rotation(0, 1, 4.0 * PI / 5.0)];
    for t in &family {
        let inv = invariance_check(t, &pts, &space, 1e-9).map_err(err)?;
        ensure!(inv.hypotheses.iter().all(|h| h.is_pass()), "hypotheses {:?}", inv.hypotheses);
        ensure!(inv.certificate.is_pass(), "invariance {:?}", inv.certificate);
    }
    let fp = fixed_point_in_center(&family, &pts, &space, 1e-9, &RetractionOptions::default()).map_err(err)?;
    ensure!(fp.certificate.is_pass(), "fixed point {:?}", fp.certificate);
    ensure!(fp.point.norm2() <= 1e-9, "fixed point {}", fp.point);
    ensure!(fp.center.center.norm2() <= 1e-9, "center {}", fp.center.center);
    let (g, _) = grid_oracle(&pts, NormKind::Euclidean, 1e-3);
    let d = g.dist2(&fp.center.center);
    ensure!(d <= 2e-3, "grid oracle {g} is {d} away");
    Ok(format!("center {}, grid oracle within {d:.1e}", fp.center.center))
}

fn tchebyshev_sweep() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=12);
        let pts: Vec<Point> = (0..n).map(|_| p(rng.random::<f64>(), rng.random::<f64>())).collect();
        let e = chebyshev_center(&pts, &NormSpec::euclidean(2), 1e-9).map_err(err)?;
        let (_, r_grid) = grid_oracle(&pts, NormKind::Euclidean, 1e-3);
        ensure!((e.radius - r_grid).abs() <= 2e-3, "seed {seed}: radius {} vs grid {r_grid}", e.radius);
        worst = worst.max((e.radius - r_grid).abs());

        let m = chebyshev_center(&pts, &NormSpec::new(NormKind::Max, 2).map_err(err)?, 0.0).map_err(err)?;
        let half_width = |k: usize| {
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
                (lo.min(q.coords()[k]), hi.max(q.coords()[k]))
            });
            (hi - lo) / 2.0
        };
        let r = half_width(0).max(half_width(1));
        ensure!(m.radius == r, "seed {seed}: max-norm radius {} vs {r}", m.radius);
        ensure!(m.exact, "seed {seed}: max-norm result not marked exact");
        let enclosure = pts.iter().map(|a| NormKind::Max.dist(a, &m.center)).fold(0.0, f64::max);
        // |a - (lo + hi) / 2| rounds differently from (hi - lo) / 2 by at most an ulp or two.
        ensure!((enclosure - r).abs() <= 4.0 * f64::EPSILON * r, "seed {seed}: max-norm enclosure {enclosure} vs {r}");
    }
    Ok(format!("worst euclidean radius gap {worst:.2e}"))
}

fn firm_nonexpansive() -> Check {
    let disk = ConvexBody::ball([0.0, 0.0], 1.0).unwrap();
    let tri = ConvexBody::hull(vec![p(0.0, 0.0), p(0.8, 0.1), p(0.2, 0.7)]).unwrap();
    let nodes = [
        ("segment", p_map()),
        ("disk", MapExpr::project_onto(ConvexBody::ball([0.3, 0.0], 0.5).unwrap())),
        ("box", MapExpr::project_onto(ConvexBody::cube([-0.5, -0.2], [0.4, 0.6]).unwrap())),
        ("triangle", MapExpr::project_onto(tri)),
    ];
    // 33 points give 528 pairs.
    for (name, m) in &nodes {
        let c = certify_firmly_nonexpansive(m, &box2(), 33, &DEFAULT_A_GRID, 1e-9).map_err(err)?;
        ensure!(c.is_pass(), "{name}: {c:?}");
        ensure!(c.sample_count * (c.sample_count - 1) / 2 >= 500, "{name}: only {} points", c.sample_count);
    }
    let c = certify_firmly_nonexpansive(&MapExpr::rotation(0, 1, PI), &disk, 33, &DEFAULT_A_GRID, 1e-9).map_err(err)?;
    ensure!(c.verdict == Verdict::Fail, "rotation by pi passed");
    let hit = c.witnesses.iter().any(|w| {
        w.inputs.len() == 2 && w.inputs[0] == p(1.0, 0.0) && w.inputs[1] == p(-1.0, 0.0) && w.parameter == Some(0.5)
    });
    ensure!(hit, "no witness x=(1,0), y=(-1,0), a=0.5 among {:?}", c.witnesses.first());
    Ok(format!("{} projection nodes pass; rotation by pi fails at a = 0.5", nodes.len()))
}

fn random_finite_system(rng: &mut ChaCha8Rng) -> FiniteSystem {
    let n = rng.random_range(1..=7);
    let f: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let power = |k: usize| -> Vec<usize> {
        (0..n)
            .map(|mut x| {
                for _ in 0..k {
                    x = f[x];
                }
                x
            })
            .collect()
    };
    let mut maps = IndexMap::new();
    maps.insert("f".to_string(), f.clone());
    maps.insert("g".to_string(), power(rng.random_range(2..=5)));
    if rng.random_bool(0.5) {
        // Off-diagonal distances in {1, 2} always form a metric.
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = rng.random_range(1..=2) as f64;
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        FiniteSystem::new(d, maps, None).unwrap()
    } else {
        // Distinct integer lattice points, Euclidean distances.
        let mut used = HashSet::new();
        let mut pts = Vec::new();
        while pts.len() < n {
            let q = (rng.random_range(0..4i32), rng.random_range(0..4i32));
            if used.insert(q) {
                pts.push(p(q.0 as f64, q.1 as f64));
            }
        }
        FiniteSystem::from_embedding(pts, maps).unwrap()
    }
}

fn finite_sweep() -> Check {
    let mut surjections = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_finite_system(&mut rng);
        let n = sys.size();
        let core = eventual_core(&sys, &[]).map_err(err)?;
        ensure!(core.falsification.is_none(), "seed {seed}: {:?}", core.falsification);
        ensure!(!core.core.is_empty(), "seed {seed}: empty core");
        let core_set: HashSet<usize> = core.core.iter().copied().collect();
        for (name, t) in sys.maps() {
            let img: HashSet<usize> = core.core.iter().map(|&x| t[x]).collect();
            ensure!(img == core_set, "seed {seed}: {name} is not a bijection of the core");
        }

        // Gamma set by brute force over the closure.
        let closure = semigroup_closure(&sys, &[], DEFAULT_MAX_ELEMENTS, false).map_err(err)?;
        let els = &closure.elements;
        let gamma: Vec<usize> =
            (0..n).filter(|&x| els.iter().all(|u| els.iter().all(|v| u[v[x]] == v[u[x]]))).collect();
        ensure!(gamma == gamma_set(&sys, &[], DEFAULT_MAX_ELEMENTS).map_err(err)?.gamma, "seed {seed}: gamma differs");
        let in_gamma: HashSet<usize> = gamma.iter().copied().collect();
        for t in sys.maps().values() {
            ensure!(gamma.iter().all(|&x| in_gamma.contains(&t[x])), "seed {seed}: gamma not invariant");
        }
        for x in 0..n {
            if sys.maps().values().all(|t| t[x] == x) {
                ensure!(in_gamma.contains(&x), "seed {seed}: common fixed point {x} outside gamma");
            }
        }
        let props = gamma_properties_check(&sys, &[], DEFAULT_MAX_ELEMENTS).map_err(err)?;
        ensure!(props.falsifications.is_empty() && props.certificate.is_pass(), "seed {seed}: {props:?}");

        for name in sys.maps().keys() {
            let rep = isometry_check(&sys, name, Some(&core.core)).map_err(err)?;
            ensure!(rep.falsification.is_none(), "seed {seed}: {:?}", rep.falsification);
            if rep.nonexpansive && rep.surjective {
                surjections += 1;
                let t = &sys.maps()[name];
                for &x in &core.core {
                    for &y in &core.core {
                        let (a, b) = (sys.distance(t[x], t[y]), sys.distance(x, y));
                        ensure!((a - b).abs() <= sys.tolerance(), "seed {seed}: {name} changes d({x}, {y})");
                    }
                }
            }
        }
    }
    Ok(format!("{surjections} nonexpansive surjections, all isometries; 0 falsifications"))
}

fn non_monotone() -> Check {
    let space = NormSpec::euclidean(2);
    let a = vec![p(0.0, 0.0), p(2.0, 0.0)];
    let mut b = a.clone();
    b.push(p(1.0, 1.5));
    let ca = chebyshev_center(&a, &space, 1e-9).map_err(err)?;
    let cb = chebyshev_center(&b, &space, 1e-9).map_err(err)?;
    // Circumcenter of the acute triangle: 1 + y^2 = (1.5 - y)^2.
    let y = 1.25 / 3.0;
    ensure!(ca.center.dist2(&p(1.0, 0.0)) <= 1e-9, "C(A) = {}", ca.center);
    ensure!(cb.center.dist2(&p(1.0, y)) <= 1e-9, "C(B) = {}", cb.center);
    let (ga, ra) = grid_oracle(&a, NormKind::Euclidean, 1e-3);
    let (gb, rb) = grid_oracle(&b, NormKind::Euclidean, 1e-3);
    ensure!(ga.dist2(&ca.center) <= 2e-3 && gb.dist2(&cb.center) <= 2e-3, "grid oracle {ga}, {gb}");
    // The center of A encloses B only with a radius well above r(B).
    let reach = b.iter().map(|q| q.dist2(&ca.center)).fold(0.0, f64::max);
    ensure!(reach > rb + 0.1 && !cb.contains(&b, &ca.center, 1e-9), "C(A) inside C(B)");
    Ok(format!("C(A) = {} (r {ra:.4}), C(B) = {} (r {rb:.4})", ca.center, cb.center))
}

fn main() {
    type Criterion = (u32, &'static str, Duration, fn() -> Check);
    let criteria: [Criterion; 10] = [
        (1, "residual bound diam/s on the segment", Duration::from_secs(1), residual_bound),
        (2, "resolvent closed form", Duration::from_millis(100), resolvent_closed_form),
        (3, "retraction build {P, Q}", Duration::from_secs(10), retraction_build),
        (4, "Fix(TR) equals Fix T cap Fix S on the grid", Duration::from_secs(5), composite_fixed_set),
        (5, "apfs transfer to S, R and T", Duration::from_secs(10), transfer),
        (6, "pentagon center pipeline", Duration::from_secs(2), pentagon),
        (7, "Tchebyshev oracle sweep", Duration::from_secs(60), tchebyshev_sweep),
        (8, "firm nonexpansivity", Duration::from_secs(5), firm_nonexpansive),
        (9, "finite theorem sweep", Duration::from_secs(30), finite_sweep),
        (10, "non-monotone Tchebyshev center", Duration::from_secs(5), non_monotone),
    ];
    let mut failures = 0;
    for (id, name, limit, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed < limit => (true, d),
            Ok(d) => (false, format!("{d}; runtime over {limit:?}")),
            Err(e) => (false, e),
        };
        failures += usize::from(!ok);
        println!(
            "{} {id:>2} {name} [{:.3} s < {:.3} s] {detail}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
