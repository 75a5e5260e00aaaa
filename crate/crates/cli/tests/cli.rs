use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fixret"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn scenario(name: &str) -> String {
    scenarios().join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn without_timing(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).lines().filter(|l| !l.contains("elapsedSeconds")).collect::<Vec<_>>().join("\n")
}

#[test]
fn shipped_scenarios_honour_the_exit_code_contract() {
    let expected = [
        ("finite_chain.json", 0),
        ("finite_pentagon_pipeline.json", 0),
        // Rotation by pi is nonexpansive but not firmly nonexpansive.
        ("firm_certify.json", 1),
        ("noncommuting_retract.json", 2),
        ("pentagon_center.json", 0),
        ("pq_retract.json", 0),
        ("pq_transfer.json", 0),
        ("segment_apfs.json", 0),
        ("segment_resolvent.json", 0),
        ("triangle_center.json", 0),
    ];
    let mut shipped: Vec<String> = std::fs::read_dir(scenarios())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    shipped.sort();
    let listed: Vec<String> = expected.iter().map(|(n, _)| n.to_string()).collect();
    assert_eq!(shipped, listed, "every shipped scenario needs an expected exit code");
    for (name, code) in expected {
        let out = run(&["run", "--scenario", &scenario(name)]);
        assert_eq!(out.status.code(), Some(code), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let r = report(&out);
        assert_eq!(r["schema"], 1);
        let status = r["status"].as_str().unwrap();
        let want = match code {
            0 => "pass",
            1 => "fail",
            _ => "error",
        };
        assert_eq!(status, want, "{name}");
    }
}

#[test]
fn pq_retract_reaches_the_origin() {
    let out = run(&["run", "--scenario", &scenario("pq_retract.json")]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    for v in r["result"]["certificate"]["rangeInFix"].as_array().unwrap() {
        assert!(v.as_f64().unwrap() <= 1e-7, "{v}");
    }
}

#[test]
fn non_commuting_family_is_refused_with_hypothesis_error() {
    let out = run(&["retract", "--scenario", &scenario("noncommuting_retract.json")]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("hypothesis certificate FAIL: commuting"), "{stderr}");
    let r = report(&out);
    assert_eq!(r["error"]["kind"], "hypothesis");
    assert_eq!(r["error"]["detail"]["certificate"]["verdict"], "FAIL");
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{ not json").unwrap();
    let out = run(&["run", "--scenario", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["error"]["kind"], "input");

    let out = run(&["run", "--scenario", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    std::fs::write(&p, r#"{"schema":1,"task":"retract"}"#).unwrap();
    let out = run(&["run", "--scenario", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("space"));
}

#[test]
fn stabilization_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.json");
    std::fs::write(
        &p,
        r#"{"schema":1,"task":"retract","space":{"kind":"euclidean","dimension":2},
            "body":{"shape":"box","lo":[-1,-1],"hi":[1,1]},
            "maps":{"P":{"map":"projectOnto","body":{"shape":"hull","vertices":[[-1,0],[1,0]]}}},
            "family":["P"],"retraction":{"schedule":[2,4,8],"stabilizationTol":1e-12}}"#,
    )
    .unwrap();
    let out = run(&["run", "--scenario", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["error"]["kind"], "stabilization");
    assert!(r["error"]["detail"]["bestDelta"].as_f64().unwrap() > 1e-12);
}

#[test]
fn reports_are_reproducible_apart_from_timing() {
    for name in ["pq_retract.json", "pentagon_center.json", "finite_chain.json", "segment_apfs.json"] {
        let a = run(&["run", "--scenario", &scenario(name), "--seed", "7"]);
        let b = run(&["run", "--scenario", &scenario(name), "--seed", "7"]);
        assert_eq!(without_timing(&a.stdout), without_timing(&b.stdout), "{name}");
        assert_eq!(report(&a)["seed"], 7);
    }
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let out = run(&["run", "--scenario", &scenario("segment_resolvent.json")]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"apfs\": 1.0000000000000001e-9"), "{text}");
}

#[test]
fn resolvent_flags_override_the_scenario() {
    let out = run(&["resolvent", "--scenario", &scenario("segment_resolvent.json"), "--x", "0.5,1", "--s", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let fp: Vec<f64> = serde_json::from_value(report(&out)["result"]["solve"]["fixedPoint"].clone()).unwrap();
    assert!((fp[0] - 0.5).abs() <= 1e-9 && (fp[1] - 0.1).abs() <= 1e-9, "{fp:?}");

    let out = run(&["resolvent", "--scenario", &scenario("segment_resolvent.json"), "--s", "4"]);
    let fp: Vec<f64> = serde_json::from_value(report(&out)["result"]["solve"]["fixedPoint"].clone()).unwrap();
    assert!((fp[1] - 0.25).abs() <= 1e-9);
}

#[test]
fn certify_apfs_writes_trace_and_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let (rep, trace) = (dir.path().join("r.json"), dir.path().join("t.csv"));
    let out = run(&[
        "certify",
        "apfs",
        "--scenario",
        &scenario("segment_apfs.json"),
        "--out",
        rep.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(r["task"], "apfs");
    let csv = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "s,residual,bound");
    assert_eq!(lines.len(), 11);
    let row: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(row[0], 2.0);
    assert!((row[1] - 0.5).abs() <= 1e-9);
}

#[test]
fn retract_writes_stabilization_trace_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (trace, grid) = (dir.path().join("t.csv"), dir.path().join("g.csv"));
    let out = run(&[
        "retract",
        "--scenario",
        &scenario("pq_retract.json"),
        "--trace",
        trace.to_str().unwrap(),
        "--grid",
        grid.to_str().unwrap(),
        "--resolution",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let t = std::fs::read_to_string(&trace).unwrap();
    assert!(t.starts_with("stage,s,max_delta\n"));
    let g = std::fs::read_to_string(&grid).unwrap();
    let lines: Vec<&str> = g.lines().collect();
    assert_eq!(lines[0], "x1,x2,r1,r2");
    // 5 x 5 grid on [-1, 1]^2.
    assert_eq!(lines.len(), 26);
    for line in &lines[1..] {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(v[2].abs() <= 1e-6 && v[3].abs() <= 1e-6, "{line}");
    }
}

#[test]
fn center_from_inline_points_and_csv() {
    let out = run(&["center", "--points", "0,0;2,0"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert!((r["result"]["center"]["radius"].as_f64().unwrap() - 1.0).abs() <= 1e-9);

    let out = run(&["center", "--points", "0,0;2,0;2,2;0,2", "--norm", "max"]);
    let r = report(&out);
    assert_eq!(r["result"]["center"]["norm"], "max");
    assert_eq!(r["result"]["center"]["radius"].as_f64().unwrap(), 1.0);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    std::fs::write(&csv, "0,0\n1,0\n0,1\n").unwrap();
    let out = run(&["center", "--csv", csv.to_str().unwrap()]);
    let c: Vec<f64> = serde_json::from_value(report(&out)["result"]["center"]["center"].clone()).unwrap();
    assert!((c[0] - 0.5).abs() <= 1e-9 && (c[1] - 0.5).abs() <= 1e-9);
}

#[test]
fn center_invariance_on_the_pentagon() {
    let out = run(&["center", "--scenario", &scenario("pentagon_center.json"), "--check-invariance"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let p: Vec<f64> = serde_json::from_value(r["result"]["fixedPoint"]["point"].clone()).unwrap();
    assert!(p.iter().all(|v| v.abs() <= 1e-9));
    assert!(r["result"]["invariance"]["r1"].is_object());
}

#[test]
fn finite_flags_select_operations() {
    let out = run(&["finite", "--scenario", &scenario("finite_chain.json"), "--core"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["result"]["core"]["core"], serde_json::json!([2]));
    assert!(r["result"].get("gamma").is_none());

    let out = run(&["finite", "--scenario", &scenario("finite_pentagon_pipeline.json"), "--pipeline"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["task"], "pipeline");
}

#[test]
fn tol_flag_overrides_every_tolerance() {
    let out = run(&["run", "--scenario", &scenario("triangle_center.json"), "--tol", "1e-6"]);
    let r = report(&out);
    for k in ["certify", "retract", "apfs", "center"] {
        assert_eq!(r["tolerances"][k].as_f64().unwrap(), 1e-6);
    }
    assert_eq!(run(&["run", "--scenario", &scenario("triangle_center.json"), "--tol", "-1"]).status.code(), Some(2));
}
