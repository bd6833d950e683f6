use std::fs;
use std::process::Command;

fn diffcomp() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffcomp"));
    c.env_remove("DIFFCOMP_OUT");
    c
}

#[test]
fn run_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = diffcomp()
        .args(["run", "scenarios/thm1_quad_1d", "--paths", "5000", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("thm1_quad_1d");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(base.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "holds");
    assert_eq!(report["paths"], 5000);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(base.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["resolved"]["plan"]["paths"], 5000);
    assert_eq!(manifest["content_hash"].as_str().unwrap().len(), 64);
    let csv = fs::read_to_string(base.join("delta_field.csv")).unwrap();
    assert!(csv.starts_with("x,value\n"));
}

#[test]
fn reports_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    let mut hashes = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(threads);
        let status = diffcomp()
            .args(["run", "thm1_softplus_2d", "--paths", "20000", "--threads", threads, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        reports.push(fs::read(out.join("thm1_softplus_2d/report.json")).unwrap());
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join("thm1_softplus_2d/manifest.json")).unwrap()).unwrap();
        hashes.push(m["content_hash"].clone());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = diffcomp()
        .args(["run", "thm1_relu_3d", "--paths", "2000", "--no-pde"])
        .env("DIFFCOMP_OUT", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("thm1_relu_3d/report.json").is_file());
}

#[test]
fn negative_suite_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = diffcomp().args(["suite", "suites/negative_suite", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("negative_suite/summary.csv")).unwrap();
    assert!(csv.starts_with("name,delta,se,z,verdict\n"));
    assert!(csv.lines().filter(|l| l.ends_with(",violated")).count() >= 2);
}

#[test]
fn suite_file_resolves_neighbouring_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("scenarios")).unwrap();
    fs::create_dir_all(root.join("suites")).unwrap();
    let src = diffcomp::harness::bundled::scenario("thm1_quad_3d").unwrap().replace("thm1_quad_3d", "local_quad");
    fs::write(root.join("scenarios/local_quad.toml"), src).unwrap();
    fs::write(root.join("suites/mine.toml"), "name = \"mine\"\nscenarios = [\"local_quad\"]\n").unwrap();
    let status = diffcomp()
        .args(["suite"])
        .arg(root.join("suites/mine.toml"))
        .args(["--paths", "3000", "--out"])
        .arg(root.join("out"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(root.join("out/mine/reports/local_quad.json").is_file());
}

#[test]
fn usage_errors_exit_two() {
    let out = diffcomp().arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = diffcomp().args(["run", "no_such_scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = diffcomp().args(["run", "thm1_abs_2d", "--pde", "--no-pde"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = diffcomp().args(["search-counterexample", "--kind", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn broken_scenario_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"bad\"\ntheorem = \"sideways\"\n").unwrap();
    let out = diffcomp().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot parse scenario"));
}

#[test]
fn mollify_demo_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let status = diffcomp().args(["mollify-demo", "--function", "relu", "--out"]).arg(dir.path()).status().unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(dir.path().join("mollify-demo/curve.csv")).unwrap();
    assert!(csv.starts_with("z,f,mollified,second_derivative\n"));
    assert_eq!(csv.lines().count(), 2002);
    let status = diffcomp()
        .args(["probe-sde", "--model", "abm", "--paths", "200", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let probe: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("probe-sde/probe.json")).unwrap()).unwrap();
    assert!(probe["strong"]["max_error"].as_f64().unwrap() <= 1e-12);
}
