use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const VO: &str = r#"
[problem]
dimension = 1
extents = [[0.0, 1.0]]
cells = [32]
alpha = "0.3 + 0.4*x"
rho = "1 + x"
q = "x"
u0 = "sin(pi*x)^3"
times = [0.5, 1.0]
"#;

const PLATE: &str = r#"
[problem]
dimension = 2
extents = [[0.0, 1.0], [0.0, 1.0]]
cells = [5, 5]
alpha = 0.5
rho = 1.0
q = 2.0

[dtn]
points = [1e-6, 1.0, 2.718281828459045]
"#;

fn vofrac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vofrac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_task(task: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![task, "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    vofrac(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_solution_and_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let out = dir.path().join("out");
    let o = run_task("solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,node,x,y,u"));
    assert_eq!(lines.count(), 2 * 31);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["task"], "solve");
    assert_eq!(report["config"]["problem"]["cells"][0], 32);
    assert!(report["timings_s"]["total"].as_f64().unwrap() >= 0.0);
}

#[test]
fn floats_carry_seventeen_significant_digits() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let out = dir.path().join("out");
    assert_eq!(run_task("solve", &cfg, &out, &[]).status.code(), Some(0));
    let csv = fs::read_to_string(out.join("solution.csv")).unwrap();
    let u = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap();
    let mantissa = u.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
    assert_eq!(mantissa.len(), 17, "{u}");
}

#[test]
fn unknown_key_is_rejected_by_name() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", &VO.replace("alpha =", "alpah ="));
    let o = run_task("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpah"), "{}", stderr(&o));
}

#[test]
fn unknown_override_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let o = run_task("solve", &cfg, &dir.path().join("out"), &["--override", "solver.thetta=2.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("thetta"), "{}", stderr(&o));
}

#[test]
fn inadmissible_theta_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let o = run_task("solve", &cfg, &dir.path().join("out"), &["--override", "solver.theta=1.0"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("contour"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_two() {
    let dir = TempDir::new().unwrap();
    let o = run_task("solve", &dir.path().join("nope.toml"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn task_mismatch_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", &format!("task = \"dtn\"\n{VO}"));
    let o = run_task("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn l1_times_must_sit_on_the_step_grid() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let o = run_task(
        "oracle",
        &cfg,
        &dir.path().join("out"),
        &["--override", "oracle.dt=0.3"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn compare_identical_files_passes_with_zero_diff() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let out = dir.path().join("out");
    assert_eq!(run_task("solve", &cfg, &out, &[]).status.code(), Some(0));
    let f = out.join("solution.csv");
    let o = vofrac(&["compare", f.to_str().unwrap(), f.to_str().unwrap(), "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);
    for c in report["columns"].as_array().unwrap() {
        assert_eq!(c["max_rel_diff"], 0.0);
    }
}

#[test]
fn compare_rejects_different_node_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_task("solve", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(
        run_task("solve", &cfg, &b, &["--override", "problem.cells=[16]"]).status.code(),
        Some(0)
    );
    let o = vofrac(&[
        "compare",
        a.join("solution.csv").to_str().unwrap(),
        b.join("solution.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema mismatch"), "{}", stderr(&o));
}

#[test]
fn contour_and_l1_agree_on_the_variable_order_phantom() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let (a, b) = (dir.path().join("contour"), dir.path().join("l1"));
    assert_eq!(run_task("solve", &cfg, &a, &[]).status.code(), Some(0));
    let o = run_task("oracle", &cfg, &b, &["--override", "oracle.kind=\"l1\"", "--override", "oracle.dt=1e-3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = vofrac(&[
        "compare",
        a.join("solution.csv").to_str().unwrap(),
        b.join("solution.csv").to_str().unwrap(),
        "--tolerance",
        "1e-3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn dtn_csv_feeds_invert() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "plate.toml", PLATE);
    let d = dir.path().join("dtn");
    let o = run_task("dtn", &cfg, &d, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(d.join("dtn.csv")).unwrap();
    assert!(csv.starts_with("domain_tag,point_re,point_im,drive_id,boundary_node_index,flux_value\n"));

    let data = d.join("dtn.csv");
    let from_file = dir.path().join("inv_file");
    let o = run_task(
        "invert",
        &cfg,
        &from_file,
        &["--override", &format!("invert.data=\"{}\"", data.display())],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let synthetic = dir.path().join("inv_synth");
    assert_eq!(run_task("invert", &cfg, &synthetic, &[]).status.code(), Some(0));
    assert_eq!(
        fs::read(from_file.join("recovered.csv")).unwrap(),
        fs::read(synthetic.join("recovered.csv")).unwrap()
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(from_file.join("report.json")).unwrap()).unwrap();
    for k in ["alpha", "rho", "q"] {
        let e = report["results"]["relative_l2_vs_problem_coefficients"][k].as_f64().unwrap();
        assert!(e < 2e-2, "{k}: {e}");
    }
}

#[test]
fn invert_rejects_data_missing_an_extraction_point() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "plate.toml", PLATE);
    let d = dir.path().join("dtn");
    assert_eq!(
        run_task("dtn", &cfg, &d, &["--override", "dtn.points=[1e-6, 1.0]"]).status.code(),
        Some(0)
    );
    let o = run_task(
        "invert",
        &cfg,
        &dir.path().join("inv"),
        &["--override", &format!("invert.data=\"{}\"", d.join("dtn.csv").display())],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn time_domain_dtn_uses_the_default_schedule() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", VO);
    let d = dir.path().join("dtn");
    let o = run_task("dtn", &cfg, &d, &["--override", "dtn.domain=\"time\""]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(d.join("dtn.csv")).unwrap();
    // 2 drives x 12 times x 2 boundary nodes
    assert_eq!(csv.lines().count(), 1 + 2 * 12 * 2);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("time,")));
}

#[test]
fn resolvent_check_depends_only_on_the_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "vo.toml", &format!("{VO}\n[resolvent]\nsamples = 40\n"));
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = run_task("verify-resolvent", &cfg, &out, &["--seed", seed, "--threads", "2"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(out.join("resolvent.csv")).unwrap()
    };
    let a = run("a", "11");
    assert_eq!(a, run("b", "11"));
    assert_ne!(a, run("c", "12"));
}
