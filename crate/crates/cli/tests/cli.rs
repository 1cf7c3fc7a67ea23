use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_armguide"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/scenarios")
        .join(format!("{name}.toml"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ring_plan_succeeds_and_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .arg("plan")
        .arg("--config")
        .arg(scenario("ring"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("\"workspace_ok\": true"), "{out}");
    assert!(out.contains("\"collision_ok\": true"), "{out}");
    for f in [
        "body_path.csv",
        "ee_path.csv",
        "joints.csv",
        "trajectory.csv",
        "metrics.json",
        "guide_curve_0.json",
        "ee_curve_0.json",
        "ee_diagnostics_0.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let header = fs::read_to_string(dir.path().join("body_path.csv")).unwrap();
    assert!(header.starts_with("t,x,y,z"));
}

#[test]
fn malformed_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("ring"))
        .unwrap()
        .replace("[body]", "[body]\nmass = 2.0");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let o = run(bin()
        .arg("plan")
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mass"), "{}", stderr(&o));
}

#[test]
fn wrong_value_type_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("ring"))
        .unwrap()
        .replace("radius = 0.2", "radius = \"wide\"");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let o = run(bin()
        .arg("plan")
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("radius"), "{}", stderr(&o));
}

#[test]
fn start_inside_obstacle_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    // The corridor wall occupies x in [3.9, 4.1] away from the slots.
    let text = fs::read_to_string(scenario("corridor")).unwrap().replacen(
        "start = [1.0, 0.0, 1.5]",
        "start = [4.0, 1.0, 1.5]",
        1,
    );
    assert!(text.contains("[4.0, 1.0, 1.5]"));
    let path = dir.path().join("blocked.toml");
    fs::write(&path, text).unwrap();
    let o = run(bin()
        .arg("plan")
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("collision"));
}

#[test]
fn usage_errors_exit_one() {
    let o = run(bin().arg("plan"));
    assert_eq!(o.status.code(), Some(1));
    let o = run(bin().arg("frobnicate"));
    assert_eq!(o.status.code(), Some(1));
    let o = run(bin().args(["plan", "--scenario", "ring", "--mode", "sideways"]));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn default_compare_has_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().arg("compare").arg("--out").arg(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 7, "{out}");
    assert!(lines[0].starts_with("scenario,mode,success"));
    let summary = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("mean_arm_ms") && summary.contains("max_arm_ms"));
    assert!(dir.path().join("metrics.csv").is_file());
    assert!(dir.path().join("arm_times.csv").is_file());
}

/// Drops the timing columns from a metrics table.
fn non_timing(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| !(5..=7).contains(i))
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}

#[test]
fn compare_is_deterministic_outside_timing() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let o1 = run(bin()
        .arg("compare")
        .arg("--out")
        .arg(a.path())
        .env("RINGO_THREADS", "1"));
    let o2 = run(bin().arg("compare").arg("--out").arg(b.path()));
    assert_eq!(non_timing(&stdout(&o1)), non_timing(&stdout(&o2)));
}

#[test]
fn compare_failure_exits_three_and_keeps_table() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite.toml");
    fs::write(
        &suite,
        "scenarios = [\"narrow_gap\"]\nmodes = [\"proposed\", \"baseline\"]\n",
    )
    .unwrap();
    let o = run(bin()
        .arg("compare")
        .arg("--config")
        .arg(&suite)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("narrow_gap,proposed,true"));
    assert!(table.contains("narrow_gap,baseline,false"));
}

#[test]
fn check_passes_with_one_line_per_term() {
    let o = run(bin().arg("check"));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    for term in ["smoothness", "workspace", "yaw", "obstacle"] {
        let n = out
            .lines()
            .filter(|l| l.starts_with(&format!("grad_{term} ")))
            .count();
        assert_eq!(n, 1, "{out}");
    }
    assert!(out.lines().all(|l| l.contains("PASS")));
}

#[test]
fn perturbed_gradient_fails_check() {
    let o = run(bin().args(["check", "--perturb-gradient"]));
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL"));
    assert!(stderr(&o).contains("grad_"));
}

#[test]
fn map_dump_has_header_and_payload() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin()
        .args(["map", "--scenario", "narrow_gap", "--out"])
        .arg(dir.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = fs::read(dir.path().join("esdf.bin")).unwrap();
    let nl = bytes.iter().position(|b| *b == b'\n').unwrap();
    let header = std::str::from_utf8(&bytes[..nl]).unwrap();
    let dims: Vec<usize> = header
        .split_whitespace()
        .skip_while(|w| *w != "dims")
        .skip(1)
        .map(|w| w.parse().unwrap())
        .collect();
    assert_eq!(bytes.len() - nl - 1, 4 * dims.iter().product::<usize>());
    assert!(stdout(&o).starts_with("dims "));
}
