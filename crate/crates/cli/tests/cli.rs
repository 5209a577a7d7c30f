use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn grasprefine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasprefine"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &Path, name: &str, method: &str) -> String {
    let path = dir.join(format!("{name}.toml"));
    fs::write(
        &path,
        format!(
            "scene = \"builtin:sphere\"\nmethod = \"{method}\"\nrepetitions = 2\n\n[sampler]\nn_samples = 6\n\n[flow]\nn_steps = 4\n\n[mh]\nn_steps = 9\n"
        ),
    )
    .unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn run_writes_traces_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "flow", "flow");
    let out = dir.path().join("out");
    let o = grasprefine(&["run", &spec, "--out-dir", out.to_str().unwrap(), "--seed", "4", "--threshold", "0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("threshold = 0.3"));
    assert!(text.contains("seed = 4"));
    assert_eq!(fs::read_to_string(out.join("report.toml")).unwrap(), text);
    assert_eq!(fs::read_to_string(out.join("traces_rep1.jsonl")).unwrap().lines().count(), 6 * 5);
    assert_eq!(fs::read_to_string(out.join("table.csv")).unwrap().lines().count(), 3);
}

#[test]
fn seeded_runs_repeat_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "flow", "flow");
    let strip = |o: Output| -> String {
        stdout(&o).lines().filter(|l| !l.starts_with("wall_time_s")).collect::<Vec<_>>().join("\n")
    };
    let a = strip(grasprefine(&["run", &spec, "--seed", "9"]));
    let b = strip(grasprefine(&["run", &spec, "--seed", "9"]));
    let c = strip(grasprefine(&["run", &spec, "--seed", "10"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn compare_tabulates_and_matches_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let flow = write_spec(dir.path(), "flow", "flow");
    let mh = write_spec(dir.path(), "mh", "mh");
    let out = dir.path().join("cmp");
    let o = grasprefine(&["compare", &flow, &mh, "--budget-match", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("label,method,classifiers,steps"));
    assert!(lines[3].starts_with("mh@matched,mh,S,12,"));
    assert_eq!(fs::read_to_string(out.join("comparison.csv")).unwrap(), table);
    assert!(out.join("flow").join("report.toml").exists());
    assert!(out.join("mh_matched").join("report.toml").exists());
}

#[test]
fn compare_rejects_mismatched_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let flow = write_spec(dir.path(), "flow", "flow");
    let other = dir.path().join("box.toml");
    fs::write(&other, "scene = \"builtin:box\"\nmethod = \"mh\"\nrepetitions = 2\n[sampler]\nn_samples = 6\n").unwrap();
    let o = grasprefine(&["compare", &flow, other.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("different scene"));
}

#[test]
fn schema_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "scene = \"builtin:sphere\"\nmethod = \"flow\"\nsteps = 3\n").unwrap();
    let o = grasprefine(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml") && err.contains('3'), "{err}");
}

#[test]
fn oracle_check_reports_distances() {
    let dir = tempfile::tempdir().unwrap();
    let o = grasprefine(&[
        "oracle-check",
        "logistic1d",
        "--samples",
        "2000",
        "--steps",
        "2000",
        "--gamma",
        "1",
        "--eta",
        "0.001",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("target_tv = ["));
    assert!(dir.path().join("oracle_check.toml").exists());
    assert!(dir.path().join("logistic1d_target.bin").exists());
    assert!(!grasprefine(&["oracle-check", "banana"]).status.success());
}

#[test]
fn gradcheck_passes_on_a_bundled_scene() {
    let o = grasprefine(&["gradcheck", "--scene", "builtin:cylinder", "--poses", "50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.ends_with("(pass)")));
}
