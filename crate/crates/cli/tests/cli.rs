use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn capex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capex")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Completed count from the one-line run report.
fn completed(o: &Output) -> u32 {
    let s = stdout(o);
    let tail = s.split(", ").nth(1).unwrap_or_default();
    tail.split(' ').next().unwrap().parse().unwrap_or_else(|_| panic!("unexpected report {s}"))
}

fn run_into(dir: &Path, exploration: &str) -> Output {
    let o = capex(&["run", "--scenario", "waferfab20", "--exploration", exploration, "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn run_off_and_on_land_in_their_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let off = completed(&run_into(&tmp.path().join("off"), "off"));
    let on = completed(&run_into(&tmp.path().join("on"), "on"));
    assert!(off <= 18, "off {off}");
    assert!(on >= 20, "on {on}");
    for f in ["metrics.csv", "events.log", "summary.txt", "run.json", "plot.gp"] {
        assert!(tmp.path().join("on").join(f).is_file(), "{f} missing");
    }
    let summary = fs::read_to_string(tmp.path().join("on/summary.txt")).unwrap();
    assert!(summary.contains("M12"), "{summary}");

    let cmp = capex(&["compare", tmp.path().join("off").to_str().unwrap(), tmp.path().join("on").to_str().unwrap()]);
    assert!(cmp.status.success());
    let report = stdout(&cmp);
    assert!(report.contains(&format!("{off}")) && report.contains(&format!("{on}")), "{report}");
}

#[test]
fn validate_reports_ok_and_problems() {
    let ok = capex(&["validate", "example3robot"]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("ok"));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let mut text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/scenarios/example3robot.toml")).unwrap();
    text = text.replace("to = \"X7\"", "to = \"X70\"");
    fs::write(&bad, text).unwrap();
    let o = capex(&["validate", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("X70"), "{}", stdout(&o));
}

#[test]
fn missing_scenario_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let o = capex(&["run", "--scenario", "no-such-scenario", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = capex(&["run", "--policy", "service", "--out", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--service-url"));
}

#[test]
fn incompatible_runs_refuse_to_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_into(&a, "off");
    let o = capex(&["run", "--scenario", "example3robot", "--out", b.to_str().unwrap()]);
    assert!(o.status.success());
    let cmp = capex(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(!cmp.status.success());
}
