//! End-to-end runs of the `crossflow` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TWO_CAV: &str = r#"{
  "weights": {"alpha": 1.0, "gamma": 0.0},
  "vehicles": [
    {"id": "cav1", "initial": {"x": -35.0, "y": -2.5, "theta": 0.0, "v": 10.0},
     "terminal": {"x": 35.0, "y": -2.5, "theta": 0.0}},
    {"id": "cav2", "initial": {"x": 2.5, "y": -35.0, "theta": 1.5707963267948966, "v": 10.0},
     "terminal": {"x": -35.0, "y": 2.5, "theta": 3.141592653589793}}
  ]
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossflow")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metric(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

const ARTIFACTS: [&str; 6] =
    ["trajectory.csv", "profiles.csv", "iterations.tsv", "validation.txt", "metrics.txt", "manifest.json"];

#[test]
fn bound_of_scenario_one() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(dir.path(), "two.json", TWO_CAV);
    let out = run(&["bound", s(&scn)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "4.268");
}

#[test]
fn bound_of_cruising_fleet_is_distance_over_speed() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(
        dir.path(),
        "cruise.json",
        r#"{"vehicles": [{"id": "a", "initial": {"x": -35.0, "y": -2.5, "theta": 0.0, "v": 25.0},
            "terminal": {"x": 35.0, "y": -2.5, "theta": 0.0}}]}"#,
    );
    let out = run(&["bound", s(&scn)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "2.800");
}

#[test]
fn bound_rejects_empty_fleet() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(dir.path(), "empty.json", r#"{"vehicles": []}"#);
    assert_eq!(code(&run(&["bound", s(&scn)])), 1);
}

#[test]
fn generate_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(code(&run(&["generate", "2", "--seed", "7", "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["generate", "2", "--seed", "7", "--out", s(&b)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let manifest = fs::read_to_string(dir.path().join("a.json.manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));

    let stdout_copy = run(&["generate", "2", "--seed", "7"]);
    assert_eq!(stdout_copy.stdout, fs::read(&a).unwrap());

    let big = dir.path().join("twelve.json");
    assert_eq!(code(&run(&["generate", "12", "--seed", "1", "--out", s(&big)])), 0);
    assert_eq!(code(&run(&["bound", s(&big)])), 0);
}

#[test]
fn generate_rejects_empty_fleet() {
    let out = run(&["generate", "0"]);
    assert_eq!(code(&out), 1);
    assert!(!stderr(&out).is_empty());
}

#[test]
fn unknown_flags_are_input_errors() {
    assert_eq!(code(&run(&["solve", "x.json", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn overlapping_start_is_an_input_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(
        dir.path(),
        "bad.json",
        r#"{"vehicles": [
            {"id": "a", "initial": {"x": -35.0, "y": -2.5, "theta": 0.0}, "terminal": {"x": 35.0, "y": -2.5, "theta": 0.0}},
            {"id": "b", "initial": {"x": -34.0, "y": -2.5, "theta": 0.0}, "terminal": {"x": 35.0, "y": 2.5, "theta": 0.0}}
        ]}"#,
    );
    let out = run(&["solve", s(&scn), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("vehicles[1]"), "{}", stderr(&out));
}

#[test]
fn iteration_cap_reports_non_convergence_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(dir.path(), "two.json", TWO_CAV);
    let out_dir = dir.path().join("o");
    let out = run(&["solve", s(&scn), "--max-iters", "2", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 2);
    for f in ARTIFACTS {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let metrics = fs::read_to_string(out_dir.join("metrics.txt")).unwrap();
    assert!(metrics.contains("solver_status\tmax_iters"), "{metrics}");
}

#[test]
fn solve_validate_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(dir.path(), "two.json", TWO_CAV);
    let a = dir.path().join("a");
    let out = run(&["solve", s(&scn), "--gamma", "0", "--out", s(&a)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics = fs::read_to_string(a.join("metrics.txt")).unwrap();
    let t = metric(&metrics, "crossing_time_s");
    assert!((4.268..4.8).contains(&t), "crossing time {t}");
    assert!(metric(&metrics, "min_pair_clearance_m") >= 0.08);

    // Validating the written trajectory reproduces the embedded report.
    let v = run(&["validate", s(&scn), s(&a.join("trajectory.csv"))]);
    assert_eq!(code(&v), 0);
    assert_eq!(stdout(&v), fs::read_to_string(a.join("validation.txt")).unwrap());

    // A second run and a manifest replay produce identical bytes.
    let b = dir.path().join("b");
    assert_eq!(code(&run(&["solve", s(&scn), "--gamma", "0", "--out", s(&b)])), 0);
    let c = dir.path().join("c");
    assert_eq!(code(&run(&["replay", s(&a.join("manifest.json")), "--out", s(&c)])), 0);
    for f in ARTIFACTS {
        let ref_bytes = fs::read(a.join(f)).unwrap();
        assert_eq!(ref_bytes, fs::read(b.join(f)).unwrap(), "{f} differs between runs");
        assert_eq!(ref_bytes, fs::read(c.join(f)).unwrap(), "{f} differs after replay");
    }

    // Shift cav2 onto cav1 for the whole horizon.
    let text = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    let cav1: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(1) == Some("cav1"))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    let mut edited = String::from(text.lines().next().unwrap());
    edited.push('\n');
    let mut cav2_index = 0;
    for line in text.lines().skip(1) {
        let mut cols: Vec<String> = line.split(',').map(str::to_string).collect();
        if cols[1] == "cav2" {
            let src = &cav1[cav2_index.min(cav1.len() - 1)];
            for c in 2..=7 {
                cols[c] = src[c].clone();
            }
            cav2_index += 1;
        }
        edited.push_str(&cols.join(","));
        edited.push('\n');
    }
    let overlap = write(dir.path(), "overlap.csv", &edited);
    let v = run(&["validate", s(&scn), s(&overlap)]);
    assert_eq!(code(&v), 3);
    assert!(stdout(&v).lines().any(|l| l.starts_with("pair_clearance\tcav1~cav2")), "{}", stdout(&v));

    let renamed = write(dir.path(), "renamed.csv", &text.replace(",cav2,", ",cav9,"));
    assert_eq!(code(&run(&["validate", s(&scn), s(&renamed)])), 1);
}

#[test]
fn sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(dir.path(), "two.json", TWO_CAV);
    let out_dir = dir.path().join("sweep");
    let out = run(&["sweep", s(&scn), "--gammas", "0,0.1,1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(out_dir.join("pareto.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[4] == "ok"), "{table}");
    assert!(rows.iter().any(|r| r[3] == "false"));
    let time = |r: &Vec<&str>| r[1].parse::<f64>().unwrap();
    let energy = |r: &Vec<&str>| r[2].parse::<f64>().unwrap();
    let mut front: Vec<&Vec<&str>> = rows.iter().filter(|r| r[3] == "false").collect();
    front.sort_by(|a, b| time(a).total_cmp(&time(b)));
    assert!(front.windows(2).all(|w| energy(w[1]) < energy(w[0])), "{table}");
    for r in &rows {
        let beaten = front.iter().any(|f| time(f) <= time(r) && energy(f) <= energy(r));
        assert!(beaten, "{table}");
    }

    let single = dir.path().join("single");
    assert_eq!(code(&run(&["sweep", s(&scn), "--gamma-range", "0.5:0.5:1", "--out", s(&single)])), 0);
    let table = fs::read_to_string(single.join("pareto.tsv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.lines().nth(1).unwrap().contains("\tfalse\tok"));

    let failed = dir.path().join("failed");
    let out = run(&["sweep", s(&scn), "--gammas", "0,1", "--max-iters", "2", "--out", s(&failed)]);
    assert_eq!(code(&out), 2);
    let table = fs::read_to_string(failed.join("pareto.tsv")).unwrap();
    assert_eq!(table.matches("failed:").count(), 2);
}
