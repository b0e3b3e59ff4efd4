use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ccdi::spike::synthetic;
use serde_json::Value;
use tempfile::TempDir;

fn ccdi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccdi")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn records(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn simulate(dir: &Path, length: usize, seed: u64) {
    let o = ccdi(&[
        "simulate",
        "--builtin",
        "lagged-xor",
        "--length",
        &length.to_string(),
        "--seed",
        &seed.to_string(),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn simulate_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    simulate(a.path(), 5000, 11);
    simulate(b.path(), 5000, 11);
    for f in ["x.txt", "y.txt", "z.txt"] {
        let (fa, fb) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        assert_eq!(fa, fb, "{f}");
    }
    let x = fs::read_to_string(a.path().join("x.txt")).unwrap();
    assert!(x.starts_with("# alphabet: 2\n"));
    assert_eq!(x.lines().filter(|l| !l.starts_with('#')).count(), 5000);
}

#[test]
fn conditional_test_detects_influence() {
    let d = TempDir::new().unwrap();
    simulate(d.path(), 200_000, 3);
    let dir = d.path();
    let o = ccdi(&[
        "test", "--x", &p(dir, "x.txt"), "--y", &p(dir, "y.txt"), "--z", &p(dir, "z.txt"), "--mode", "cc", "--k", "3",
        "--self-check",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &records(&String::from_utf8_lossy(&o.stdout))[0];
    assert_eq!(r["record"], "test_result");
    assert_eq!(r["schema"], 1);
    assert_eq!(r["dof"], 1920);
    assert_eq!(r["reject"], true);
    assert!(r["p_value"].as_f64().unwrap() < 1e-4);
    assert!(stderr(&o).contains("self-check passed"));

    // unconditional at k = 2: a non-rejection is still a success
    let out = p(dir, "uc.jsonl");
    let o = ccdi(&["test", "--x", &p(dir, "x.txt"), "--y", &p(dir, "y.txt"), "--mode", "uc", "--k", "2", "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &records(&fs::read_to_string(&out).unwrap())[0];
    assert_eq!(r["mode"], "uc");
    assert_eq!(r["dof"], 28);
    assert_eq!(r["n"], 199_998);
}

#[test]
fn malformed_symbol_names_its_line() {
    let d = TempDir::new().unwrap();
    let f = p(d.path(), "bad.txt");
    fs::write(&f, "# alphabet: 2\n0\n1\nq\n").unwrap();
    let o = ccdi(&["test", "--x", &f, "--y", &f, "--mode", "uc", "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn alphabet_header_is_checked() {
    let d = TempDir::new().unwrap();
    let f = p(d.path(), "s.txt");
    fs::write(&f, "# alphabet: 3\n0\n1\n2\n").unwrap();
    let o = ccdi(&["test", "--x", &f, "--y", &f, "--mode", "uc", "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = ccdi(&["test", "--x", &f, "--y", &f, "--mode", "uc", "--k", "0", "--alphabet", "3,3,1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn usage_and_configuration_errors() {
    let o = ccdi(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let d = TempDir::new().unwrap();
    let o = ccdi(&["simulate", "--builtin", "lagged-xor", "--length", "0", "--seed", "1", "--out-dir", &p(d.path(), "o")]);
    assert_eq!(o.status.code(), Some(1));
    // a seed is mandatory
    let o = ccdi(&["simulate", "--builtin", "lagged-xor", "--length", "10", "--out-dir", &p(d.path(), "o")]);
    assert_eq!(o.status.code(), Some(1));
    let o = ccdi(&["validate-null", "--builtin", "lagged-xor", "--mode", "cc", "--k", "3", "--reps", "5", "--length", "500", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("0.6103"), "{}", stderr(&o));
}

#[test]
fn model_file_with_bad_row_cites_the_row() {
    let d = TempDir::new().unwrap();
    let m = p(d.path(), "m.txt");
    fs::write(&m, "model table\nalphabet 2 2 1\norder 1\nrow 0.25 0.25 0.25 0.25\nrow 0.5 0.5 0.5 0\n").unwrap();
    let o = ccdi(&["simulate", "--model", &m, "--length", "100", "--seed", "1", "--out-dir", &p(d.path(), "o")]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("row 1") && err.contains("line 5"), "{err}");
}

#[test]
fn null_validation_ignores_worker_count() {
    let d = TempDir::new().unwrap();
    let run = |workers: &str, name: &str| {
        let out = p(d.path(), name);
        let o = ccdi(&[
            "--workers", workers, "validate-null", "--builtin", "lagged-xor", "--mode", "uc", "--k", "1", "--reps", "40",
            "--length", "2000", "--seed", "5", "--out", &out,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let (one, four) = (run("1", "a.jsonl"), run("4", "b.jsonl"));
    assert_eq!(one, four);
    let r = &records(std::str::from_utf8(&one).unwrap())[0];
    assert_eq!(r["record"], "null_validation");
    assert_eq!(r["dof"], 6);
}

#[test]
fn trajectory_and_exact_rate() {
    let d = TempDir::new().unwrap();
    simulate(d.path(), 10_000, 8);
    let dir = d.path();
    let o = ccdi(&[
        "trajectory", "--x", &p(dir, "x.txt"), "--y", &p(dir, "y.txt"), "--z", &p(dir, "z.txt"), "--k", "3", "--grid",
        "1000,4000,9997",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pts = records(&String::from_utf8_lossy(&o.stdout));
    assert_eq!(pts.len(), 3);
    assert_eq!(pts[2]["n"], 9997);
    let o = ccdi(&["trajectory", "--x", &p(dir, "x.txt"), "--y", &p(dir, "y.txt"), "--z", &p(dir, "z.txt"), "--k", "3", "--grid", "20000"]);
    assert_eq!(o.status.code(), Some(1));

    for name in ["lagged-xor", "section4"] {
        let o = ccdi(&["exact-rate", "--builtin", name, "--k", "3"]);
        let r = &records(&String::from_utf8_lossy(&o.stdout))[0];
        assert!((r["value"].as_f64().unwrap() - 0.6103).abs() < 5e-4);
    }
}

#[test]
fn dichotomy_and_normality_commands() {
    let o = ccdi(&["dichotomy", "--builtin", "lagged-xor", "--case", "null:uc:1", "--octaves", "8:11", "--reps", "10", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &records(&String::from_utf8_lossy(&o.stdout))[0];
    assert_eq!(r["high_variance"], true);
    assert_eq!(r["regimes"][0]["n_grid"].as_array().unwrap().len(), 4);

    let o = ccdi(&["normality", "--builtin", "lagged-xor", "--k", "3", "--length", "5000", "--reps", "8", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = ccdi(&["normality", "--builtin", "lagged-xor", "--k", "2", "--length", "5000", "--reps", "8", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scan_recovers_planted_direction() {
    let d = TempDir::new().unwrap();
    let session = synthetic::planted_pair(20, 1000, 0.2, 0.01, 4).unwrap();
    let mut files = Vec::new();
    for u in &session.units {
        let f = p(d.path(), &format!("{}.spk", u.unit_id));
        fs::write(&f, u.to_text()).unwrap();
        files.push(f);
    }
    let out = p(d.path(), "scan.jsonl");
    let mut args = vec!["scan", "--units"];
    args.extend(files.iter().map(String::as_str));
    args.extend(["--shift-lag", "10", "--out", &out]);
    let o = ccdi(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = fs::read(&out).unwrap();
    let rows = records(std::str::from_utf8(&first).unwrap());
    assert_eq!(rows.len(), 3);
    let ab = rows.iter().find(|r| r["direction"] == "A -> B").unwrap();
    assert!(ab["result"]["p_value"].as_f64().unwrap() < 1e-4);
    assert!(ab["shifted"].is_object());
    assert_eq!(rows[2]["record"], "scan_summary");
    assert!(stderr(&o).contains("rejected"));

    // identical inputs give identical bytes
    let o = ccdi(&args);
    assert!(o.status.success());
    assert_eq!(fs::read(&out).unwrap(), first);

    let o = ccdi(&["scan", "--units", &files[0], &files[1], "--policy", "events"]);
    assert_eq!(o.status.code(), Some(1));
    let o = ccdi(&["scan", "--units", &files[0], &files[1], "--policy", "unit:nope"]);
    assert_eq!(o.status.code(), Some(1));
}
