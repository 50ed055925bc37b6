use std::path::Path;
use std::process::{Command, Output};

const FIG1: &str = "p cnf 4 4\n1 2 -3 0\n1 3 4 0\n-2 -3 0\n-3 -4 0\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tnwmc")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn count_prints_result_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "fig1.cnf", FIG1);
    let plan = dir.path().join("plan.txt");
    let out = run(&["count", &f, "--plan-out", plan.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l == "s wmc 7"), "{stdout}");
    assert!(stdout.lines().filter(|l| !l.starts_with("c ")).count() == 1);
    assert!(std::fs::read_to_string(plan).unwrap().contains("contract"));
}

#[test]
fn weighted_count() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "w.cnf", "p cnf 2 1\n1 2 0\nw 1 0.3 0.7\nw 2 0.4 0.6\n");
    let out = run(&["count", &f, "--planner", "portfolio"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let line = stdout.lines().find(|l| l.starts_with("s wmc ")).unwrap();
    let v: f64 = line[6..].parse().unwrap();
    assert!((v - 0.88).abs() < 1e-12);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.cnf", "p cnf 2 1\n1 5 0\n");
    assert_eq!(run(&["count", &bad]).status.code(), Some(2));
    assert_eq!(run(&["count", "/nonexistent/file.cnf"]).status.code(), Some(2));
    let f = write(dir.path(), "fig1.cnf", FIG1);
    assert_eq!(run(&["count", &f, "--mem-budget", "8"]).status.code(), Some(20));
    assert_eq!(run(&["count", &f, "--planner", "bogus"]).status.code(), Some(2));
    assert_eq!(run(&["count", &f, "--timeout", "0"]).status.code(), Some(2));
}

#[test]
fn bench_reports_par2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.cnf", FIG1);
    write(dir.path(), "b.cnf", "p cnf 1 1\n1 0\n");
    let out = run(&["bench", dir.path().to_str().unwrap(), "--timeout", "30"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("c a.cnf"));
    assert!(stdout.contains("solved 2 of 2"), "{stdout}");

    let empty = tempfile::tempdir().unwrap();
    let out = run(&["bench", empty.path().to_str().unwrap()]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("s par2 0.000000 solved 0 of 0"));
}
