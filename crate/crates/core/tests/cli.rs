use std::path::Path;
use std::process::{Command, Output};

fn dpalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpalloc"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tau_prints_threshold() {
    let out = dpalloc(&["tau", "--epsilon", "0.1", "--delta", "0.05"]);
    assert!(out.status.success());
    let v: f64 = String::from_utf8(out.stdout)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((v - 20f64.ln() / 0.1).abs() < 1e-9);

    let bad = dpalloc(&["tau", "--epsilon", "0", "--delta", "0.05"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn synth_then_run_csv_long() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("india.csv");
    let out = dir.path().join("report.csv");
    let s = dpalloc(&[
        "synth",
        "--profile",
        "india-like",
        "--n",
        "12",
        "--seed",
        "3",
        "--out",
        path(&data),
    ]);
    assert!(s.status.success());
    let r = dpalloc(&[
        "run",
        "--problem",
        "apportionment",
        "--mechanism",
        "laplace",
        "--epsilon",
        "0.001,1",
        "--trials",
        "20",
        "--seed",
        "1",
        "--data",
        path(&data),
        "--out",
        path(&out),
        "--format",
        "csv-long",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("assignee,epsilon,metric,value"));
    let per_assignee = lines.filter(|l| !l.starts_with(',')).count();
    // 12 states, 2 budgets, 2 default metrics
    assert_eq!(per_assignee, 12 * 2 * 2);
}

#[test]
fn repair_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let vra = dir.path().join("vra.csv");
    std::fs::write(
        &vra,
        "assignee,vac,lep,lit\nj1,100000,12000,900\nj2,40000,100,1\nj3,9000,600,20\n",
    )
    .unwrap();
    let out = dir.path().join("vra.json");
    let r = dpalloc(&[
        "repair",
        "vra",
        "--p",
        "0.3",
        "--samples",
        "200",
        "--epsilon",
        "0.1",
        "--trials",
        "10",
        "--seed",
        "4",
        "--data",
        path(&vra),
        "--out",
        path(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["config_echo"]["pipeline"][1], "posterior_repair");

    let t1 = dir.path().join("t1.csv");
    let s = dpalloc(&[
        "synth",
        "--profile",
        "florida-like",
        "--n",
        "30",
        "--seed",
        "1",
        "--out",
        path(&t1),
    ]);
    assert!(s.status.success());
    let out = dir.path().join("t1.json");
    let r = dpalloc(&[
        "repair",
        "title1",
        "--delta",
        "0.05",
        "--epsilon",
        "0.1",
        "--trials",
        "10",
        "--data",
        path(&t1),
        "--out",
        path(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let t1 = dir.path().join("tiny.csv");
    std::fs::write(&t1, "assignee,eli,exp\na,10,1\nb,20,1\n").unwrap();
    let out = dir.path().join("o.json");

    // slack total exceeds the population: degenerate configuration
    let r = dpalloc(&[
        "repair",
        "title1",
        "--delta",
        "0.05",
        "--epsilon",
        "0.01",
        "--trials",
        "5",
        "--data",
        path(&t1),
        "--out",
        path(&out),
    ]);
    assert_eq!(
        r.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "assignee,eli,exp\na,10,1\na,20,1\n").unwrap();
    let r = dpalloc(&[
        "run",
        "--problem",
        "title1",
        "--mechanism",
        "laplace",
        "--epsilon",
        "1",
        "--data",
        path(&bad),
        "--out",
        path(&out),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 3"));

    let r = dpalloc(&[
        "run",
        "--problem",
        "title1",
        "--mechanism",
        "dlaplace",
        "--epsilon",
        "1",
        "--data",
        path(&t1),
        "--out",
        path(&out),
    ]);
    assert_eq!(r.status.code(), Some(2));

    let r = dpalloc(&["run", "--problem", "nope"]);
    assert_eq!(r.status.code(), Some(2));
}
