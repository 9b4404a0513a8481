use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_harvestgame"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

#[test]
fn gen_writes_paper_dimensions_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen", "--out", "ch.json"], dir.path());
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("ch.json")).unwrap();
    let ch = harvestgame::ChannelSet::from_json(&text).unwrap();
    assert_eq!((ch.k(), ch.mt(), ch.mr()), (3, 8, 8));
    assert_eq!(ch.to_json(), text);
}

#[test]
fn missing_field_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"k": 3, "l": 1, "mr": 8, "power_limits": [8,8,8], "energy_requirements": [70], "seed": 1}"#).unwrap();
    let out = run(&["gen", "--config", "c.json", "--out", "x.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("`mt`"));
}

#[test]
fn noncoop_run_records_classification() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", "--engine", "noncoop", "--gamma", "70", "--out", "t.csv"], dir.path());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("t.summary.json")).unwrap()).unwrap();
    let class = summary["classification"].as_str().unwrap();
    assert!(["converged-NE", "cycling"].contains(&class), "{class}");
    assert_eq!(out.status.success(), !summary["flagged"].as_bool().unwrap());
    let csv = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(csv.starts_with("iter,user,rate_1,rate_2,rate_3,sum_rate,energy_total,gamma_i,classification\n"));
}

#[test]
fn coop_run_reports_round_sum_rates() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"preset": "paper-K3", "k": 2, "mt": 4, "mr": 4, "power_limits": [8, 8], "energy_requirements": [20]}"#).unwrap();
    let out = run(&["run", "--engine", "coop", "--config", "c.json", "--out", "t.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert!(header.contains(&"round") && header.contains(&"sum_rate") && header.contains(&"msg_count"));
    let rounds: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rounds.len(), 5);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("t.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["round_sum_rates"].as_array().unwrap().len(), 5);
}

#[test]
fn multi_leave_event_blanks_the_price_column() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"k": 2, "mt": 4, "mr": 4, "power_limits": [8, 8], "energy_requirements": [10, 10], "seed": 5,
            "events": [{"iter": 3, "harvester_id": 1, "action": "leave"}]}"#,
    )
    .unwrap();
    run(&["run", "--engine", "multi", "--config", "c.json", "--out", "m.csv"], dir.path());
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "lambda_2").unwrap();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let iter: usize = cells[0].parse().unwrap();
        assert_eq!(cells[col].is_empty(), iter >= 3, "row {line}");
    }
}

#[test]
fn sweep_writes_traces_and_aggregate_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--engine", "noncoop", "--gamma", "50,60,70,80,90", "--out", "s"])
        .env("HARVESTGAME_THREADS", "1")
        .current_dir(a.path())
        .output()
        .unwrap();
    assert!(out.status.code().is_some());
    let b = tempfile::tempdir().unwrap();
    bin()
        .args(["sweep", "--engine", "noncoop", "--gamma", "50,60,70,80,90", "--out", "s"])
        .env("HARVESTGAME_THREADS", "4")
        .current_dir(b.path())
        .output()
        .unwrap();
    let agg = fs::read_to_string(a.path().join("s/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 6);
    for g in ["50", "60", "70", "80", "90"] {
        let name = format!("s/trace_gamma_{g}.csv");
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
    }
    assert_eq!(agg, fs::read_to_string(b.path().join("s/aggregate.csv")).unwrap());
    let report = run(&["report", "s"], a.path());
    assert_eq!(String::from_utf8_lossy(&report.stdout).lines().count(), 6);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        run(&["run", "--engine", "coop", "--seed", "4", "--out", name], dir.path());
    }
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn empty_requirement_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"preset": "paper-K3", "gammas": []}"#).unwrap();
    let out = run(&["sweep", "--engine", "noncoop", "--config", "c.json", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
