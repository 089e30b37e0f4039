use fedtrust::harness::report::RunReport;
use fedtrust::registry::Snapshot;
use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedtrust"))
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

#[test]
fn run_writes_a_passing_json_report() {
    let out = bin().args(["run", "--config"]).arg(scenario("adversarial")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = RunReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(report.passed);
    assert_eq!(report.scenario, "adversarial");
}

#[test]
fn seed_override_changes_identities_not_outcomes() {
    let run = |seed: &str| {
        let out = bin()
            .args(["run", "--seed", seed, "--config"])
            .arg(scenario("baseline"))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        RunReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap()
    };
    let (a, b) = (run("1"), run("2"));
    assert_eq!((a.seed, b.seed), (1, 2));
    assert_ne!(a.agents[0].public_did, b.agents[0].public_did);
    assert_eq!(a.batches, b.batches);
}

#[test]
fn table_output_and_report_rendering() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let status = bin()
        .args(["run", "--format", "json", "--config"])
        .arg(scenario("baseline"))
        .arg("--out")
        .arg(&json)
        .status()
        .unwrap();
    assert!(status.success());
    let out = bin().args(["report", "--input"]).arg(&json).output().unwrap();
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success());
    for row in ["True Positives", "False Positives", "True Negatives", "False Negatives"] {
        assert!(table.contains(row), "{table}");
    }
    assert!(table.contains("not measured"));
}

#[test]
fn bootstrap_registry_feeds_run() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("registry.json");
    let status = bin()
        .args(["bootstrap-registry", "--config"])
        .arg(scenario("baseline"))
        .arg("--out")
        .arg(&snap)
        .status()
        .unwrap();
    assert!(status.success());
    let snapshot: Snapshot = serde_json::from_str(&std::fs::read_to_string(&snap).unwrap()).unwrap();
    assert_eq!(snapshot.dids.len(), 2);
    assert_eq!(snapshot.schemas.len(), 2);
    let with = bin()
        .args(["run", "--config"])
        .arg(scenario("baseline"))
        .arg("--registry")
        .arg(&snap)
        .output()
        .unwrap();
    let without = bin().args(["run", "--config"]).arg(scenario("baseline")).output().unwrap();
    assert!(with.status.success());
    assert_eq!(with.stdout, without.stdout);
}

#[test]
fn exit_codes() {
    let ok = bin().args(["validate-config", "--config"]).arg(scenario("revoked")).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("baseline")).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text.replace("\"role\": \"researcher\"", "\"role\": \"hospital\"")).unwrap();
    let out = bin().args(["validate-config", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("researcher"));

    let starved = dir.path().join("starved.json");
    std::fs::write(&starved, text.replace("\"dispatch_budget\": 10000", "\"dispatch_budget\": 2")).unwrap();
    let out = bin().args(["run", "--config"]).arg(&starved).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
