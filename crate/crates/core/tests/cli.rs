use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

use gatebench::cli::run_cli;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gatebench"))
}

fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo_root")
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_all(out: &Path) {
    let root = fixture_root();
    let plan = root.join("demo_plan.json");
    run_cli([
        "gatebench",
        "all",
        "--plan",
        s(&plan),
        "--release-root",
        s(&root),
        "--out",
        s(out),
    ])
    .unwrap();
}

#[test]
fn shipped_root_matches_init_root() {
    let tmp = tempfile::tempdir().unwrap();
    run_cli(["gatebench", "init-root", "--out", s(tmp.path())]).unwrap();
    assert_eq!(snapshot(tmp.path()), snapshot(&fixture_root()));
}

#[test]
fn all_on_demo_plan_pins_claim_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let before = snapshot(&fixture_root());
    run_all(tmp.path());
    assert_eq!(snapshot(&fixture_root()), before, "inputs must not change");
    let got = fs::read(tmp.path().join("report/claim_matrix.json")).unwrap();
    let want =
        fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/expected/demo_claim_matrix.json")).unwrap();
    assert_eq!(got, want);
    let matrix: Value = serde_json::from_slice(&got).unwrap();
    let decision = matrix["rows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["claim"] == "decision_study")
        .unwrap();
    assert_eq!(decision["status"], "supported");
    for f in [
        "latency.txt",
        "invalid_actions.txt",
        "study_report.txt",
        "claim_matrix.txt",
    ] {
        assert!(tmp.path().join("report").join(f).exists(), "{f}");
    }
}

#[test]
fn rerun_overwrites_with_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    run_all(tmp.path());
    let first = snapshot(tmp.path());
    run_all(tmp.path());
    assert_eq!(snapshot(tmp.path()), first);
}

#[test]
fn gate_excludes_fixture_row_and_report_checks_gate() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let root = fixture_root();
    run_cli([
        "gatebench",
        "run",
        "--plan",
        s(&root.join("demo_plan.json")),
        "--release-root",
        s(&root),
        "--out",
        s(&runs),
    ])
    .unwrap();
    let gate = tmp.path().join("gate");
    let index = runs.join("runset.json");
    run_cli([
        "gatebench",
        "gate",
        "--runset",
        s(&index),
        "--release-root",
        s(&root),
        "--out",
        s(&gate),
    ])
    .unwrap();
    let report: Value = serde_json::from_slice(&fs::read(gate.join("gate_report.json")).unwrap()).unwrap();
    assert!(report["canonical"]["excluded"].as_u64().unwrap() >= 1);
    assert_eq!(report["canonical"]["by_reason"]["fixture_only_provenance"], 1);
    assert_eq!(report["decision_study"]["admitted"], 4);
    let decisions: Vec<Value> = serde_json::from_slice(&fs::read(gate.join("decisions.json")).unwrap()).unwrap();
    assert_eq!(decisions.len(), 20);

    let out = tmp.path().join("report");
    run_cli([
        "gatebench",
        "report",
        "--runset",
        s(&index),
        "--gate",
        s(&gate),
        "--out",
        s(&out),
    ])
    .unwrap();
    assert!(out.join("claim_matrix.json").exists());

    // A gate report that disagrees with its decisions is refused.
    let mut tampered = report.clone();
    tampered["canonical"]["admitted"] = Value::from(99);
    fs::write(gate.join("gate_report.json"), serde_json::to_vec(&tampered).unwrap()).unwrap();
    let err = run_cli([
        "gatebench",
        "report",
        "--runset",
        s(&index),
        "--gate",
        s(&gate),
        "--out",
        s(&out),
    ])
    .unwrap_err();
    assert_eq!(err.code(), "gate_report_mismatch");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn replay_runset_and_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    run_all(tmp.path());
    let rep = tmp.path().join("replay");
    let root = fixture_root();
    run_cli([
        "gatebench",
        "replay",
        "--runset",
        s(&tmp.path().join("runset.json")),
        "--release-root",
        s(&root),
        "--class",
        "R1",
        "--out",
        s(&rep),
    ])
    .unwrap();
    let results: Vec<Value> = serde_json::from_slice(&fs::read(rep.join("replay_results.json")).unwrap()).unwrap();
    assert_eq!(results.len(), 6);
    for r in &results {
        assert_eq!(r["terminal_match"], true);
        assert!(r["reduction"].as_f64().unwrap() >= 0.99);
    }

    let err = run_cli([
        "gatebench",
        "replay",
        "--runset",
        s(&tmp.path().join("runset.json")),
        "--release-root",
        s(&root),
        "--class",
        "R9",
        "--out",
        s(&rep),
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn replay_single_bundle() {
    use gatebench::demo::{demo_plan, demo_release_root};
    use gatebench::exec::Execution;
    use gatebench::replay::build_bundle;
    use gatebench::runner::run_plan;

    let (root, store) = demo_release_root();
    let mut plan = demo_plan();
    plan.entries
        .retain(|e| e.task_id == "c-202" && e.driver_config_ref == "oracle");
    let set = run_plan(&plan, &root, &store, Execution::Sequential).unwrap();
    let bundle = build_bundle(&set.runs[0], &store).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bundle.json");
    fs::write(&path, serde_json::to_vec(&bundle).unwrap()).unwrap();
    let out = tmp.path().join("out");
    run_cli(["gatebench", "replay", "--bundle", s(&path), "--out", s(&out)]).unwrap();
    let result: Value =
        serde_json::from_slice(&fs::read(out.join(format!("replay_{}.json", bundle.run_id))).unwrap()).unwrap();
    assert_eq!(result["replay_class"], "R2");
    assert_eq!(result["terminal_match"], true);
}

#[test]
fn setting_flag_overrides_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let root = fixture_root();
    let mut plan = gatebench::demo::demo_plan();
    plan.entries.retain(|e| !e.driver_config_ref.contains("hook"));
    let plan_path = tmp.path().join("plan.json");
    fs::write(&plan_path, serde_json::to_vec(&plan).unwrap()).unwrap();
    run_cli([
        "gatebench",
        "all",
        "--plan",
        s(&plan_path),
        "--release-root",
        s(&root),
        "--out",
        s(&tmp.path().join("out")),
        "--setting",
        "medium_live_stressed",
    ])
    .unwrap();
    let gate: Value = serde_json::from_slice(&fs::read(tmp.path().join("out/gate/gate_report.json")).unwrap()).unwrap();
    // Stressed rows outside the decision study lack the decision label.
    assert_eq!(gate["canonical"]["admitted"], 0);
    assert!(
        gate["canonical"]["by_reason"]["missing_decision_label"]
            .as_u64()
            .unwrap()
            >= 15
    );
}

#[test]
fn binary_exit_codes_and_error_records() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let rec: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"], "usage");

    let tmp = tempfile::tempdir().unwrap();
    let target = tmp.path().join("never");
    let out = bin().args(["run", "--out", s(&target)]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!target.exists(), "usage errors leave no side effects");

    let out = bin()
        .args([
            "run",
            "--plan",
            "/no/such/plan.json",
            "--release-root",
            s(&fixture_root()),
            "--out",
            s(&target),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let rec: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(rec["error"], "io_error");

    let out = bin()
        .args(["study", "--grid", "nope", "--out", s(&target)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("init-root"));
}

#[test]
fn corrupted_log_is_quarantined_and_strictness_matters() {
    let tmp = tempfile::tempdir().unwrap();
    run_all(tmp.path());
    let index: Value = serde_json::from_slice(&fs::read(tmp.path().join("runset.json")).unwrap()).unwrap();
    let log_ref = index["runs"][10]["event_log_ref"].as_str().unwrap().to_string();
    let log = tmp.path().join(&log_ref);
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut ev: Value = serde_json::from_str(&lines[2]).unwrap();
    ev["payload"]["vendor_note"] = Value::from("x");
    lines[2] = ev.to_string();
    fs::write(&log, lines.join("\n") + "\n").unwrap();

    let gate_for = |strict: &str| {
        let out = tmp.path().join(format!("gate-{strict}"));
        run_cli([
            "gatebench",
            "gate",
            "--runset",
            s(&tmp.path().join("runset.json")),
            "--release-root",
            s(&fixture_root()),
            "--out",
            s(&out),
            &format!("--strict-schema={strict}"),
        ])
        .unwrap();
        let v: Value = serde_json::from_slice(&fs::read(out.join("gate_report.json")).unwrap()).unwrap();
        (
            v["canonical"]["quarantined"].as_u64().unwrap(),
            v["canonical"]["validation_failures"].as_u64().unwrap(),
        )
    };
    assert_eq!(gate_for("true"), (1, 1));
    assert_eq!(gate_for("false"), (0, 0));
}

#[test]
fn study_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_cli([
        "gatebench",
        "study",
        "--grid",
        "default",
        "--seed-base",
        "0",
        "--out",
        s(&a),
    ])
    .unwrap();
    run_cli([
        "gatebench",
        "study",
        "--grid",
        "default",
        "--seed-base",
        "0",
        "--out",
        s(&b),
        "--concurrency",
        "3",
    ])
    .unwrap();
    assert_eq!(snapshot(&a), snapshot(&b));
    let report: Value = serde_json::from_slice(&fs::read(a.join("study_report.json")).unwrap()).unwrap();
    assert_eq!(report["reversal_cells"], 12);
    assert_eq!(report["comparable_cells"], 12);
    assert_eq!(report["blocked"], 0);
}
