use std::collections::BTreeMap;
use std::sync::OnceLock;

use proptest::prelude::*;

use gatebench::demo::{demo_plan, demo_release_root};
use gatebench::drivers::{ControllerVariant, EvidenceStatus};
use gatebench::exec::Execution;
use gatebench::gate::{admit, gate_report, EvidenceStratum, GateDecision, ReportScope, Verdict};
use gatebench::manifest::{verify_binding, ReleaseRoot};
use gatebench::runner::{run_plan, ManifestStatus, RunRecord};

fn base() -> &'static (Vec<RunRecord>, ReleaseRoot) {
    static BASE: OnceLock<(Vec<RunRecord>, ReleaseRoot)> = OnceLock::new();
    BASE.get_or_init(|| {
        let (root, store) = demo_release_root();
        let mut plan = demo_plan();
        plan.entries.retain(|e| !e.driver_config_ref.contains("hook"));
        let set = run_plan(&plan, &root, &store, Execution::Sequential).unwrap();
        let records = set
            .runs
            .into_iter()
            .map(|r| r.record)
            .filter(|r| r.driver.evidence_status != EvidenceStatus::FixtureBacked)
            .collect();
        (records, root)
    })
}

/// Up to four corruptions, chosen by bit.
fn corrupt(r: &mut RunRecord, bits: u8) {
    if bits & 1 != 0 {
        r.manifest_status = ManifestStatus::Unresolved;
    }
    if bits & 2 != 0 {
        r.terminal = None;
    }
    if bits & 4 != 0 {
        r.driver.evidence_status = EvidenceStatus::SmokeOnly;
    }
    if bits & 8 != 0 {
        r.trace_complete = false;
    }
}

fn decide(r: &RunRecord, root: &ReleaseRoot) -> GateDecision {
    admit(r, &verify_binding(r, root))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn report_matches_hand_tally(picks in prop::collection::vec((0usize..100, 0u8..16), 40)) {
        let (records, root) = base();
        let mut runs = Vec::new();
        for (i, (pick, bits)) in picks.iter().enumerate() {
            let mut r = records[pick % records.len()].clone();
            r.run_id = format!("run-{i:02}");
            corrupt(&mut r, *bits);
            runs.push(r);
        }
        let decisions: Vec<GateDecision> = runs.iter().map(|r| decide(r, root)).collect();
        let refs: Vec<&RunRecord> = runs.iter().collect();
        let rep = gate_report(&refs, &decisions, ReportScope::Canonical).unwrap();

        let mut admitted = 0;
        let mut quarantined = 0;
        let mut failures = 0;
        let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
        for (r, (_, bits)) in runs.iter().zip(&picks) {
            let mut expect = Vec::new();
            if bits & 1 != 0 { expect.push("unresolved_manifest"); }
            if bits & 2 != 0 { expect.push("missing_terminal_outcome"); }
            if bits & 4 != 0 { expect.push("smoke_only"); }
            if bits & 8 != 0 { expect.push("incomplete_trace"); failures += 1; }
            if expect.is_empty() { admitted += 1; }
            if *bits == 8 { quarantined += 1; }
            for e in expect { *reasons.entry(e.to_string()).or_default() += 1; }
            let d = decide(r, root);
            prop_assert_eq!(d.is_admitted(), *bits == 0);
            prop_assert_eq!(d.reasons.is_empty(), d.verdict == Verdict::Admitted);
        }
        prop_assert_eq!(rep.indexed, 40);
        prop_assert_eq!(rep.admitted, admitted);
        prop_assert_eq!(rep.excluded, 40 - admitted);
        prop_assert_eq!(rep.quarantined, quarantined);
        prop_assert_eq!(rep.validation_failures, failures);
        let got: BTreeMap<String, usize> = rep.by_reason.iter().map(|(k, v)| (k.as_str().to_string(), *v)).collect();
        prop_assert_eq!(got, reasons);
        prop_assert!(rep.by_reason.values().sum::<usize>() >= rep.excluded);
    }

    #[test]
    fn gate_is_order_independent(seed in any::<u64>()) {
        let (records, root) = base();
        let mut perm: Vec<usize> = (0..records.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let forward: BTreeMap<String, GateDecision> =
            records.iter().map(|r| (r.run_id.clone(), decide(r, root))).collect();
        for &i in &perm {
            let r = &records[i];
            prop_assert_eq!(&decide(r, root), &forward[&r.run_id]);
        }
    }
}

#[test]
fn decision_rows_stay_out_of_canonical_counts() {
    let (records, root) = base();
    let mut runs: Vec<RunRecord> = records.clone();
    let mut ctl = records[0].clone();
    ctl.run_id = "controller".into();
    ctl.variant = Some(ControllerVariant::HookBOnly);
    runs.push(ctl);
    let decisions: Vec<GateDecision> = runs.iter().map(|r| decide(r, root)).collect();
    let refs: Vec<&RunRecord> = runs.iter().collect();
    let canonical = gate_report(&refs, &decisions, ReportScope::Canonical).unwrap();
    let study = gate_report(&refs, &decisions, ReportScope::DecisionStudy).unwrap();
    assert_eq!(canonical.indexed, records.len());
    assert!(!canonical.by_stratum.contains_key(&EvidenceStratum::DecisionStudy));
    assert_eq!(study.indexed, 1);
    assert_eq!(study.by_stratum[&EvidenceStratum::DecisionStudy], 1);
}
