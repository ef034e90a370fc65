//! Evidence admission: which runs may back quantitative claims, and in which
//! stratum they are counted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::drivers::{DriverType, EvidenceStatus};
use crate::exec::{ordered_map, Execution};
use crate::manifest::{verify_binding, BindingStatus, BindingViolation, ReleaseRoot};
use crate::runner::{ManifestStatus, RunRecord, RunSet};
use crate::simenv::SettingLabel;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GateError {
    #[error("decision_set_mismatch: {0}")]
    DecisionSetMismatch(String),
}

impl GateError {
    pub fn code(&self) -> &'static str {
        match self {
            GateError::DecisionSetMismatch(_) => "decision_set_mismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Admitted,
    Rejected,
    Quarantined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnresolvedManifest,
    MissingDriverMetadata,
    IncompleteTrace,
    MissingTerminalOutcome,
    MissingReleaseBinding,
    SnapshotMismatch,
    VersionMismatch,
    MissingReplayFreeze,
    FixtureOnlyProvenance,
    SmokeOnly,
    InvalidSample,
    RetryBudgetViolation,
    /// A stressed-setting row that is not part of a decision study.
    MissingDecisionLabel,
}

impl RejectReason {
    pub const ALL: [RejectReason; 13] = [
        RejectReason::UnresolvedManifest,
        RejectReason::MissingDriverMetadata,
        RejectReason::IncompleteTrace,
        RejectReason::MissingTerminalOutcome,
        RejectReason::MissingReleaseBinding,
        RejectReason::SnapshotMismatch,
        RejectReason::VersionMismatch,
        RejectReason::MissingReplayFreeze,
        RejectReason::FixtureOnlyProvenance,
        RejectReason::SmokeOnly,
        RejectReason::InvalidSample,
        RejectReason::RetryBudgetViolation,
        RejectReason::MissingDecisionLabel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::UnresolvedManifest => "unresolved_manifest",
            RejectReason::MissingDriverMetadata => "missing_driver_metadata",
            RejectReason::IncompleteTrace => "incomplete_trace",
            RejectReason::MissingTerminalOutcome => "missing_terminal_outcome",
            RejectReason::MissingReleaseBinding => "missing_release_binding",
            RejectReason::SnapshotMismatch => "snapshot_mismatch",
            RejectReason::VersionMismatch => "version_mismatch",
            RejectReason::MissingReplayFreeze => "missing_replay_freeze",
            RejectReason::FixtureOnlyProvenance => "fixture_only_provenance",
            RejectReason::SmokeOnly => "smoke_only",
            RejectReason::InvalidSample => "invalid_sample",
            RejectReason::RetryBudgetViolation => "retry_budget_violation",
            RejectReason::MissingDecisionLabel => "missing_decision_label",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceStratum {
    RealTaskAnchor,
    LlmDriver,
    BoundedExtensionOrDiagnostic,
    DecisionStudy,
    NonPaperFacing,
}

impl EvidenceStratum {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceStratum::RealTaskAnchor => "real_task_anchor",
            EvidenceStratum::LlmDriver => "llm_driver",
            EvidenceStratum::BoundedExtensionOrDiagnostic => "bounded_extension_or_diagnostic",
            EvidenceStratum::DecisionStudy => "decision_study",
            EvidenceStratum::NonPaperFacing => "non_paper_facing",
        }
    }
}

impl fmt::Display for EvidenceStratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub run_id: String,
    pub verdict: Verdict,
    pub reasons: Vec<RejectReason>,
    pub stratum: EvidenceStratum,
}

impl GateDecision {
    pub fn is_admitted(&self) -> bool {
        self.verdict == Verdict::Admitted
    }
}

fn binding_reason(v: BindingViolation) -> RejectReason {
    match v {
        BindingViolation::SnapshotMismatch => RejectReason::SnapshotMismatch,
        BindingViolation::MissingSchemaVersion | BindingViolation::VersionMismatch => RejectReason::VersionMismatch,
        BindingViolation::MissingVersionField | BindingViolation::MissingReplayFreeze => {
            RejectReason::MissingReplayFreeze
        }
        BindingViolation::MissingReleaseBinding => RejectReason::MissingReleaseBinding,
    }
}

pub fn stratify(run: &RunRecord) -> EvidenceStratum {
    let d = &run.driver;
    match d.evidence_status {
        EvidenceStatus::FixtureBacked | EvidenceStatus::SmokeOnly => return EvidenceStratum::NonPaperFacing,
        _ if run.is_controller() => return EvidenceStratum::DecisionStudy,
        EvidenceStatus::Diagnostic => return EvidenceStratum::BoundedExtensionOrDiagnostic,
        EvidenceStatus::PaperFacing => {}
    }
    match d.driver_type {
        DriverType::Llm => EvidenceStratum::LlmDriver,
        DriverType::Sanity => EvidenceStratum::BoundedExtensionOrDiagnostic,
        DriverType::Scripted | DriverType::Calibration | DriverType::Controller => EvidenceStratum::RealTaskAnchor,
    }
}

/// Admitted iff every admission condition holds; every failed condition is
/// recorded. A run failing only on trace completeness is quarantined.
pub fn admit(run: &RunRecord, binding: &BindingStatus) -> GateDecision {
    let mut reasons = BTreeSet::new();
    if run.manifest_status != ManifestStatus::Resolved {
        reasons.insert(RejectReason::UnresolvedManifest);
    }
    if !run.driver.is_declared() {
        reasons.insert(RejectReason::MissingDriverMetadata);
    }
    if !run.trace_complete {
        reasons.insert(RejectReason::IncompleteTrace);
    }
    if run.terminal.is_none() {
        reasons.insert(RejectReason::MissingTerminalOutcome);
    }
    reasons.extend(binding.violations().iter().copied().map(binding_reason));
    match run.driver.evidence_status {
        EvidenceStatus::FixtureBacked => {
            reasons.insert(RejectReason::FixtureOnlyProvenance);
        }
        EvidenceStatus::SmokeOnly => {
            reasons.insert(RejectReason::SmokeOnly);
        }
        _ => {}
    }
    if run.invalid_sample {
        reasons.insert(RejectReason::InvalidSample);
    }
    if run.retry_budget_violation {
        reasons.insert(RejectReason::RetryBudgetViolation);
    }
    if run.setting_label != SettingLabel::Clean.as_str() && !run.is_controller() {
        reasons.insert(RejectReason::MissingDecisionLabel);
    }
    let reasons: Vec<_> = reasons.into_iter().collect();
    let verdict = match reasons.as_slice() {
        [] => Verdict::Admitted,
        [RejectReason::IncompleteTrace] => Verdict::Quarantined,
        _ => Verdict::Rejected,
    };
    GateDecision {
        run_id: run.run_id.clone(),
        verdict,
        reasons,
        stratum: stratify(run),
    }
}

/// Gate every run of a set against its release root.
pub fn gate_runset(runset: &RunSet, root: &ReleaseRoot, exec: Execution) -> Vec<GateDecision> {
    ordered_map(&runset.runs, exec, |r| {
        admit(&r.record, &verify_binding(&r.record, root))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportScope {
    /// The general evidence surface; decision-study rows are excluded.
    Canonical,
    /// Decision-study rows only.
    DecisionStudy,
}

impl ReportScope {
    pub fn includes(self, stratum: EvidenceStratum) -> bool {
        match self {
            ReportScope::Canonical => stratum != EvidenceStratum::DecisionStudy,
            ReportScope::DecisionStudy => stratum == EvidenceStratum::DecisionStudy,
        }
    }

    pub fn planned_strata(self) -> &'static [EvidenceStratum] {
        match self {
            ReportScope::Canonical => &[
                EvidenceStratum::RealTaskAnchor,
                EvidenceStratum::LlmDriver,
                EvidenceStratum::BoundedExtensionOrDiagnostic,
            ],
            ReportScope::DecisionStudy => &[EvidenceStratum::DecisionStudy],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateReport {
    pub scope: ReportScope,
    pub indexed: usize,
    pub admitted: usize,
    pub excluded: usize,
    pub quarantined: usize,
    pub by_reason: BTreeMap<RejectReason, usize>,
    /// Admitted rows per stratum.
    pub by_stratum: BTreeMap<EvidenceStratum, usize>,
    pub missing_strata: Vec<EvidenceStratum>,
    pub validation_failures: usize,
}

/// Aggregate decisions for the rows in `scope`. Every run needs exactly one
/// decision, matched by run id.
pub fn gate_report(
    runs: &[&RunRecord],
    decisions: &[GateDecision],
    scope: ReportScope,
) -> Result<GateReport, GateError> {
    if runs.len() != decisions.len() {
        return Err(GateError::DecisionSetMismatch(format!(
            "{} runs, {} decisions",
            runs.len(),
            decisions.len()
        )));
    }
    let mut by_id: BTreeMap<&str, &GateDecision> = BTreeMap::new();
    for d in decisions {
        if by_id.insert(d.run_id.as_str(), d).is_some() {
            return Err(GateError::DecisionSetMismatch(format!(
                "duplicate decision {}",
                d.run_id
            )));
        }
    }
    let mut report = GateReport {
        scope,
        indexed: 0,
        admitted: 0,
        excluded: 0,
        quarantined: 0,
        by_reason: BTreeMap::new(),
        by_stratum: BTreeMap::new(),
        missing_strata: Vec::new(),
        validation_failures: 0,
    };
    for run in runs {
        let d = by_id
            .get(run.run_id.as_str())
            .ok_or_else(|| GateError::DecisionSetMismatch(format!("no decision for {}", run.run_id)))?;
        if !scope.includes(d.stratum) {
            continue;
        }
        report.indexed += 1;
        if !run.trace_complete {
            report.validation_failures += 1;
        }
        if d.is_admitted() {
            report.admitted += 1;
            *report.by_stratum.entry(d.stratum).or_default() += 1;
        } else {
            report.excluded += 1;
            if d.verdict == Verdict::Quarantined {
                report.quarantined += 1;
            }
            for r in &d.reasons {
                *report.by_reason.entry(*r).or_default() += 1;
            }
        }
    }
    report.missing_strata = scope
        .planned_strata()
        .iter()
        .copied()
        .filter(|s| !report.by_stratum.contains_key(s))
        .collect();
    Ok(report)
}

/// Both scoped reports for a run set.
pub fn gate_reports(runset: &RunSet, decisions: &[GateDecision]) -> Result<(GateReport, GateReport), GateError> {
    let runs: Vec<&RunRecord> = runset.records().collect();
    Ok((
        gate_report(&runs, decisions, ReportScope::Canonical)?,
        gate_report(&runs, decisions, ReportScope::DecisionStudy)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{CalibrationMode, DriverBehavior, DriverConfig, DriverRecord};
    use crate::manifest::{Family, MemoryStore, TaskManifest};
    use crate::runner::{run_plan, PlanEntry, RunPlan};

    fn admissible() -> (RunRecord, ReleaseRoot) {
        let m = TaskManifest::new(Family::Micro, "m1", "root-g");
        let mut root = ReleaseRoot::new("root-g", "2026-01-01T00:00:00Z");
        root.register(&m).unwrap();
        let mut store = MemoryStore::default();
        store.insert(m);
        let mut drivers = BTreeMap::new();
        drivers.insert(
            "s".to_string(),
            DriverConfig {
                record: DriverRecord::new("s", DriverType::Scripted, EvidenceStatus::PaperFacing),
                behavior: DriverBehavior::Calibration {
                    mode: CalibrationMode::Oracle,
                },
            },
        );
        let plan = RunPlan {
            release_root: "root-g".into(),
            concurrency: 1,
            drivers,
            settings: BTreeMap::new(),
            entries: vec![PlanEntry::new("m1", "s", SettingLabel::Clean, 0, 5)],
        };
        let set = run_plan(&plan, &root, &store, Execution::Sequential).unwrap();
        (set.runs[0].record.clone(), root)
    }

    fn decide(run: &RunRecord, root: &ReleaseRoot) -> GateDecision {
        admit(run, &verify_binding(run, root))
    }

    #[test]
    fn bound_run_admitted() {
        let (run, root) = admissible();
        let d = decide(&run, &root);
        assert_eq!(d.verdict, Verdict::Admitted);
        assert!(d.reasons.is_empty());
        assert_eq!(d.stratum, EvidenceStratum::RealTaskAnchor);
    }

    #[test]
    fn fixture_rejected() {
        let (mut run, root) = admissible();
        run.driver.evidence_status = EvidenceStatus::FixtureBacked;
        let d = decide(&run, &root);
        assert_eq!(d.reasons, vec![RejectReason::FixtureOnlyProvenance]);
        assert_eq!(d.stratum, EvidenceStratum::NonPaperFacing);
    }

    #[test]
    fn incomplete_trace_alone_quarantines() {
        let (mut run, root) = admissible();
        run.trace_complete = false;
        assert_eq!(decide(&run, &root).verdict, Verdict::Quarantined);
        run.terminal = None;
        assert_eq!(decide(&run, &root).verdict, Verdict::Rejected);
    }

    #[test]
    fn stressed_non_decision_row() {
        let (mut run, root) = admissible();
        run.setting_label = "medium_live_stressed".into();
        assert_eq!(decide(&run, &root).reasons, vec![RejectReason::MissingDecisionLabel]);
    }

    #[test]
    fn strata_mapping() {
        let (mut run, _) = admissible();
        run.driver.driver_type = DriverType::Llm;
        assert_eq!(stratify(&run), EvidenceStratum::LlmDriver);
        run.driver.evidence_status = EvidenceStatus::Diagnostic;
        assert_eq!(stratify(&run), EvidenceStratum::BoundedExtensionOrDiagnostic);
        run.driver.evidence_status = EvidenceStatus::PaperFacing;
        run.driver.driver_type = DriverType::Sanity;
        assert_eq!(stratify(&run), EvidenceStratum::BoundedExtensionOrDiagnostic);
        run.variant = Some(crate::drivers::ControllerVariant::HookAOnly);
        assert_eq!(stratify(&run), EvidenceStratum::DecisionStudy);
    }

    #[test]
    fn report_arithmetic_and_mismatch() {
        let (run, root) = admissible();
        let mut runs = Vec::new();
        for i in 0..5 {
            let mut r = run.clone();
            r.run_id = format!("r{i}");
            if i >= 3 {
                r.driver.evidence_status = EvidenceStatus::SmokeOnly;
            }
            runs.push(r);
        }
        let decisions: Vec<_> = runs.iter().map(|r| decide(r, &root)).collect();
        let refs: Vec<&RunRecord> = runs.iter().collect();
        let rep = gate_report(&refs, &decisions, ReportScope::Canonical).unwrap();
        assert_eq!((rep.indexed, rep.admitted, rep.excluded), (5, 3, 2));
        assert_eq!(rep.by_reason[&RejectReason::SmokeOnly], 2);
        assert_eq!(
            rep.missing_strata,
            vec![
                EvidenceStratum::LlmDriver,
                EvidenceStratum::BoundedExtensionOrDiagnostic
            ]
        );
        let err = gate_report(&refs, &decisions[..4], ReportScope::Canonical).unwrap_err();
        assert_eq!(err.code(), "decision_set_mismatch");
    }

    #[test]
    fn decision_rows_do_not_touch_canonical_counts() {
        let (run, root) = admissible();
        let base = vec![run.clone()];
        let mut with_study = base.clone();
        let mut ctl = run.clone();
        ctl.run_id = "ctl".into();
        ctl.variant = Some(crate::drivers::ControllerVariant::HookBOnly);
        with_study.push(ctl);
        let rep = |runs: &Vec<RunRecord>| {
            let ds: Vec<_> = runs.iter().map(|r| decide(r, &root)).collect();
            let refs: Vec<&RunRecord> = runs.iter().collect();
            gate_report(&refs, &ds, ReportScope::Canonical).unwrap()
        };
        assert_eq!(rep(&base), rep(&with_study));
    }
}
