//! Claim-scoped aggregation over admitted runs: latency and invalid-action
//! tables, reward AUC, the controller decision study and the claim matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::drivers::ControllerVariant;
use crate::gate::{EvidenceStratum, GateDecision, GateReport};
use crate::manifest::Family;
use crate::runner::{RewardPoint, RunOutput, RunRecord};
use crate::schema::{EventKind, EventRecord};
use crate::simenv::{PatchQuality, SettingLabel, TerminalStatus};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("not_admitted: run {0} was not admitted by the gate")]
    NotAdmitted(String),
    #[error("no_actions: no action_parsed events")]
    NoActions,
    #[error("nonmonotone_trajectory: timestamp {prev} followed by {next}")]
    NonmonotoneTrajectory { prev: f64, next: f64 },
    #[error("invalid_trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid_horizon: {0}")]
    InvalidHorizon(f64),
    #[error("unknown_claim: {0}")]
    UnknownClaim(String),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::NotAdmitted(_) => "not_admitted",
            ReportError::NoActions => "no_actions",
            ReportError::NonmonotoneTrajectory { .. } => "nonmonotone_trajectory",
            ReportError::InvalidTrajectory(_) => "invalid_trajectory",
            ReportError::InvalidHorizon(_) => "invalid_horizon",
            ReportError::UnknownClaim(_) => "unknown_claim",
        }
    }
}

/// Runs that passed the gate. Construction refuses anything else.
#[derive(Debug, Clone)]
pub struct AdmittedSet<'a> {
    runs: Vec<&'a RunOutput>,
}

impl<'a> AdmittedSet<'a> {
    /// Every run must carry an admitted decision.
    pub fn new(runs: &'a [RunOutput], decisions: &[GateDecision]) -> Result<Self, ReportError> {
        let admitted: BTreeSet<&str> = decisions
            .iter()
            .filter(|d| d.is_admitted())
            .map(|d| d.run_id.as_str())
            .collect();
        for r in runs {
            if !admitted.contains(r.record.run_id.as_str()) {
                return Err(ReportError::NotAdmitted(r.record.run_id.clone()));
            }
        }
        Ok(AdmittedSet {
            runs: runs.iter().collect(),
        })
    }

    /// Keep only the admitted runs, optionally restricted to some strata.
    pub fn select(runs: &'a [RunOutput], decisions: &[GateDecision], strata: Option<&[EvidenceStratum]>) -> Self {
        let keep: BTreeSet<&str> = decisions
            .iter()
            .filter(|d| d.is_admitted() && strata.is_none_or(|s| s.contains(&d.stratum)))
            .map(|d| d.run_id.as_str())
            .collect();
        AdmittedSet {
            runs: runs
                .iter()
                .filter(|r| keep.contains(r.record.run_id.as_str()))
                .collect(),
        }
    }

    pub fn runs(&self) -> &[&'a RunOutput] {
        &self.runs
    }

    pub fn records(&self) -> impl Iterator<Item = &'a RunRecord> + '_ {
        self.runs.iter().map(|r| &r.record)
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 * n)`, 1-based.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub mean_queue_wait_ms: f64,
    pub throughput_eps: f64,
}

impl LatencyBreakdown {
    /// Percentile summary of `samples` with the given queue wait and throughput.
    pub fn from_samples(samples: &[f64], mean_queue_wait_ms: f64, throughput_eps: f64) -> Option<Self> {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(LatencyBreakdown {
            count: sorted.len(),
            mean_ms: sorted.iter().sum::<f64>() / sorted.len().max(1) as f64,
            p50_ms: nearest_rank(&sorted, 50.0)?,
            p95_ms: nearest_rank(&sorted, 95.0)?,
            p99_ms: nearest_rank(&sorted, 99.0)?,
            mean_queue_wait_ms,
            throughput_eps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyGroup {
    pub family: Family,
    pub concurrency: u32,
    pub breakdown: LatencyBreakdown,
    pub pass_rate: f64,
}

fn event_span_ms(events: &[EventRecord]) -> f64 {
    let (lo, hi) = events.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
        (lo.min(e.wall_clock_ms), hi.max(e.wall_clock_ms))
    });
    if hi > lo {
        hi - lo
    } else {
        0.0
    }
}

/// Environment step latency (service plus queueing) per family and
/// concurrency level. Throughput is completed episodes over the longest run
/// span in the group.
pub fn latency_decomposition(set: &AdmittedSet<'_>) -> Vec<LatencyGroup> {
    #[derive(Default)]
    struct Acc {
        steps: Vec<f64>,
        waits: Vec<f64>,
        completed: usize,
        successes: usize,
        span_ms: f64,
    }
    let mut groups: BTreeMap<(Family, u32), Acc> = BTreeMap::new();
    for run in set.runs() {
        let Some(family) = run.record.family else { continue };
        let acc = groups.entry((family, run.record.sim_concurrency)).or_default();
        for e in &run.events {
            match e.kind {
                EventKind::EnvStepEnd => acc.steps.push(e.timing.service_time_ms + e.timing.queue_wait_ms),
                EventKind::VerifierOutcome => acc.waits.push(e.timing.queue_wait_ms),
                EventKind::TerminalResult => {
                    acc.completed += 1;
                    if e.payload_str("status") == Some(TerminalStatus::Success.as_str()) {
                        acc.successes += 1;
                    }
                }
                _ => {}
            }
        }
        acc.span_ms = acc.span_ms.max(event_span_ms(&run.events));
    }
    groups
        .into_iter()
        .filter_map(|((family, concurrency), acc)| {
            let wait = if acc.waits.is_empty() {
                0.0
            } else {
                acc.waits.iter().sum::<f64>() / acc.waits.len() as f64
            };
            let throughput = if acc.span_ms > 0.0 {
                acc.completed as f64 / (acc.span_ms / 1000.0)
            } else {
                0.0
            };
            Some(LatencyGroup {
                family,
                concurrency,
                breakdown: LatencyBreakdown::from_samples(&acc.steps, wait, throughput)?,
                pass_rate: if acc.completed > 0 {
                    acc.successes as f64 / acc.completed as f64
                } else {
                    0.0
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidActionStats {
    pub actions: usize,
    pub invalid: usize,
    pub rate: f64,
    pub parse_status: BTreeMap<String, usize>,
}

pub fn invalid_action_rate<'e>(
    events: impl IntoIterator<Item = &'e EventRecord>,
) -> Result<InvalidActionStats, ReportError> {
    let mut actions = 0;
    let mut invalid = 0;
    let mut parse_status = BTreeMap::new();
    for e in events.into_iter().filter(|e| e.kind == EventKind::ActionParsed) {
        actions += 1;
        if e.payload_bool("invalid_action").unwrap_or(false) {
            invalid += 1;
        }
        let status = e.payload_str("parse_status").unwrap_or("unknown").to_string();
        *parse_status.entry(status).or_insert(0) += 1;
    }
    if actions == 0 {
        return Err(ReportError::NoActions);
    }
    Ok(InvalidActionStats {
        actions,
        invalid,
        rate: invalid as f64 / actions as f64,
        parse_status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverActionRow {
    pub driver_id: String,
    pub backend: String,
    pub family: Family,
    pub stats: InvalidActionStats,
}

/// Invalid-action statistics per (driver, family) over admitted runs.
pub fn invalid_action_table(set: &AdmittedSet<'_>) -> Vec<DriverActionRow> {
    let mut groups: BTreeMap<(String, String, Family), Vec<&EventRecord>> = BTreeMap::new();
    for run in set.runs() {
        let Some(family) = run.record.family else { continue };
        let key = (run.record.driver.driver_id.clone(), run.record.backend_label(), family);
        groups.entry(key).or_default().extend(run.events.iter());
    }
    groups
        .into_iter()
        .filter_map(|((driver_id, backend, family), events)| {
            Some(DriverActionRow {
                driver_id,
                backend,
                family,
                stats: invalid_action_rate(events).ok()?,
            })
        })
        .collect()
}

/// Integral of the left-continuous reward step function over
/// `[0, horizon]`, divided by the horizon. Reward is 0 before the first
/// point and points after the horizon do not contribute.
pub fn reward_auc(trajectory: &[RewardPoint], horizon_ms: f64) -> Result<f64, ReportError> {
    if !(horizon_ms > 0.0 && horizon_ms.is_finite()) {
        return Err(ReportError::InvalidHorizon(horizon_ms));
    }
    for w in trajectory.windows(2) {
        if w[1].wall_clock_ms < w[0].wall_clock_ms {
            return Err(ReportError::NonmonotoneTrajectory {
                prev: w[0].wall_clock_ms,
                next: w[1].wall_clock_ms,
            });
        }
    }
    if let Some(p) = trajectory
        .iter()
        .find(|p| !(0.0..=1.0).contains(&p.reward) || p.wall_clock_ms < 0.0)
    {
        return Err(ReportError::InvalidTrajectory(format!(
            "point ({}, {}) out of range",
            p.wall_clock_ms, p.reward
        )));
    }
    let mut area = 0.0;
    for (i, p) in trajectory.iter().enumerate() {
        let start = p.wall_clock_ms.min(horizon_ms);
        let end = trajectory
            .get(i + 1)
            .map_or(horizon_ms, |n| n.wall_clock_ms)
            .min(horizon_ms);
        area += p.reward * (end - start);
    }
    Ok(area / horizon_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionCell {
    pub backend: String,
    pub seed: u64,
    pub budget: u32,
    pub setting: String,
    pub auc_by_variant: BTreeMap<ControllerVariant, f64>,
    /// `None` when a variant is missing and the cell is incomparable.
    pub selected: Option<ControllerVariant>,
    pub runs: usize,
}

/// Argmax over both variants; ties go to the lexicographically smaller label.
pub fn select_variant(aucs: &BTreeMap<ControllerVariant, f64>) -> Option<ControllerVariant> {
    if ControllerVariant::ALL.iter().any(|v| !aucs.contains_key(v)) {
        return None;
    }
    let mut variants = ControllerVariant::ALL.to_vec();
    variants.sort_by_key(|v| v.label());
    let mut best = variants[0];
    for v in &variants[1..] {
        if aucs[v] > aucs[&best] {
            best = *v;
        }
    }
    Some(best)
}

impl DecisionCell {
    pub fn new(
        backend: &str,
        seed: u64,
        budget: u32,
        setting: &str,
        auc_by_variant: BTreeMap<ControllerVariant, f64>,
        runs: usize,
    ) -> Self {
        DecisionCell {
            backend: backend.to_string(),
            seed,
            budget,
            setting: setting.to_string(),
            selected: select_variant(&auc_by_variant),
            auc_by_variant,
            runs,
        }
    }

    pub fn comparable(&self) -> bool {
        self.selected.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionStudyReport {
    pub cells: Vec<DecisionCell>,
    pub admitted: usize,
    pub blocked: usize,
    pub comparable_cells: usize,
    pub reversal_cells: usize,
}

impl DecisionStudyReport {
    /// Count comparable (backend, seed, budget) groups and the reversals
    /// among them.
    pub fn from_cells(mut cells: Vec<DecisionCell>, admitted: usize, blocked: usize) -> Self {
        cells.sort_by(|a, b| {
            (&a.backend, a.seed, a.budget, &a.setting).cmp(&(&b.backend, b.seed, b.budget, &b.setting))
        });
        let mut groups: BTreeMap<(&str, u64, u32), BTreeMap<&str, Option<ControllerVariant>>> = BTreeMap::new();
        for c in &cells {
            groups
                .entry((c.backend.as_str(), c.seed, c.budget))
                .or_default()
                .insert(c.setting.as_str(), c.selected);
        }
        let clean = SettingLabel::Clean.as_str();
        let stressed = SettingLabel::MediumLiveStressed.as_str();
        let mut comparable_cells = 0;
        let mut reversal_cells = 0;
        for settings in groups.values() {
            if let (Some(Some(a)), Some(Some(b))) = (settings.get(clean), settings.get(stressed)) {
                comparable_cells += 1;
                if a != b {
                    reversal_cells += 1;
                }
            }
        }
        DecisionStudyReport {
            cells,
            admitted,
            blocked,
            comparable_cells,
            reversal_cells,
        }
    }

    pub fn cell(&self, backend: &str, seed: u64, budget: u32, setting: &str) -> Option<&DecisionCell> {
        self.cells
            .iter()
            .find(|c| c.backend == backend && c.seed == seed && c.budget == budget && c.setting == setting)
    }
}

/// Build the study from decision-stratum runs. Rows that were not admitted
/// count as blocked and do not contribute to any cell. A cell's AUC per
/// variant is the mean over its admitted runs.
pub fn decision_study(runs: &[RunOutput], decisions: &[GateDecision]) -> Result<DecisionStudyReport, ReportError> {
    let by_id: BTreeMap<&str, &GateDecision> = decisions.iter().map(|d| (d.run_id.as_str(), d)).collect();
    let mut admitted = 0;
    let mut blocked = 0;
    type Key = (String, u64, u32, String);
    let mut acc: BTreeMap<Key, BTreeMap<ControllerVariant, Vec<f64>>> = BTreeMap::new();
    for run in runs {
        let rec = &run.record;
        let Some(d) = by_id.get(rec.run_id.as_str()) else {
            continue;
        };
        if d.stratum != EvidenceStratum::DecisionStudy {
            continue;
        }
        let Some(variant) = rec.variant.filter(|_| d.is_admitted()) else {
            blocked += 1;
            continue;
        };
        admitted += 1;
        let auc = reward_auc(&rec.reward_trajectory, rec.effective_horizon_ms())?;
        acc.entry((rec.backend_label(), rec.seed, rec.budget, rec.setting_label.clone()))
            .or_default()
            .entry(variant)
            .or_default()
            .push(auc);
    }
    let cells = acc
        .into_iter()
        .map(|((backend, seed, budget, setting), by_variant)| {
            let runs = by_variant.values().map(Vec::len).sum();
            let aucs = by_variant
                .into_iter()
                .map(|(v, xs)| (v, xs.iter().sum::<f64>() / xs.len() as f64))
                .collect();
            DecisionCell::new(&backend, seed, budget, &setting, aucs, runs)
        })
        .collect();
    Ok(DecisionStudyReport::from_cells(cells, admitted, blocked))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimStatus {
    Supported,
    SupportedBounded,
    Caveated,
    AppendixOnly,
    NotClaimed,
}

impl ClaimStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ClaimStatus::Supported => "supported",
            ClaimStatus::SupportedBounded => "supported_bounded",
            ClaimStatus::Caveated => "caveated",
            ClaimStatus::AppendixOnly => "appendix_only",
            ClaimStatus::NotClaimed => "not_claimed",
        }
    }
}

pub const CLAIM_KEYS: [&str; 6] = [
    "evidence_gated_substrate",
    "real_task_anchors",
    "llm_driver_traffic",
    "bounded_diagnostics",
    "decision_study",
    "verifier_controls",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRow {
    pub claim: String,
    pub status: ClaimStatus,
    pub rows_used: usize,
    pub scope: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimMatrix {
    pub rows: Vec<ClaimRow>,
}

impl ClaimMatrix {
    pub fn row(&self, claim: &str) -> Option<&ClaimRow> {
        self.rows.iter().find(|r| r.claim == claim)
    }
}

/// Gold/noop verifier control tallies, counted per verdict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlTally {
    pub gold_pass: usize,
    pub gold_total: usize,
    pub noop_fail: usize,
    pub noop_total: usize,
}

impl ControlTally {
    pub fn is_empty(&self) -> bool {
        self.gold_total + self.noop_total == 0
    }

    pub fn exact(&self) -> bool {
        !self.is_empty() && self.gold_pass == self.gold_total && self.noop_fail == self.noop_total
    }
}

/// Scan verifier outcomes of admitted code runs for gold and noop patches.
pub fn verifier_controls(set: &AdmittedSet<'_>) -> ControlTally {
    let mut t = ControlTally::default();
    for run in set.runs().iter().filter(|r| r.record.family == Some(Family::Code)) {
        for e in run.events.iter().filter(|e| e.kind == EventKind::VerifierOutcome) {
            let quality: Option<PatchQuality> = e
                .payload
                .get("patch_quality")
                .and_then(|q| serde_json::from_value(q.clone()).ok());
            let pass = e.payload_str("status") == Some(TerminalStatus::Success.as_str());
            match quality {
                Some(PatchQuality::Gold) => {
                    t.gold_total += 1;
                    t.gold_pass += usize::from(pass);
                }
                Some(PatchQuality::Noop) => {
                    t.noop_total += 1;
                    t.noop_fail += usize::from(!pass);
                }
                _ => {}
            }
        }
    }
    t
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_controls: Option<ControlTally>,
}

fn stratum_rows(gate: &GateReport, s: EvidenceStratum) -> usize {
    gate.by_stratum.get(&s).copied().unwrap_or(0)
}

/// One row per requested claim key, in request order.
pub fn claim_matrix(
    claims: &[&str],
    gate: &GateReport,
    study: Option<&DecisionStudyReport>,
    diagnostics: &Diagnostics,
) -> Result<ClaimMatrix, ReportError> {
    let when = |rows: usize, status: ClaimStatus| if rows > 0 { status } else { ClaimStatus::NotClaimed };
    let rows = claims
        .iter()
        .map(|&claim| {
            let (status, rows_used, scope) = match claim {
                "evidence_gated_substrate" => {
                    let status = match (gate.admitted, gate.validation_failures) {
                        (0, _) => ClaimStatus::NotClaimed,
                        (_, 0) => ClaimStatus::Supported,
                        _ => ClaimStatus::Caveated,
                    };
                    (
                        status,
                        gate.admitted,
                        format!("canonical admitted rows of {} indexed", gate.indexed),
                    )
                }
                "real_task_anchors" => {
                    let n = stratum_rows(gate, EvidenceStratum::RealTaskAnchor);
                    (
                        when(n, ClaimStatus::Supported),
                        n,
                        "scripted and calibration anchors".to_string(),
                    )
                }
                "llm_driver_traffic" => {
                    let n = stratum_rows(gate, EvidenceStratum::LlmDriver);
                    (
                        when(n, ClaimStatus::Supported),
                        n,
                        "declared-driver traffic and cost, not capability".to_string(),
                    )
                }
                "bounded_diagnostics" => {
                    let n = stratum_rows(gate, EvidenceStratum::BoundedExtensionOrDiagnostic);
                    (
                        when(n, ClaimStatus::SupportedBounded),
                        n,
                        "diagnostic and sanity rows".to_string(),
                    )
                }
                "decision_study" => match study {
                    Some(s) if s.admitted > 0 => {
                        let status =
                            if s.blocked == 0 && s.comparable_cells > 0 && s.reversal_cells == s.comparable_cells {
                                ClaimStatus::Supported
                            } else {
                                ClaimStatus::Caveated
                            };
                        (
                            status,
                            s.admitted,
                            format!(
                                "tested grid: {}/{} comparable cells reverse, {} blocked",
                                s.reversal_cells, s.comparable_cells, s.blocked
                            ),
                        )
                    }
                    _ => (
                        ClaimStatus::NotClaimed,
                        0,
                        "no admitted decision-study rows".to_string(),
                    ),
                },
                "verifier_controls" => match diagnostics.verifier_controls {
                    Some(t) if !t.is_empty() => (
                        if t.exact() {
                            ClaimStatus::Supported
                        } else {
                            ClaimStatus::Caveated
                        },
                        t.gold_total + t.noop_total,
                        format!(
                            "gold {}/{} pass, noop {}/{} fail",
                            t.gold_pass, t.gold_total, t.noop_fail, t.noop_total
                        ),
                    ),
                    _ => (ClaimStatus::NotClaimed, 0, "no admitted verifier controls".to_string()),
                },
                other => return Err(ReportError::UnknownClaim(other.to_string())),
            };
            Ok(ClaimRow {
                claim: claim.to_string(),
                status,
                rows_used,
                scope,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ClaimMatrix { rows })
}

/// Left-aligned text table with a dashed rule under the header.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let _ = write!(s, "{c:<w$}");
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&mut header.iter().copied());
    out.push_str(&line(
        &mut widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str),
    ));
    for row in rows {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
    }
    out
}

pub fn decision_table(report: &DecisionStudyReport) -> String {
    let fmt_auc = |c: &DecisionCell, v| c.auc_by_variant.get(&v).map_or("-".to_string(), |a| format!("{a:.6}"));
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.backend.clone(),
                c.seed.to_string(),
                c.budget.to_string(),
                c.setting.clone(),
                fmt_auc(c, ControllerVariant::HookAOnly),
                fmt_auc(c, ControllerVariant::HookBOnly),
                c.selected.map_or("incomparable".to_string(), |v| v.label().to_string()),
            ]
        })
        .collect();
    let mut out = render_table(
        &[
            "Backend",
            "Seed",
            "Budget",
            "Setting",
            "hook_a_only",
            "hook_b_only",
            "Selected",
        ],
        &rows,
    );
    let _ = writeln!(
        out,
        "\nadmitted {}  blocked {}  reversals {}/{} comparable cells",
        report.admitted, report.blocked, report.reversal_cells, report.comparable_cells
    );
    out
}

pub fn latency_table(groups: &[LatencyGroup]) -> String {
    let rows: Vec<Vec<String>> = groups
        .iter()
        .map(|g| {
            let b = &g.breakdown;
            vec![
                g.family.as_str().to_string(),
                g.concurrency.to_string(),
                b.count.to_string(),
                format!("{:.2}", b.mean_ms),
                format!("{:.2}", b.p50_ms),
                format!("{:.2}", b.p95_ms),
                format!("{:.2}", b.p99_ms),
                format!("{:.2}", b.mean_queue_wait_ms),
                format!("{:.2}", b.throughput_eps),
                format!("{:.3}", g.pass_rate),
            ]
        })
        .collect();
    render_table(
        &[
            "Family", "Conc", "Steps", "Mean ms", "p50 ms", "p95 ms", "p99 ms", "Queue ms", "eps/s", "Pass",
        ],
        &rows,
    )
}

pub fn invalid_action_text(rows: &[DriverActionRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.driver_id.clone(),
                r.backend.clone(),
                r.family.as_str().to_string(),
                r.stats.actions.to_string(),
                r.stats.invalid.to_string(),
                format!("{:.4}", r.stats.rate),
            ]
        })
        .collect();
    render_table(&["Driver", "Backend", "Family", "Actions", "Invalid", "Rate"], &body)
}

pub fn gate_table(report: &GateReport) -> String {
    let mut rows = vec![
        vec!["indexed".to_string(), report.indexed.to_string()],
        vec!["admitted".to_string(), report.admitted.to_string()],
        vec!["excluded".to_string(), report.excluded.to_string()],
        vec!["quarantined".to_string(), report.quarantined.to_string()],
        vec![
            "validation_failures".to_string(),
            report.validation_failures.to_string(),
        ],
    ];
    rows.extend(
        report
            .by_reason
            .iter()
            .map(|(r, n)| vec![format!("reason:{r}"), n.to_string()]),
    );
    rows.extend(
        report
            .by_stratum
            .iter()
            .map(|(s, n)| vec![format!("stratum:{s}"), n.to_string()]),
    );
    rows.extend(
        report
            .missing_strata
            .iter()
            .map(|s| vec![format!("missing:{s}"), "0".to_string()]),
    );
    render_table(&["Item", "Count"], &rows)
}

pub fn claim_table(matrix: &ClaimMatrix) -> String {
    let rows: Vec<Vec<String>> = matrix
        .rows
        .iter()
        .map(|r| {
            vec![
                r.claim.clone(),
                r.status.as_str().to_string(),
                r.rows_used.to_string(),
                r.scope.clone(),
            ]
        })
        .collect();
    render_table(&["Claim", "Status", "Rows", "Scope"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(t: f64, r: f64) -> RewardPoint {
        RewardPoint {
            wall_clock_ms: t,
            reward: r,
        }
    }

    fn aucs(a: f64, b: f64) -> BTreeMap<ControllerVariant, f64> {
        [(ControllerVariant::HookAOnly, a), (ControllerVariant::HookBOnly, b)].into()
    }

    #[test]
    fn singleton_percentiles() {
        let b = LatencyBreakdown::from_samples(&[5.0], 0.0, 0.0).unwrap();
        assert_eq!((b.p50_ms, b.p95_ms, b.p99_ms), (5.0, 5.0, 5.0));
        assert!(LatencyBreakdown::from_samples(&[], 0.0, 0.0).is_none());
    }

    #[test]
    fn nearest_rank_small_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&xs, 50.0), Some(2.0));
        assert_eq!(nearest_rank(&xs, 51.0), Some(3.0));
        assert_eq!(nearest_rank(&xs, 100.0), Some(4.0));
        assert_eq!(nearest_rank(&xs, 0.0), Some(1.0));
    }

    #[test]
    fn auc_trivial_cases() {
        assert_eq!(reward_auc(&[pt(0.0, 0.0)], 100.0).unwrap(), 0.0);
        assert_eq!(reward_auc(&[pt(0.0, 1.0)], 100.0).unwrap(), 1.0);
        assert_eq!(reward_auc(&[pt(0.0, 0.0), pt(50.0, 1.0)], 100.0).unwrap(), 0.5);
        let err = reward_auc(&[pt(0.0, 0.0), pt(10.0, 0.5), pt(5.0, 0.6)], 100.0).unwrap_err();
        assert_eq!(err.code(), "nonmonotone_trajectory");
        assert_eq!(reward_auc(&[pt(0.0, 0.0), pt(150.0, 1.0)], 100.0).unwrap(), 0.0);
    }

    #[test]
    fn table_one_selections() {
        let rows = [
            (0.051875, 0.045106, ControllerVariant::HookAOnly),
            (0.035093, 0.044943, ControllerVariant::HookBOnly),
            (0.052251, 0.045242, ControllerVariant::HookAOnly),
            (0.035086, 0.045132, ControllerVariant::HookBOnly),
        ];
        for (a, b, want) in rows {
            assert_eq!(select_variant(&aucs(a, b)), Some(want));
        }
        assert_eq!(select_variant(&aucs(0.04, 0.04)), Some(ControllerVariant::HookAOnly));
        let mut missing = aucs(0.1, 0.2);
        missing.remove(&ControllerVariant::HookBOnly);
        assert_eq!(select_variant(&missing), None);
    }

    #[test]
    fn reversal_counting() {
        let cells = vec![
            DecisionCell::new("vllm", 0, 7, "clean", aucs(0.05, 0.04), 2),
            DecisionCell::new("vllm", 0, 7, "medium_live_stressed", aucs(0.03, 0.04), 2),
            DecisionCell::new("sglang", 0, 7, "clean", aucs(0.05, 0.04), 2),
            DecisionCell::new("sglang", 0, 7, "medium_live_stressed", aucs(0.05, 0.04), 2),
            DecisionCell::new("sglang", 1, 7, "clean", aucs(0.05, 0.04), 2),
        ];
        let r = DecisionStudyReport::from_cells(cells, 10, 0);
        assert_eq!((r.comparable_cells, r.reversal_cells), (2, 1));
        assert!(decision_table(&r).contains("Selected"));
    }

    fn gate(admitted: usize) -> GateReport {
        GateReport {
            scope: crate::gate::ReportScope::Canonical,
            indexed: admitted,
            admitted,
            excluded: 0,
            quarantined: 0,
            by_reason: BTreeMap::new(),
            by_stratum: if admitted > 0 {
                [(EvidenceStratum::RealTaskAnchor, admitted)].into()
            } else {
                BTreeMap::new()
            },
            missing_strata: vec![],
            validation_failures: 0,
        }
    }

    #[test]
    fn claim_rules() {
        let study = |rev, blocked| DecisionStudyReport {
            cells: vec![],
            admitted: 48,
            blocked,
            comparable_cells: 12,
            reversal_cells: rev,
        };
        let m = claim_matrix(&CLAIM_KEYS, &gate(3), Some(&study(12, 0)), &Diagnostics::default()).unwrap();
        assert_eq!(m.row("decision_study").unwrap().status, ClaimStatus::Supported);
        assert_eq!(m.row("real_task_anchors").unwrap().status, ClaimStatus::Supported);
        assert_eq!(m.row("llm_driver_traffic").unwrap().status, ClaimStatus::NotClaimed);
        let m = claim_matrix(
            &["decision_study"],
            &gate(3),
            Some(&study(11, 0)),
            &Diagnostics::default(),
        )
        .unwrap();
        assert_eq!(m.rows[0].status, ClaimStatus::Caveated);
        let empty = DecisionStudyReport::from_cells(vec![], 0, 0);
        let m = claim_matrix(&CLAIM_KEYS, &gate(0), Some(&empty), &Diagnostics::default()).unwrap();
        assert!(m.rows.iter().all(|r| r.status == ClaimStatus::NotClaimed));
        let err = claim_matrix(&["leaderboard"], &gate(0), None, &Diagnostics::default()).unwrap_err();
        assert_eq!(err.code(), "unknown_claim");
    }

    #[test]
    fn table_alignment() {
        let t = render_table(&["A", "Long"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "A    Long\n---  ----\nxyz  1\n");
    }

    /// Independent oracle: sample-free exact integration by summing
    /// reward times the clipped width of each interval.
    fn oracle_auc(points: &[(f64, f64)], h: f64) -> f64 {
        let mut total = 0.0;
        let mut bounds: Vec<f64> = points.iter().map(|p| p.0).collect();
        bounds.push(h);
        for i in 0..points.len() {
            let lo = bounds[i].min(h);
            let hi = bounds[i + 1].min(h);
            if hi > lo {
                total += points[i].1 * (hi - lo);
            }
        }
        total / h
    }

    proptest! {
        #[test]
        fn percentile_matches_sorted_index(xs in prop::collection::vec(0.0f64..1e4, 1..200), p in 1.0f64..=100.0) {
            let mut s = xs.clone();
            s.sort_by(f64::total_cmp);
            let k = (p * s.len() as f64 / 100.0).ceil() as usize;
            prop_assert_eq!(nearest_rank(&s, p), Some(s[k.max(1) - 1]));
        }

        #[test]
        fn auc_scales_linearly(incs in prop::collection::vec((0.0f64..50.0, 0.0f64..0.1), 1..30), c in 0.01f64..=1.0) {
            let mut t = 0.0;
            let mut r = 0.0;
            let mut traj = vec![pt(0.0, 0.0)];
            for (dt, dr) in incs {
                t += dt;
                r = f64::min(r + dr, 1.0);
                traj.push(pt(t, r));
            }
            let h = t + 10.0;
            let base = reward_auc(&traj, h).unwrap();
            let scaled: Vec<_> = traj.iter().map(|p| pt(p.wall_clock_ms, p.reward * c)).collect();
            prop_assert!((reward_auc(&scaled, h).unwrap() - c * base).abs() < 1e-12);
            let pts: Vec<(f64, f64)> = traj.iter().map(|p| (p.wall_clock_ms, p.reward)).collect();
            prop_assert!((base - oracle_auc(&pts, h)).abs() < 1e-9);
        }

        #[test]
        fn selection_invariant_under_common_scaling(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.01f64..=1.0) {
            prop_assert_eq!(select_variant(&aucs(a, b)), select_variant(&aucs(a * c, b * c)));
        }
    }
}
