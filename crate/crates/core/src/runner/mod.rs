//! Executes workload–driver–setting runs and binds them to their freeze
//! records.

mod fleet;
mod io;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use fleet::{EpisodeStatus, EpisodeSummary};
pub use io::{load_runset, read_event_log, write_event_log, write_runset, RunIndex, RUNSET_INDEX};

use crate::drivers::{ControllerVariant, DriverConfig, DriverRecord, DriverType};
use crate::exec::{ordered_map, Execution};
use crate::manifest::{
    freeze_run, resolve_manifest, Family, FreezeRecord, ManifestStore, ReleaseRoot, ResolvedManifest, VersionSet,
};
use crate::schema::{
    canonical_hash, new_trace_context, validate_log, CanonicalValue, Digest, EventKind, EventRecord, ProvenanceFields,
    SpanId, TimingFields, RUN_SCOPE, SCHEMA_VERSION,
};
use crate::simenv::{OperatingSetting, SettingLabel, TerminalOutcome, TerminalStatus};
use fleet::{run_fleet, EventDraft, FleetSpec};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid_plan: {0}")]
    InvalidPlan(String),
    #[error("unknown_driver: {0}")]
    UnknownDriver(String),
    #[error("unknown_setting: {0}")]
    UnknownSetting(String),
    #[error("duplicate_run_id: {0}")]
    DuplicateRunId(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid_log: {0}")]
    InvalidLog(String),
}

impl RunError {
    pub fn code(&self) -> &'static str {
        match self {
            RunError::InvalidPlan(_) => "invalid_plan",
            RunError::UnknownDriver(_) => "unknown_driver",
            RunError::UnknownSetting(_) => "unknown_setting",
            RunError::DuplicateRunId(_) => "duplicate_run_id",
            RunError::Io(_) => "io_error",
            RunError::Parse(_) => "parse_error",
            RunError::InvalidLog(_) => "invalid_log",
        }
    }
}

fn one() -> u32 {
    1
}

fn default_max_attempts() -> u32 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub task_id: String,
    pub driver_config_ref: String,
    pub setting_label: String,
    pub seed: u64,
    pub budget: u32,
    #[serde(default = "one")]
    pub repetitions: u32,
    /// Planned episode slots per run.
    #[serde(default = "one")]
    pub episodes: u32,
    /// Simulated actors working the slots.
    #[serde(default = "one")]
    pub sim_concurrency: u32,
    #[serde(default = "one")]
    pub verifier_servers: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_ms: Option<f64>,
    /// Cap on re-queued attempts per slot after a controller drop.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

impl PlanEntry {
    pub fn new(task_id: &str, driver_ref: &str, setting: SettingLabel, seed: u64, budget: u32) -> Self {
        PlanEntry {
            task_id: task_id.to_string(),
            driver_config_ref: driver_ref.to_string(),
            setting_label: setting.as_str().to_string(),
            seed,
            budget,
            repetitions: 1,
            episodes: 1,
            sim_concurrency: 1,
            verifier_servers: 1,
            horizon_ms: None,
            max_attempts: default_max_attempts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub release_root: String,
    /// Host threads used to execute runs.
    #[serde(default = "one")]
    pub concurrency: u32,
    pub drivers: BTreeMap<String, DriverConfig>,
    /// Overrides for the built-in operating settings.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, OperatingSetting>,
    pub entries: Vec<PlanEntry>,
}

impl RunPlan {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.entries.is_empty() {
            return Err(RunError::InvalidPlan("no entries".into()));
        }
        for (name, cfg) in &self.drivers {
            cfg.validate()
                .map_err(|e| RunError::InvalidPlan(format!("driver {name}: {e}")))?;
        }
        for s in self.settings.values() {
            s.validate().map_err(|e| RunError::InvalidPlan(e.to_string()))?;
        }
        for (i, e) in self.entries.iter().enumerate() {
            let bad = |m: &str| Err(RunError::InvalidPlan(format!("entry {i}: {m}")));
            if e.repetitions == 0 {
                return bad("repetitions must be >= 1");
            }
            if e.episodes == 0 || e.sim_concurrency == 0 || e.verifier_servers == 0 || e.max_attempts == 0 {
                return bad("episodes, sim_concurrency, verifier_servers, max_attempts must be >= 1");
            }
            if e.budget == 0 {
                return bad("budget must be >= 1");
            }
            if let Some(h) = e.horizon_ms {
                if !(h.is_finite() && h > 0.0) {
                    return bad("horizon_ms must be > 0");
                }
            }
            if !self.drivers.contains_key(&e.driver_config_ref) {
                return Err(RunError::UnknownDriver(e.driver_config_ref.clone()));
            }
            self.setting(&e.setting_label)?;
        }
        Ok(())
    }

    pub fn setting(&self, label: &str) -> Result<OperatingSetting, RunError> {
        if let Some(s) = self.settings.get(label) {
            return Ok(*s);
        }
        SettingLabel::parse(label)
            .map(OperatingSetting::for_label)
            .ok_or_else(|| RunError::UnknownSetting(label.to_string()))
    }
}

/// A reward observation: cumulative success fraction at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardPoint {
    pub wall_clock_ms: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestStatus {
    Resolved,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub entry_index: usize,
    pub repetition: u32,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub manifest_status: ManifestStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<Digest>,
    pub driver: DriverRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<ControllerVariant>,
    pub setting_label: String,
    pub seed: u64,
    pub budget: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze: Option<FreezeRecord>,
    pub release_root: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_log_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalOutcome>,
    pub trace_complete: bool,
    pub episode_summaries: Vec<EpisodeSummary>,
    pub reward_trajectory: Vec<RewardPoint>,
    pub planned_episodes: u32,
    pub sim_concurrency: u32,
    pub verifier_servers: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_ms: Option<f64>,
    /// A non-controller episode ended in error other than retry exhaustion.
    #[serde(default)]
    pub invalid_sample: bool,
    /// A non-controller episode exhausted its retry budget.
    #[serde(default)]
    pub retry_budget_violation: bool,
    /// Concurrency changes made by an adaptive controller.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concurrency_trace: Vec<(f64, u32)>,
}

impl RunRecord {
    pub fn is_controller(&self) -> bool {
        self.variant.is_some() || self.driver.driver_type == DriverType::Controller
    }

    pub fn backend_label(&self) -> String {
        self.driver
            .backend_engine
            .clone()
            .unwrap_or_else(|| self.driver.driver_id.clone())
    }

    pub fn successes(&self) -> usize {
        self.episode_summaries
            .iter()
            .filter(|e| e.status == EpisodeStatus::Success)
            .count()
    }

    /// Horizon for reward integration: the configured one, else the run span.
    pub fn effective_horizon_ms(&self) -> f64 {
        self.horizon_ms
            .unwrap_or_else(|| self.episode_summaries.iter().map(|e| e.end_ms).fold(0.0, f64::max))
    }
}

/// A run record with its event log.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub record: RunRecord,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub release_root: String,
    pub runs: Vec<RunOutput>,
}

impl RunSet {
    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().map(|r| &r.record)
    }

    pub fn get(&self, run_id: &str) -> Option<&RunOutput> {
        self.runs.iter().find(|r| r.record.run_id == run_id)
    }
}

pub fn compute_run_id(
    manifest_hash: Option<&Digest>,
    task_id: &str,
    driver_id: &str,
    setting: &str,
    seed: u64,
    budget: u32,
    repetition: u32,
) -> String {
    let manifest = match manifest_hash {
        Some(d) => CanonicalValue::from(d.hex.as_str()),
        None => CanonicalValue::from(format!("unresolved:{task_id}")),
    };
    let d = canonical_hash(&CanonicalValue::doc([
        ("budget", CanonicalValue::from(u64::from(budget))),
        ("driver_id", driver_id.into()),
        ("manifest", manifest),
        ("repetition", u64::from(repetition).into()),
        ("seed", seed.into()),
        ("setting", setting.into()),
    ]))
    .expect("canonical");
    d.hex[..16].to_string()
}

/// Cumulative success fraction per terminal result, timestamped at the
/// episode's end, with a leading `(0, 0)`. Results sharing a timestamp
/// collapse into one point.
pub fn build_reward_trajectory(events: &[EventRecord], planned_episodes: u32) -> Vec<RewardPoint> {
    let mut ends: BTreeMap<&str, f64> = BTreeMap::new();
    for e in events {
        if e.kind == EventKind::EpisodeEnd {
            ends.insert(e.episode_id.as_str(), e.wall_clock_ms);
        }
    }
    let mut points = vec![RewardPoint {
        wall_clock_ms: 0.0,
        reward: 0.0,
    }];
    let denom = f64::from(planned_episodes.max(1));
    let mut successes = 0u32;
    let mut hits: Vec<(f64, bool)> = events
        .iter()
        .filter(|e| e.kind == EventKind::TerminalResult)
        .map(|e| {
            let t = ends.get(e.episode_id.as_str()).copied().unwrap_or(e.wall_clock_ms);
            (t, e.payload_str("status") == Some("success"))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (t, ok) in hits {
        if ok {
            successes += 1;
        }
        let reward = (f64::from(successes) / denom).min(1.0);
        let last = points.last_mut().expect("non-empty");
        if t <= last.wall_clock_ms {
            last.reward = reward;
        } else {
            points.push(RewardPoint {
                wall_clock_ms: t,
                reward,
            });
        }
    }
    points
}

/// Attach sequence numbers, trace contexts, and provenance to drafts.
fn finalize_events(
    run_id: &str,
    drafts: Vec<EventDraft>,
    provenance: &ProvenanceFields,
    trace_seed: u64,
) -> Vec<EventRecord> {
    let mut drafts = drafts;
    drafts.sort_by(|a, b| a.wall_clock_ms.total_cmp(&b.wall_clock_ms));
    let mut run_span: Option<SpanId> = None;
    let mut episode_spans: BTreeMap<String, SpanId> = BTreeMap::new();
    let mut out = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.into_iter().enumerate() {
        let seq = i as u64;
        let mut trace = new_trace_context(trace_seed, seq);
        let parent = match d.kind {
            EventKind::RunStart => None,
            EventKind::RunEnd | EventKind::EpisodeStart => run_span,
            _ if d.episode_id == RUN_SCOPE => run_span,
            _ => episode_spans.get(&d.episode_id).copied().or(run_span),
        };
        if let Some(p) = parent {
            trace = trace.with_parent(p);
        }
        match d.kind {
            EventKind::RunStart => run_span = Some(trace.span_id),
            EventKind::EpisodeStart => {
                episode_spans.insert(d.episode_id.clone(), trace.span_id);
            }
            _ => {}
        }
        out.push(EventRecord {
            run_id: run_id.to_string(),
            episode_id: d.episode_id,
            step_index: d.step_index,
            trace,
            kind: d.kind,
            sequence: seq,
            wall_clock_ms: d.wall_clock_ms,
            timing: d.timing,
            provenance: provenance.clone(),
            payload: d.payload,
        });
    }
    out
}

/// Everything needed to execute one run.
pub struct RunRequest<'a> {
    pub entry_index: usize,
    pub repetition: u32,
    pub entry: &'a PlanEntry,
    pub driver: &'a DriverConfig,
    pub setting: OperatingSetting,
    pub manifest: Option<&'a ResolvedManifest>,
    pub release_root: &'a str,
    pub versions: &'a VersionSet,
}

/// Execute one run. Unresolved manifests yield a candidate record with no
/// events so the gate can reject it.
pub fn execute_run(req: &RunRequest<'_>) -> RunOutput {
    let e = req.entry;
    let mut driver = req.driver.clone();
    driver.record.seed = e.seed;
    driver.record.budget = e.budget;
    driver.record.setting_label = e.setting_label.clone();
    let run_id = compute_run_id(
        req.manifest.map(|m| &m.hash),
        &e.task_id,
        &driver.record.driver_id,
        &e.setting_label,
        e.seed,
        e.budget,
        req.repetition,
    );
    let mut record = RunRecord {
        run_id: run_id.clone(),
        entry_index: req.entry_index,
        repetition: req.repetition,
        task_id: e.task_id.clone(),
        family: None,
        manifest_status: ManifestStatus::Unresolved,
        manifest_hash: None,
        driver: driver.record.clone(),
        variant: driver.variant(),
        setting_label: e.setting_label.clone(),
        seed: e.seed,
        budget: e.budget,
        freeze: None,
        release_root: req.release_root.to_string(),
        event_log_ref: None,
        terminal: None,
        trace_complete: false,
        episode_summaries: Vec::new(),
        reward_trajectory: vec![RewardPoint {
            wall_clock_ms: 0.0,
            reward: 0.0,
        }],
        planned_episodes: e.episodes,
        sim_concurrency: e.sim_concurrency,
        verifier_servers: e.verifier_servers,
        horizon_ms: e.horizon_ms,
        invalid_sample: false,
        retry_budget_violation: false,
        concurrency_trace: Vec::new(),
    };
    let Some(resolved) = req.manifest else {
        return RunOutput {
            record,
            events: Vec::new(),
        };
    };
    let m = &resolved.manifest;
    record.family = Some(m.family);
    record.manifest_status = ManifestStatus::Resolved;
    record.manifest_hash = Some(resolved.hash.clone());
    record.freeze = freeze_run(resolved, &driver.record, &e.setting_label, req.versions).ok();

    let stream_key: Vec<CanonicalValue> = vec![
        "gatebench.stream".into(),
        e.seed.into(),
        e.task_id.as_str().into(),
        e.setting_label.as_str().into(),
        u64::from(req.repetition).into(),
    ];
    let spec = FleetSpec {
        manifest: m,
        driver: &driver,
        setting: &req.setting,
        stream_key,
        budget: e.budget,
        episodes: e.episodes,
        sim_concurrency: e.sim_concurrency,
        verifier_servers: e.verifier_servers,
        horizon_ms: e.horizon_ms,
        max_attempts: e.max_attempts,
    };
    let outcome = run_fleet(&spec);

    let end_ms = outcome.drafts.iter().map(|d| d.wall_clock_ms).fold(0.0, f64::max);
    let successes = outcome
        .summaries
        .iter()
        .filter(|s| s.status == EpisodeStatus::Success)
        .count();
    let mut drafts = Vec::with_capacity(outcome.drafts.len() + 2);
    let mut start_payload = crate::schema::Payload::new();
    start_payload.insert("task_id".into(), json!(e.task_id));
    start_payload.insert("driver_id".into(), json!(driver.record.driver_id));
    start_payload.insert("setting_label".into(), json!(e.setting_label));
    start_payload.insert("driver_type".into(), json!(driver.record.driver_type.as_str()));
    start_payload.insert("family".into(), json!(m.family.as_str()));
    start_payload.insert("planned_episodes".into(), json!(e.episodes));
    start_payload.insert("sim_concurrency".into(), json!(e.sim_concurrency));
    if let Some(v) = driver.variant() {
        start_payload.insert("variant".into(), json!(v.label()));
    }
    drafts.push(EventDraft {
        episode_id: RUN_SCOPE.to_string(),
        step_index: 0,
        kind: EventKind::RunStart,
        wall_clock_ms: 0.0,
        timing: TimingFields::default(),
        payload: start_payload,
    });
    drafts.extend(outcome.drafts);
    let mut end_payload = crate::schema::Payload::new();
    end_payload.insert("status".into(), json!("completed"));
    end_payload.insert("episodes".into(), json!(outcome.summaries.len()));
    end_payload.insert("successes".into(), json!(successes));
    drafts.push(EventDraft {
        episode_id: RUN_SCOPE.to_string(),
        step_index: 0,
        kind: EventKind::RunEnd,
        wall_clock_ms: end_ms,
        timing: TimingFields::default(),
        payload: end_payload,
    });

    let provenance = ProvenanceFields {
        manifest_hash: resolved.hash.clone(),
        driver_id: driver.record.driver_id.clone(),
        model_backend_id: driver.record.model_backend_id.clone(),
        schema_version: SCHEMA_VERSION.to_string(),
        replay_class: m.replay_class,
        snapshot_digest: Some(crate::manifest::snapshot_digest(m)),
        verifier_version: crate::manifest::verifier_version(m),
        seed: e.seed,
    };
    let trace_seed = u64::from_str_radix(&run_id, 16).expect("hex run id");
    let events = finalize_events(&run_id, drafts, &provenance, trace_seed);
    let (_, complete) = validate_log(&events, true);
    record.event_log_ref = Some(io::log_ref(&run_id));

    record.trace_complete = complete;
    record.terminal = last_terminal(&events);
    record.reward_trajectory = build_reward_trajectory(&events, e.episodes);
    if record.variant.is_none() {
        record.retry_budget_violation = outcome.summaries.iter().any(|s| s.retry_exhausted);
        record.invalid_sample = outcome
            .summaries
            .iter()
            .any(|s| s.status == EpisodeStatus::Error && !s.retry_exhausted);
    }
    record.episode_summaries = outcome.summaries;
    if record.variant == Some(ControllerVariant::HookBOnly) {
        record.concurrency_trace = outcome.concurrency_trace;
    }
    RunOutput { record, events }
}

/// Terminal outcome of the last episode that produced one.
pub fn last_terminal(events: &[EventRecord]) -> Option<TerminalOutcome> {
    events
        .iter()
        .rev()
        .find(|e| e.kind == EventKind::TerminalResult)
        .and_then(|e| {
            Some(TerminalOutcome {
                status: TerminalStatus::parse(e.payload_str("status")?)?,
                evaluator_id: e.payload_str("evaluator_id")?.to_string(),
                detail: e.payload_str("detail").unwrap_or_default().to_string(),
            })
        })
}

/// Execute every entry and repetition. Output order is entry-major and does
/// not depend on `exec`.
pub fn run_plan(
    plan: &RunPlan,
    root: &ReleaseRoot,
    store: &dyn ManifestStore,
    exec: Execution,
) -> Result<RunSet, RunError> {
    plan.validate()?;
    if plan.release_root != root.root_id {
        return Err(RunError::InvalidPlan(format!(
            "plan binds root {} but {} was supplied",
            plan.release_root, root.root_id
        )));
    }
    let versions = VersionSet::default();
    let mut resolved: BTreeMap<&str, Option<ResolvedManifest>> = BTreeMap::new();
    for e in &plan.entries {
        resolved
            .entry(e.task_id.as_str())
            .or_insert_with(|| resolve_manifest(&e.task_id, root, store).ok());
    }
    let mut units = Vec::new();
    for (i, e) in plan.entries.iter().enumerate() {
        for rep in 0..e.repetitions {
            units.push((i, rep));
        }
    }
    let runs = ordered_map(&units, exec, |&(i, rep)| {
        let e = &plan.entries[i];
        let req = RunRequest {
            entry_index: i,
            repetition: rep,
            entry: e,
            driver: &plan.drivers[&e.driver_config_ref],
            setting: plan.setting(&e.setting_label).expect("validated"),
            manifest: resolved[e.task_id.as_str()].as_ref(),
            release_root: &plan.release_root,
            versions: &versions,
        };
        execute_run(&req)
    });
    let mut seen = BTreeSet::new();
    for r in &runs {
        if !seen.insert(r.record.run_id.as_str()) {
            return Err(RunError::DuplicateRunId(r.record.run_id.clone()));
        }
    }
    Ok(RunSet {
        release_root: plan.release_root.clone(),
        runs,
    })
}
