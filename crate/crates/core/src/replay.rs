//! Family-specific replay: R0 summary recomputation, R1 event-trace replay
//! against a frozen evaluator, R2 snapshot/manifest replay of the verifier
//! decision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::exec::{ordered_map, Execution};
use crate::manifest::{
    snapshot_digest, verifier_version, Family, FreezeRecord, ManifestStore, TaskManifest, REPLAY_HARNESS_VERSION,
};
use crate::runner::{RunOutput, RunRecord};
use crate::schema::{Digest, EventKind, EventRecord, ReplayClass, SUPPORTED_SCHEMA_VERSIONS};
use crate::simenv::{verifier_decision, PatchQuality, TerminalStatus, DETAIL_STALE_SNAPSHOT};

/// Environment cost charged per replayed step.
pub const REPLAY_STEP_COST_MS: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("missing_replay_freeze: run {0}")]
    MissingReplayFreeze(String),
    #[error("replay_version_mismatch: {0}")]
    VersionMismatch(String),
    #[error("summary_mismatch: {0}")]
    SummaryMismatch(String),
    #[error("missing_manifest: {0}")]
    MissingManifest(String),
    #[error("missing_event_log: run {0}")]
    MissingEventLog(String),
    #[error("class_mismatch: {0}")]
    ClassMismatch(String),
}

impl ReplayError {
    pub fn code(&self) -> &'static str {
        match self {
            ReplayError::MissingReplayFreeze(_) => "missing_replay_freeze",
            ReplayError::VersionMismatch(_) => "replay_version_mismatch",
            ReplayError::SummaryMismatch(_) => "summary_mismatch",
            ReplayError::MissingManifest(_) => "missing_manifest",
            ReplayError::MissingEventLog(_) => "missing_event_log",
            ReplayError::ClassMismatch(_) => "class_mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAggregate {
    pub episode_id: String,
    pub steps: u64,
    pub step_latency_sum_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub episodes: usize,
    pub successes: usize,
    pub total_steps: u64,
    pub mean_step_latency_ms: f64,
    pub success_rate: f64,
}

impl SummaryStats {
    pub fn from_aggregates(aggs: &[EpisodeAggregate]) -> Self {
        let episodes = aggs.len();
        let successes = aggs
            .iter()
            .filter(|a| a.terminal == Some(TerminalStatus::Success))
            .count();
        let total_steps: u64 = aggs.iter().map(|a| a.steps).sum();
        let latency: f64 = aggs.iter().map(|a| a.step_latency_sum_ms).sum();
        SummaryStats {
            episodes,
            successes,
            total_steps,
            mean_step_latency_ms: if total_steps > 0 {
                latency / total_steps as f64
            } else {
                0.0
            },
            success_rate: if episodes > 0 {
                successes as f64 / episodes as f64
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorFreeze {
    pub verifier_id: String,
    pub verifier_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenVerdict {
    pub episode_id: String,
    pub patch_quality: PatchQuality,
    pub verifier_draw: f64,
    pub status: TerminalStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class")]
pub enum FrozenMaterial {
    R0 {
        summary: SummaryStats,
        aggregates: Vec<EpisodeAggregate>,
    },
    R1 {
        events: Vec<EventRecord>,
        evaluator: EvaluatorFreeze,
        session_config: BTreeMap<String, Value>,
        budget: u32,
    },
    R2 {
        manifest: TaskManifest,
        snapshot_digest: Digest,
        evaluator: EvaluatorFreeze,
        verdicts: Vec<FrozenVerdict>,
        episode_ids: Vec<String>,
        live_mean_step_ms: f64,
    },
}

impl FrozenMaterial {
    pub fn class(&self) -> ReplayClass {
        match self {
            FrozenMaterial::R0 { .. } => ReplayClass::R0,
            FrozenMaterial::R1 { .. } => ReplayClass::R1,
            FrozenMaterial::R2 { .. } => ReplayClass::R2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBundle {
    pub run_id: String,
    pub task_id: String,
    pub family: Family,
    pub replay_class: ReplayClass,
    pub harness_version: String,
    pub freeze: FreezeRecord,
    pub material: FrozenMaterial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReplay {
    pub episode_id: String,
    pub recorded: Option<TerminalStatus>,
    pub replayed: Option<TerminalStatus>,
    /// Decision of the frozen evaluator re-executed on the replayed state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluator: Option<TerminalStatus>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResult {
    pub run_id: String,
    pub replay_class: ReplayClass,
    pub terminal_match: bool,
    pub episodes: usize,
    pub matched_episodes: usize,
    pub per_step_latency_ms: Vec<f64>,
    pub live_mean_ms: f64,
    pub replay_mean_ms: f64,
    pub reduction: f64,
    pub episode_results: Vec<EpisodeReplay>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn reduction(live_mean_ms: f64, replay_mean_ms: f64) -> f64 {
    if live_mean_ms > 0.0 {
        (1.0 - replay_mean_ms / live_mean_ms).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Live latency of each environment step, grouped by episode in step order.
/// A step spans from its first model request (or step start) to its end.
pub fn live_step_latencies(events: &[EventRecord]) -> BTreeMap<String, Vec<f64>> {
    let mut starts: BTreeMap<(&str, u64), f64> = BTreeMap::new();
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in events {
        let key = (e.episode_id.as_str(), e.step_index);
        match e.kind {
            EventKind::ModelRequestStart | EventKind::ActionParsed | EventKind::EnvStepStart => {
                starts.entry(key).or_insert(e.wall_clock_ms);
            }
            EventKind::EnvStepEnd => {
                let start = starts.get(&key).copied().unwrap_or(e.wall_clock_ms);
                out.entry(e.episode_id.clone())
                    .or_default()
                    .push(e.wall_clock_ms - start);
            }
            _ => {}
        }
    }
    out
}

fn episode_ids(events: &[EventRecord]) -> Vec<String> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::EpisodeStart)
        .map(|e| e.episode_id.clone())
        .collect()
}

fn recorded_terminals(events: &[EventRecord]) -> BTreeMap<String, TerminalStatus> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::TerminalResult)
        .filter_map(|e| Some((e.episode_id.clone(), TerminalStatus::parse(e.payload_str("status")?)?)))
        .collect()
}

fn frozen_verdicts(events: &[EventRecord]) -> Result<Vec<FrozenVerdict>, ReplayError> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::VerifierOutcome)
        .map(|e| {
            let bad =
                |what: &str| ReplayError::VersionMismatch(format!("{}: verifier outcome lacks {what}", e.episode_id));
            let quality = e.payload.get("patch_quality").ok_or_else(|| bad("patch_quality"))?;
            Ok(FrozenVerdict {
                episode_id: e.episode_id.clone(),
                patch_quality: serde_json::from_value(quality.clone()).map_err(|_| bad("patch_quality"))?,
                verifier_draw: e.payload_f64("verifier_draw").ok_or_else(|| bad("verifier_draw"))?,
                status: e
                    .payload_str("status")
                    .and_then(TerminalStatus::parse)
                    .ok_or_else(|| bad("status"))?,
                detail: e.payload_str("detail").unwrap_or_default().to_string(),
            })
        })
        .collect()
}

/// Extract the frozen material of a run according to its family's class.
pub fn build_bundle(run: &RunOutput, store: &dyn ManifestStore) -> Result<ReplayBundle, ReplayError> {
    let rec: &RunRecord = &run.record;
    let freeze = rec
        .freeze
        .clone()
        .ok_or_else(|| ReplayError::MissingReplayFreeze(rec.run_id.clone()))?;
    let family = rec
        .family
        .ok_or_else(|| ReplayError::MissingReplayFreeze(format!("{} has no resolved family", rec.run_id)))?;
    if run.events.is_empty() {
        return Err(ReplayError::MissingEventLog(rec.run_id.clone()));
    }
    let load_manifest = || -> Result<TaskManifest, ReplayError> {
        store
            .load(&rec.task_id)
            .ok()
            .flatten()
            .ok_or_else(|| ReplayError::MissingManifest(rec.task_id.clone()))
    };
    let material = match family.replay_class() {
        ReplayClass::R0 => {
            let lat = live_step_latencies(&run.events);
            let terms = recorded_terminals(&run.events);
            let aggregates: Vec<EpisodeAggregate> = episode_ids(&run.events)
                .into_iter()
                .map(|id| {
                    let steps = lat.get(&id).map(Vec::as_slice).unwrap_or_default();
                    EpisodeAggregate {
                        steps: steps.len() as u64,
                        step_latency_sum_ms: steps.iter().sum(),
                        terminal: terms.get(&id).copied(),
                        episode_id: id,
                    }
                })
                .collect();
            FrozenMaterial::R0 {
                summary: SummaryStats::from_aggregates(&aggregates),
                aggregates,
            }
        }
        ReplayClass::R1 => {
            let m = load_manifest()?;
            FrozenMaterial::R1 {
                events: run.events.clone(),
                evaluator: EvaluatorFreeze {
                    verifier_id: m.verifier_id.clone(),
                    verifier_version: freeze.verifier_version.clone(),
                },
                session_config: m.family_params.clone(),
                budget: rec.budget,
            }
        }
        ReplayClass::R2 => {
            let m = load_manifest()?;
            let all: Vec<f64> = live_step_latencies(&run.events).into_values().flatten().collect();
            FrozenMaterial::R2 {
                snapshot_digest: freeze.snapshot_digest.clone(),
                evaluator: EvaluatorFreeze {
                    verifier_id: m.verifier_id.clone(),
                    verifier_version: freeze.verifier_version.clone(),
                },
                verdicts: frozen_verdicts(&run.events)?,
                episode_ids: episode_ids(&run.events),
                live_mean_step_ms: mean(&all),
                manifest: m,
            }
        }
    };
    Ok(ReplayBundle {
        run_id: rec.run_id.clone(),
        task_id: rec.task_id.clone(),
        family,
        replay_class: family.replay_class(),
        harness_version: REPLAY_HARNESS_VERSION.to_string(),
        freeze,
        material,
    })
}

fn check_versions(b: &ReplayBundle) -> Result<(), ReplayError> {
    let mismatch = |s: String| Err(ReplayError::VersionMismatch(s));
    if b.material.class() != b.replay_class || b.family.replay_class() != b.replay_class {
        return Err(ReplayError::ClassMismatch(format!(
            "{} bundle for {} holds {} material",
            b.replay_class,
            b.family.as_str(),
            b.material.class()
        )));
    }
    if b.harness_version != REPLAY_HARNESS_VERSION || b.freeze.replay_harness_version != b.harness_version {
        return mismatch(format!(
            "harness {} / frozen {} / running {REPLAY_HARNESS_VERSION}",
            b.harness_version, b.freeze.replay_harness_version
        ));
    }
    if !SUPPORTED_SCHEMA_VERSIONS.contains(&b.freeze.schema_version.as_str()) {
        return mismatch(format!("unsupported schema {}", b.freeze.schema_version));
    }
    match &b.material {
        FrozenMaterial::R0 { .. } => Ok(()),
        FrozenMaterial::R1 { events, evaluator, .. } => {
            if evaluator.verifier_version != b.freeze.verifier_version {
                return mismatch(format!(
                    "evaluator {} vs frozen {}",
                    evaluator.verifier_version, b.freeze.verifier_version
                ));
            }
            for e in events {
                let p = &e.provenance;
                if p.schema_version != b.freeze.schema_version
                    || p.driver_id != b.freeze.driver_id
                    || p.manifest_hash != b.freeze.manifest_hash
                    || p.verifier_version
                        .as_ref()
                        .is_some_and(|v| v != &evaluator.verifier_version)
                {
                    return mismatch(format!("event {} disagrees with the freeze record", e.sequence));
                }
                if e.kind == EventKind::VerifierOutcome
                    && e.payload_str("verifier_id").is_some_and(|v| v != evaluator.verifier_id)
                {
                    return mismatch(format!("event {} judged by another verifier", e.sequence));
                }
            }
            Ok(())
        }
        FrozenMaterial::R2 {
            manifest,
            snapshot_digest: digest,
            evaluator,
            ..
        } => {
            if &snapshot_digest(manifest) != digest || digest != &b.freeze.snapshot_digest {
                return mismatch("snapshot digest differs from the freeze".into());
            }
            if manifest.hash() != b.freeze.manifest_hash {
                return mismatch("manifest hash differs from the freeze".into());
            }
            let bound = verifier_version(manifest);
            if bound.as_deref() != Some(evaluator.verifier_version.as_str())
                || evaluator.verifier_version != b.freeze.verifier_version
            {
                return mismatch(format!("verifier {:?} vs frozen {}", bound, b.freeze.verifier_version));
            }
            Ok(())
        }
    }
}

fn finish(
    b: &ReplayBundle,
    episode_results: Vec<EpisodeReplay>,
    per_step_latency_ms: Vec<f64>,
    live_mean_ms: f64,
) -> ReplayResult {
    let matched_episodes = episode_results.iter().filter(|e| e.matched).count();
    let replay_mean_ms = mean(&per_step_latency_ms);
    ReplayResult {
        run_id: b.run_id.clone(),
        replay_class: b.replay_class,
        terminal_match: matched_episodes == episode_results.len(),
        episodes: episode_results.len(),
        matched_episodes,
        per_step_latency_ms,
        live_mean_ms,
        replay_mean_ms,
        reduction: reduction(live_mean_ms, replay_mean_ms),
        episode_results,
    }
}

fn replay_r1(b: &ReplayBundle, events: &[EventRecord], budget: u32) -> Result<ReplayResult, ReplayError> {
    let recorded = recorded_terminals(events);
    let verdicts: BTreeMap<String, FrozenVerdict> = frozen_verdicts(events)?
        .into_iter()
        .map(|v| (v.episode_id.clone(), v))
        .collect();
    let live = live_step_latencies(events);
    let mut per_step = Vec::new();
    let mut results = Vec::new();
    for id in episode_ids(events) {
        let mut progress = 0u64;
        let mut goal = None;
        let mut steps = 0u64;
        for e in events
            .iter()
            .filter(|e| e.episode_id == id && e.kind == EventKind::EnvStepEnd)
        {
            let p = e
                .payload_u64("progress")
                .ok_or_else(|| ReplayError::VersionMismatch(format!("{id}: step without progress")))?;
            let g = e.payload_u64("goal").or(goal);
            if p < progress || p > progress + 1 || g.is_some_and(|g| p > g) {
                return Err(ReplayError::VersionMismatch(format!(
                    "{id}: progress {progress} -> {p} is not a legal transition"
                )));
            }
            progress = p;
            goal = g;
            steps += 1;
            per_step.push(REPLAY_STEP_COST_MS);
        }
        let submitted = goal.is_some_and(|g| progress >= g) || steps >= u64::from(budget);
        let (evaluator, replayed) = if submitted {
            let quality = if goal.is_some_and(|g| progress >= g) {
                PatchQuality::Gold
            } else {
                PatchQuality::Noop
            };
            let frozen = verdicts.get(&id);
            let draw = frozen.map_or(0.0, |v| v.verifier_draw);
            let (status, _) = verifier_decision(b.family, quality, draw);
            // Staleness is a property of live queue timing, which replay does not reproduce.
            let replayed = match frozen {
                Some(v) if v.detail == DETAIL_STALE_SNAPSHOT => v.status,
                _ => status,
            };
            (Some(status), Some(replayed))
        } else {
            (None, None)
        };
        let rec = recorded.get(&id).copied();
        results.push(EpisodeReplay {
            matched: rec == replayed,
            recorded: rec,
            replayed,
            evaluator,
            episode_id: id,
        });
    }
    let live_all: Vec<f64> = live.into_values().flatten().collect();
    Ok(finish(b, results, per_step, mean(&live_all)))
}

fn replay_r2(b: &ReplayBundle, verdicts: &[FrozenVerdict], ids: &[String], live_mean: f64) -> ReplayResult {
    let by_id: BTreeMap<&str, &FrozenVerdict> = verdicts.iter().map(|v| (v.episode_id.as_str(), v)).collect();
    let results = ids
        .iter()
        .map(|id| match by_id.get(id.as_str()) {
            Some(v) => {
                let (status, _) = verifier_decision(b.family, v.patch_quality, v.verifier_draw);
                let replayed = if v.detail == DETAIL_STALE_SNAPSHOT {
                    v.status
                } else {
                    status
                };
                EpisodeReplay {
                    episode_id: id.clone(),
                    recorded: Some(v.status),
                    replayed: Some(replayed),
                    evaluator: Some(status),
                    matched: replayed == v.status,
                }
            }
            None => EpisodeReplay {
                episode_id: id.clone(),
                recorded: None,
                replayed: None,
                evaluator: None,
                matched: true,
            },
        })
        .collect();
    finish(b, results, Vec::new(), live_mean)
}

pub fn replay_run(bundle: &ReplayBundle) -> Result<ReplayResult, ReplayError> {
    check_versions(bundle)?;
    match &bundle.material {
        FrozenMaterial::R0 { summary, aggregates } => {
            let recomputed = SummaryStats::from_aggregates(aggregates);
            if &recomputed != summary {
                return Err(ReplayError::SummaryMismatch(format!(
                    "stored {summary:?}, recomputed {recomputed:?}"
                )));
            }
            let results = aggregates
                .iter()
                .map(|a| EpisodeReplay {
                    episode_id: a.episode_id.clone(),
                    recorded: a.terminal,
                    replayed: a.terminal,
                    evaluator: None,
                    matched: true,
                })
                .collect();
            Ok(finish(bundle, results, Vec::new(), summary.mean_step_latency_ms))
        }
        FrozenMaterial::R1 { events, budget, .. } => replay_r1(bundle, events, *budget),
        FrozenMaterial::R2 {
            verdicts,
            episode_ids,
            live_mean_step_ms,
            ..
        } => Ok(replay_r2(bundle, verdicts, episode_ids, *live_mean_step_ms)),
    }
}

/// Replay every run of `runs` whose family maps to `class` (all when `None`).
pub fn replay_runs(
    runs: &[RunOutput],
    store: &(dyn ManifestStore + Sync),
    class: Option<ReplayClass>,
    exec: Execution,
) -> Vec<Result<ReplayResult, ReplayError>> {
    let selected: Vec<&RunOutput> = runs
        .iter()
        .filter(|r| class.is_none() || r.record.family.map(Family::replay_class) == class)
        .collect();
    ordered_map(&selected, exec, |r| build_bundle(r, store).and_then(|b| replay_run(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{
        CalibrationMode, DriverBehavior, DriverConfig, DriverRecord, DriverType, EvidenceStatus, SyntheticLlmProfile,
    };
    use crate::manifest::{MemoryStore, ReleaseRoot};
    use crate::runner::{run_plan, PlanEntry, RunPlan};
    use crate::simenv::SettingLabel;

    fn run_one(m: TaskManifest, behavior: DriverBehavior, episodes: u32) -> (RunOutput, MemoryStore) {
        let mut root = ReleaseRoot::new("root-r", "2026-01-01T00:00:00Z");
        root.register(&m).unwrap();
        let task = m.task_id.clone();
        let mut store = MemoryStore::default();
        store.insert(m);
        let dtype = match behavior {
            DriverBehavior::SyntheticLlm { .. } => DriverType::Llm,
            _ => DriverType::Scripted,
        };
        let mut record = DriverRecord::new("d", dtype, EvidenceStatus::PaperFacing);
        if dtype == DriverType::Llm {
            record = record.with_model("synthetic", "vllm-local", "vllm", "t1");
        }
        let mut drivers = BTreeMap::new();
        drivers.insert("d".to_string(), DriverConfig { record, behavior });
        let mut entry = PlanEntry::new(&task, "d", SettingLabel::Clean, 3, 10);
        entry.episodes = episodes;
        entry.sim_concurrency = 4;
        let plan = RunPlan {
            release_root: "root-r".into(),
            concurrency: 1,
            drivers,
            settings: BTreeMap::new(),
            entries: vec![entry],
        };
        let set = run_plan(&plan, &root, &store, Execution::Sequential).unwrap();
        (set.runs.into_iter().next().unwrap(), store)
    }

    fn oracle() -> DriverBehavior {
        DriverBehavior::Calibration {
            mode: CalibrationMode::Oracle,
        }
    }

    #[test]
    fn class_per_family() {
        for (fam, class) in [
            (Family::Micro, ReplayClass::R0),
            (Family::Web, ReplayClass::R1),
            (Family::Code, ReplayClass::R2),
        ] {
            let m = TaskManifest::new(fam, "t", "root-r").with_param("verifier_version", "v1");
            let (run, store) = run_one(m, oracle(), 2);
            let b = build_bundle(&run, &store).unwrap();
            assert_eq!(b.replay_class, class);
            assert_eq!(b.material.class(), class);
            if let FrozenMaterial::R1 { events, .. } = &b.material {
                assert_eq!(events.len(), run.events.len());
            }
        }
    }

    #[test]
    fn web_llm_replay_matches_and_is_cheap() {
        let m = TaskManifest::new(Family::Web, "w", "root-r");
        let (run, store) = run_one(
            m,
            DriverBehavior::SyntheticLlm {
                profile: SyntheticLlmProfile::default(),
            },
            12,
        );
        let b = build_bundle(&run, &store).unwrap();
        let r = replay_run(&b).unwrap();
        assert!(r.terminal_match, "{:?}", r.episode_results);
        assert_eq!(r.episodes, 12);
        assert!(r.reduction >= 0.99, "reduction {}", r.reduction);
        assert_eq!(replay_run(&b).unwrap(), r);
    }

    #[test]
    fn tampered_summary_detected() {
        let (run, store) = run_one(TaskManifest::new(Family::Micro, "m", "root-r"), oracle(), 3);
        let mut b = build_bundle(&run, &store).unwrap();
        assert!(replay_run(&b).unwrap().terminal_match);
        if let FrozenMaterial::R0 { summary, .. } = &mut b.material {
            summary.successes += 1;
        }
        assert_eq!(replay_run(&b).unwrap_err().code(), "summary_mismatch");
    }

    #[test]
    fn code_gold_replays_verdict() {
        let m = TaskManifest::new(Family::Code, "c", "root-r").with_param("verifier_version", "v1");
        let (run, store) = run_one(m, oracle(), 3);
        let mut b = build_bundle(&run, &store).unwrap();
        let r = replay_run(&b).unwrap();
        assert!(r.terminal_match);
        assert!(r
            .episode_results
            .iter()
            .all(|e| e.replayed == Some(TerminalStatus::Success)));
        if let FrozenMaterial::R2 { manifest, .. } = &mut b.material {
            manifest.snapshot_ref = "elsewhere".into();
        }
        assert_eq!(replay_run(&b).unwrap_err().code(), "replay_version_mismatch");
    }

    #[test]
    fn missing_freeze_and_version_drift() {
        let (mut run, store) = run_one(TaskManifest::new(Family::Web, "w", "root-r"), oracle(), 2);
        let mut b = build_bundle(&run, &store).unwrap();
        b.freeze.replay_harness_version = "9.9.9".into();
        assert_eq!(replay_run(&b).unwrap_err().code(), "replay_version_mismatch");
        run.record.freeze = None;
        assert_eq!(build_bundle(&run, &store).unwrap_err().code(), "missing_replay_freeze");
    }

    #[test]
    fn reduction_formula() {
        assert!((reduction(400.0, 1.0) - 0.9975).abs() < 1e-12);
        assert_eq!(reduction(0.0, 1.0), 0.0);
        assert_eq!(reduction(1.0, 2.0), 0.0);
    }
}
