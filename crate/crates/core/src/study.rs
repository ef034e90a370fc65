//! The controller decision study: a backend × seed × budget × setting ×
//! variant grid over a frozen slice of web tasks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::drivers::{
    ControllerVariant, DriverBehavior, DriverConfig, DriverRecord, DriverType, EvidenceStatus, HookBConfig,
    SyntheticLlmProfile,
};
use crate::exec::Execution;
use crate::gate::{gate_runset, GateDecision};
use crate::manifest::{Family, MemoryStore, ReleaseRoot, TaskManifest};
use crate::report::{decision_study, DecisionStudyReport, ReportError};
use crate::runner::{run_plan, PlanEntry, RunError, RunPlan, RunSet};
use crate::simenv::SettingLabel;

pub const STUDY_ROOT_ID: &str = "study-root-v1";
pub const STUDY_ROOT_CREATED_AT: &str = "2026-01-01T00:00:00Z";

/// Frozen task slice with per-task goals.
pub const STUDY_TASKS: [(&str, u64); 9] = [
    ("105", 2),
    ("106", 3),
    ("124", 2),
    ("125", 3),
    ("142", 4),
    ("143", 2),
    ("149", 3),
    ("156", 4),
    ("163", 3),
];

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("unknown_grid: {0}")]
    UnknownGrid(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl StudyError {
    pub fn code(&self) -> &'static str {
        match self {
            StudyError::UnknownGrid(_) => "unknown_grid",
            StudyError::Run(e) => e.code(),
            StudyError::Report(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyBackend {
    pub label: String,
    pub backend_id: String,
    pub profile: SyntheticLlmProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyGrid {
    pub name: String,
    pub backends: Vec<StudyBackend>,
    pub seeds: Vec<u64>,
    pub budgets: Vec<u32>,
    pub settings: Vec<SettingLabel>,
    pub variants: Vec<ControllerVariant>,
    pub tasks: Vec<String>,
    pub episodes: u32,
    pub sim_concurrency: u32,
    pub verifier_servers: u32,
    pub horizon_ms: f64,
    pub hook_b: HookBConfig,
    pub window_capacity: usize,
}

fn backend(label: &str, mean_model_latency_ms: f64) -> StudyBackend {
    StudyBackend {
        label: label.to_string(),
        backend_id: format!("{label}-local"),
        profile: SyntheticLlmProfile {
            mean_model_latency_ms,
            latency_cv: 0.3,
            invalid_action_prob: 0.08,
            mean_prompt_tokens: 1800,
            mean_completion_tokens: 80,
            success_bias: 0.8,
        },
    }
}

impl StudyGrid {
    /// 2 backends × seeds 0/1 × budgets 5/7/9 × 2 settings × 2 variants.
    pub fn default_grid() -> Self {
        StudyGrid {
            name: "default".to_string(),
            backends: vec![backend("vllm", 180.0), backend("sglang", 165.0)],
            seeds: vec![0, 1],
            budgets: vec![5, 7, 9],
            settings: SettingLabel::ALL.to_vec(),
            variants: ControllerVariant::ALL.to_vec(),
            tasks: STUDY_TASKS.iter().map(|(t, _)| t.to_string()).collect(),
            episodes: 96,
            sim_concurrency: 16,
            verifier_servers: 2,
            horizon_ms: 40_000.0,
            hook_b: HookBConfig {
                pressure_threshold_ms: 50.0,
                min_conc: 1,
                max_conc: 16,
                step: 2,
            },
            window_capacity: 4,
        }
    }

    /// Single budget and seed slice of the default grid.
    pub fn fixed_budget() -> Self {
        StudyGrid {
            name: "fixed-budget".to_string(),
            seeds: vec![0],
            budgets: vec![7],
            ..Self::default_grid()
        }
    }

    pub fn by_name(name: &str) -> Result<Self, StudyError> {
        match name {
            "default" => Ok(Self::default_grid()),
            "fixed-budget" => Ok(Self::fixed_budget()),
            other => Err(StudyError::UnknownGrid(other.to_string())),
        }
    }

    pub fn run_count(&self) -> usize {
        self.backends.len()
            * self.seeds.len()
            * self.budgets.len()
            * self.settings.len()
            * self.variants.len()
            * self.tasks.len()
    }

    pub fn driver_ref(backend: &StudyBackend, variant: ControllerVariant) -> String {
        format!("{}-{}", backend.label, variant.label())
    }

    fn driver(&self, b: &StudyBackend, variant: ControllerVariant) -> DriverConfig {
        let record = DriverRecord::new(
            Self::driver_ref(b, variant),
            DriverType::Controller,
            EvidenceStatus::PaperFacing,
        )
        .with_model("synthetic-qwen", &b.backend_id, &b.label, "study-template-v1");
        DriverConfig {
            record,
            behavior: DriverBehavior::Controller {
                variant,
                profile: b.profile.clone(),
                hook_b: self.hook_b,
                window_capacity: self.window_capacity,
            },
        }
    }
}

/// Web manifests for the frozen task slice, bound to the study root.
pub fn study_manifests() -> Vec<TaskManifest> {
    STUDY_TASKS
        .iter()
        .map(|(id, goal)| {
            TaskManifest::new(Family::Web, *id, STUDY_ROOT_ID)
                .with_param("goal", *goal)
                .with_param("session_config", "verified-session-v1")
                .with_param("evaluator_semantics", "exact-progress")
                .with_param("exec_mode", "simulated")
        })
        .collect()
}

pub fn study_release_root() -> (ReleaseRoot, MemoryStore) {
    let mut root = ReleaseRoot::new(STUDY_ROOT_ID, STUDY_ROOT_CREATED_AT);
    let mut store = MemoryStore::default();
    for m in study_manifests() {
        root.register(&m).expect("study manifests are valid");
        store.insert(m);
    }
    (root, store)
}

/// One plan entry per grid point, in backend, seed, budget, setting,
/// variant, task order. Seeds are offset by `seed_base`.
pub fn build_study_plan(grid: &StudyGrid, seed_base: u64, concurrency: u32) -> RunPlan {
    let mut drivers = BTreeMap::new();
    let mut entries = Vec::with_capacity(grid.run_count());
    for b in &grid.backends {
        for &v in &grid.variants {
            drivers.insert(StudyGrid::driver_ref(b, v), grid.driver(b, v));
        }
        for &seed in &grid.seeds {
            for &budget in &grid.budgets {
                for &setting in &grid.settings {
                    for &v in &grid.variants {
                        for task in &grid.tasks {
                            let mut e =
                                PlanEntry::new(task, &StudyGrid::driver_ref(b, v), setting, seed_base + seed, budget);
                            e.episodes = grid.episodes;
                            e.sim_concurrency = grid.sim_concurrency;
                            e.verifier_servers = grid.verifier_servers;
                            e.horizon_ms = Some(grid.horizon_ms);
                            entries.push(e);
                        }
                    }
                }
            }
        }
    }
    RunPlan {
        release_root: STUDY_ROOT_ID.to_string(),
        concurrency,
        drivers,
        settings: BTreeMap::new(),
        entries,
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub runset: RunSet,
    pub decisions: Vec<GateDecision>,
    pub report: DecisionStudyReport,
}

/// Execute, gate and summarize the study against the built-in root.
pub fn run_study(grid: &StudyGrid, seed_base: u64, exec: Execution) -> Result<StudyOutput, StudyError> {
    let (root, store) = study_release_root();
    let plan = build_study_plan(grid, seed_base, exec.threads() as u32);
    let runset = run_plan(&plan, &root, &store, exec)?;
    let decisions = gate_runset(&runset, &root, exec);
    let report = decision_study(&runset.runs, &decisions)?;
    Ok(StudyOutput {
        runset,
        decisions,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = StudyGrid::default_grid();
        assert_eq!(g.run_count(), 2 * 2 * 3 * 2 * 2 * 9);
        let plan = build_study_plan(&g, 0, 1);
        assert_eq!(plan.entries.len(), g.run_count());
        assert_eq!(plan.drivers.len(), 4);
        plan.validate().unwrap();
        assert!(StudyGrid::by_name("nope").is_err());
        assert_eq!(StudyGrid::fixed_budget().run_count(), 2 * 2 * 2 * 9);
    }

    #[test]
    fn root_resolves_every_task() {
        let (root, store) = study_release_root();
        for (id, _) in STUDY_TASKS {
            crate::manifest::resolve_manifest(id, &root, &store).unwrap();
        }
    }
}
