//! Built-in demo release root and run plan covering every family and
//! evidence stratum.

use std::collections::BTreeMap;

use crate::drivers::{
    CalibrationMode, ControllerVariant, DriverBehavior, DriverConfig, DriverRecord, DriverType, EvidenceStatus, Script,
    SyntheticLlmProfile,
};
use crate::manifest::{Family, MemoryStore, ReleaseRoot, TaskManifest};
use crate::runner::{PlanEntry, RunPlan};
use crate::simenv::SettingLabel;
use crate::study::StudyGrid;

pub const DEMO_ROOT_ID: &str = "demo-root-v1";
pub const DEMO_ROOT_CREATED_AT: &str = "2026-01-01T00:00:00Z";

/// Code tasks used as verifier controls.
pub const DEMO_CODE_TASKS: [&str; 5] = ["c-201", "c-202", "c-203", "c-204", "c-205"];
pub const DEMO_WEB_TASKS: [&str; 2] = ["w-101", "w-102"];
pub const DEMO_MICRO_TASKS: [&str; 2] = ["m-001", "m-002"];

pub fn demo_manifests() -> Vec<TaskManifest> {
    let mut out = Vec::new();
    for id in DEMO_MICRO_TASKS {
        out.push(TaskManifest::new(Family::Micro, id, DEMO_ROOT_ID));
    }
    for (i, id) in DEMO_WEB_TASKS.iter().enumerate() {
        out.push(
            TaskManifest::new(Family::Web, *id, DEMO_ROOT_ID)
                .with_param("goal", 2 + i as u64)
                .with_param("session_config", "verified-session-v1")
                .with_param("evaluator_semantics", "exact-progress"),
        );
    }
    for (i, id) in DEMO_CODE_TASKS.iter().enumerate() {
        out.push(
            TaskManifest::new(Family::Code, *id, DEMO_ROOT_ID)
                .with_param("verifier_version", "pytest-8.2.0")
                .with_param("repo_state", format!("{:040x}", 0xc0de_0000_u64 + i as u64)),
        );
    }
    out
}

pub fn demo_release_root() -> (ReleaseRoot, MemoryStore) {
    let mut root = ReleaseRoot::new(DEMO_ROOT_ID, DEMO_ROOT_CREATED_AT);
    let mut store = MemoryStore::default();
    for m in demo_manifests() {
        root.register(&m).expect("demo manifests are valid");
        store.insert(m);
    }
    (root, store)
}

pub fn calibration_driver(id: &str, mode: CalibrationMode) -> DriverConfig {
    DriverConfig {
        record: DriverRecord::new(id, DriverType::Calibration, EvidenceStatus::Diagnostic),
        behavior: DriverBehavior::Calibration { mode },
    }
}

pub fn llm_driver(id: &str) -> DriverConfig {
    DriverConfig {
        record: DriverRecord::new(id, DriverType::Llm, EvidenceStatus::PaperFacing).with_model(
            "synthetic-qwen",
            "qwen-7b-local",
            "vllm",
            "demo-template-v1",
        ),
        behavior: DriverBehavior::SyntheticLlm {
            profile: SyntheticLlmProfile::default(),
        },
    }
}

fn scripted_driver(id: &str, status: EvidenceStatus) -> DriverConfig {
    DriverConfig {
        record: DriverRecord::new(id, DriverType::Scripted, status),
        behavior: DriverBehavior::Scripted(Script {
            actions: vec!["advance".into(), "inspect".into()],
            cyclic: true,
            success_prob: 1.0,
        }),
    }
}

fn controller_driver(id: &str, variant: ControllerVariant, grid: &StudyGrid) -> DriverConfig {
    DriverConfig {
        record: DriverRecord::new(id, DriverType::Controller, EvidenceStatus::PaperFacing).with_model(
            "synthetic-qwen",
            "vllm-local",
            "vllm",
            "study-template-v1",
        ),
        behavior: DriverBehavior::Controller {
            variant,
            profile: grid.backends[0].profile.clone(),
            hook_b: grid.hook_b,
            window_capacity: grid.window_capacity,
        },
    }
}

fn entry(task: &str, driver: &str, setting: SettingLabel, budget: u32, episodes: u32, conc: u32) -> PlanEntry {
    let mut e = PlanEntry::new(task, driver, setting, 0, budget);
    e.episodes = episodes;
    e.sim_concurrency = conc;
    e.verifier_servers = conc;
    e
}

/// Calibration controls on every code task, LLM and scripted anchors, a
/// fixture-backed row, and one decision-study cell per setting.
pub fn demo_plan() -> RunPlan {
    let mut drivers = BTreeMap::new();
    drivers.insert(
        "oracle".to_string(),
        calibration_driver("oracle", CalibrationMode::Oracle),
    );
    drivers.insert("noop".to_string(), calibration_driver("noop", CalibrationMode::Noop));
    drivers.insert("qwen-vllm".to_string(), llm_driver("qwen-vllm"));
    drivers.insert(
        "scripted".to_string(),
        scripted_driver("scripted", EvidenceStatus::PaperFacing),
    );
    drivers.insert(
        "fixture".to_string(),
        scripted_driver("fixture", EvidenceStatus::FixtureBacked),
    );
    let grid = StudyGrid::default_grid();
    for v in ControllerVariant::ALL {
        let id = format!("vllm-{}", v.label());
        drivers.insert(id.clone(), controller_driver(&id, v, &grid));
    }

    let mut entries = Vec::new();
    for task in DEMO_CODE_TASKS {
        entries.push(entry(task, "oracle", SettingLabel::Clean, 10, 1, 1));
        entries.push(entry(task, "noop", SettingLabel::Clean, 10, 1, 1));
    }
    for task in DEMO_MICRO_TASKS {
        entries.push(entry(task, "scripted", SettingLabel::Clean, 10, 4, 2));
    }
    entries.push(entry(DEMO_MICRO_TASKS[0], "fixture", SettingLabel::Clean, 10, 1, 1));
    for task in DEMO_WEB_TASKS {
        entries.push(entry(task, "qwen-vllm", SettingLabel::Clean, 12, 8, 4));
    }
    entries.push(entry(DEMO_CODE_TASKS[0], "qwen-vllm", SettingLabel::Clean, 12, 8, 4));
    for setting in SettingLabel::ALL {
        for v in ControllerVariant::ALL {
            let mut e = entry(
                DEMO_WEB_TASKS[0],
                &format!("vllm-{}", v.label()),
                setting,
                7,
                grid.episodes,
                grid.sim_concurrency,
            );
            e.verifier_servers = grid.verifier_servers;
            e.horizon_ms = Some(grid.horizon_ms);
            entries.push(e);
        }
    }
    RunPlan {
        release_root: DEMO_ROOT_ID.to_string(),
        concurrency: 1,
        drivers,
        settings: BTreeMap::new(),
        entries,
    }
}
