//! Declared drivers: the components that produce actions for a workload.
//!
//! Every driver call yields exactly one [`ActionRecord`] alongside the
//! [`Action`] handed to the environment.

mod hooks;
mod llm;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use hooks::{
    hook_a_filter, hook_b_adjust, ControllerVariant, DropReason, HookAVerdict, HookBConfig, SampleMeta,
    TelemetrySample, TelemetryWindow, WindowError,
};
pub use llm::{synthetic_llm_call, SyntheticLlmProfile};

use crate::manifest::{Family, TaskManifest};
use crate::schema::{hash_serialize, ActionRecord, CanonicalValue, Digest, ParseStatus};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DriverError {
    #[error("empty_script")]
    EmptyScript,
    #[error("script_exhausted: step {step} of {len}-action script")]
    ScriptExhausted { step: u64, len: usize },
    #[error("no_oracle: family {0}")]
    NoOracle(Family),
    #[error("invalid_profile: {0}")]
    InvalidProfile(String),
}

impl DriverError {
    pub fn code(&self) -> &'static str {
        match self {
            DriverError::EmptyScript => "empty_script",
            DriverError::ScriptExhausted { .. } => "script_exhausted",
            DriverError::NoOracle(_) => "no_oracle",
            DriverError::InvalidProfile(_) => "invalid_profile",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverType {
    Llm,
    Controller,
    Calibration,
    Sanity,
    Scripted,
}

impl DriverType {
    pub fn as_str(self) -> &'static str {
        match self {
            DriverType::Llm => "llm",
            DriverType::Controller => "controller",
            DriverType::Calibration => "calibration",
            DriverType::Sanity => "sanity",
            DriverType::Scripted => "scripted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceStatus {
    PaperFacing,
    SmokeOnly,
    FixtureBacked,
    Diagnostic,
}

fn default_version() -> String {
    "1.0.0".to_string()
}
fn default_budget() -> u32 {
    10
}
fn default_retry_budget() -> u32 {
    2
}
fn default_setting() -> String {
    "clean".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverRecord {
    pub driver_id: String,
    pub driver_type: DriverType,
    #[serde(default = "default_version")]
    pub driver_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_backend_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_engine: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template_hash: Option<Digest>,
    #[serde(default = "default_version")]
    pub parser_version: String,
    #[serde(default = "default_budget")]
    pub budget: u32,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_setting")]
    pub setting_label: String,
    pub evidence_status: EvidenceStatus,
}

impl DriverRecord {
    pub fn new(id: impl Into<String>, driver_type: DriverType, evidence_status: EvidenceStatus) -> Self {
        DriverRecord {
            driver_id: id.into(),
            driver_type,
            driver_version: default_version(),
            model_family: None,
            model_backend_id: None,
            backend_engine: None,
            prompt_template_hash: None,
            parser_version: default_version(),
            budget: default_budget(),
            retry_budget: default_retry_budget(),
            seed: 0,
            setting_label: default_setting(),
            evidence_status,
        }
    }

    /// Attach model provenance; the template hash is derived from its text.
    pub fn with_model(mut self, family: &str, backend_id: &str, engine: &str, template: &str) -> Self {
        self.model_family = Some(family.to_string());
        self.model_backend_id = Some(backend_id.to_string());
        self.backend_engine = Some(engine.to_string());
        self.prompt_template_hash = Some(Digest::from_bytes(template.as_bytes()));
        self
    }

    /// Metadata items a declared driver must carry but this one lacks.
    pub fn missing_metadata(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.driver_id.is_empty() {
            out.push("driver_id");
        }
        if self.driver_version.is_empty() {
            out.push("driver_version");
        }
        if self.parser_version.is_empty() {
            out.push("parser_version");
        }
        if self.setting_label.is_empty() {
            out.push("setting_label");
        }
        if self.budget == 0 {
            out.push("budget");
        }
        if self.driver_type == DriverType::Llm {
            if self.model_family.as_deref().is_none_or(str::is_empty) {
                out.push("model_family");
            }
            if self.backend_engine.as_deref().is_none_or(str::is_empty) {
                out.push("backend_engine");
            }
        }
        out
    }

    pub fn is_declared(&self) -> bool {
        self.missing_metadata().is_empty()
    }

    /// Policy version for action records; non-LLM drivers reuse the driver version.
    pub fn policy_version(&self) -> String {
        self.driver_version.clone()
    }
}

/// What the environment observes the driver to be looking at.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub task_id: String,
    pub family: Family,
    pub step: u64,
    pub progress: u32,
    pub goal: u32,
}

impl Observation {
    pub fn hash(&self) -> Digest {
        hash_serialize(self).expect("observations are canonical")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum ActionEffect {
    /// Environment-provided solving action; always advances.
    Solve,
    /// Leaves the environment unchanged.
    Noop,
    /// Advances with the given probability.
    Attempt { success_prob: f64 },
    /// Unparseable output; no progress, and the episode stalls.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub name: String,
    #[serde(flatten)]
    pub effect: ActionEffect,
}

impl Action {
    pub fn new(name: impl Into<String>, effect: ActionEffect) -> Self {
        Action {
            name: name.into(),
            effect,
        }
    }

    pub fn noop() -> Self {
        Action::new("noop", ActionEffect::Noop)
    }

    pub fn hash(&self) -> Digest {
        hash_serialize(self).expect("actions are canonical")
    }
}

fn parsed_record(obs: &Observation, action: &Action, driver: &DriverRecord) -> ActionRecord {
    ActionRecord {
        observation_hash: obs.hash(),
        prompt_hash: None,
        raw_output_hash: None,
        parsed_action_hash: Some(action.hash()),
        parse_status: ParseStatus::Parsed,
        invalid_action: false,
        prompt_tokens: 0,
        completion_tokens: 0,
        model_latency_ms: 0.0,
        backend_engine: None,
        policy_version: Some(driver.policy_version()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub actions: Vec<String>,
    #[serde(default)]
    pub cyclic: bool,
    /// Chance a scripted action advances the task.
    #[serde(default = "one")]
    pub success_prob: f64,
}

fn one() -> f64 {
    1.0
}

pub fn scripted_next_action(
    obs: &Observation,
    script: &Script,
    step: u64,
    driver: &DriverRecord,
) -> Result<(ActionRecord, Action), DriverError> {
    if script.actions.is_empty() {
        return Err(DriverError::EmptyScript);
    }
    let len = script.actions.len();
    if !script.cyclic && step as usize >= len {
        return Err(DriverError::ScriptExhausted { step, len });
    }
    let name = &script.actions[(step % len as u64) as usize];
    let action = Action::new(
        name.clone(),
        ActionEffect::Attempt {
            success_prob: script.success_prob,
        },
    );
    Ok((parsed_record(obs, &action, driver), action))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    Oracle,
    Noop,
}

/// Whether a task exposes an environment-provided solving action.
pub fn oracle_available(task: &TaskManifest) -> bool {
    task.param_bool("oracle_available")
        .unwrap_or(matches!(task.family, Family::Micro | Family::Code))
}

pub fn calibration_action(
    mode: CalibrationMode,
    task: &TaskManifest,
    obs: &Observation,
    driver: &DriverRecord,
) -> Result<(ActionRecord, Action), DriverError> {
    let action = match mode {
        CalibrationMode::Noop => Action::noop(),
        CalibrationMode::Oracle => {
            if !oracle_available(task) {
                return Err(DriverError::NoOracle(task.family));
            }
            Action::new("oracle", ActionEffect::Solve)
        }
    };
    Ok((parsed_record(obs, &action, driver), action))
}

/// How a configured driver produces actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverBehavior {
    Scripted(Script),
    Calibration {
        mode: CalibrationMode,
    },
    SyntheticLlm {
        profile: SyntheticLlmProfile,
    },
    Controller {
        variant: ControllerVariant,
        profile: SyntheticLlmProfile,
        #[serde(default)]
        hook_b: HookBConfig,
        #[serde(default = "default_window")]
        window_capacity: usize,
    },
}

fn default_window() -> usize {
    8
}

/// One entry of a run plan's driver configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    pub record: DriverRecord,
    pub behavior: DriverBehavior,
}

impl DriverConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        match &self.behavior {
            DriverBehavior::Scripted(s) => {
                if s.actions.is_empty() {
                    return Err(DriverError::EmptyScript);
                }
                if !(0.0..=1.0).contains(&s.success_prob) {
                    return Err(DriverError::InvalidProfile("script success_prob".into()));
                }
            }
            DriverBehavior::Calibration { .. } => {}
            DriverBehavior::SyntheticLlm { profile } => profile.validate()?,
            DriverBehavior::Controller {
                profile,
                hook_b,
                window_capacity,
                ..
            } => {
                profile.validate()?;
                hook_b.validate()?;
                if *window_capacity == 0 {
                    return Err(DriverError::InvalidProfile("window_capacity".into()));
                }
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Option<ControllerVariant> {
        match &self.behavior {
            DriverBehavior::Controller { variant, .. } => Some(*variant),
            _ => None,
        }
    }

    /// Whether calls go through a model and emit model request events.
    pub fn uses_model(&self) -> bool {
        matches!(
            self.behavior,
            DriverBehavior::SyntheticLlm { .. } | DriverBehavior::Controller { .. }
        )
    }
}

/// Per-episode driver state: its seeded generator and call counter.
#[derive(Debug, Clone)]
pub struct DriverSession<'a> {
    config: &'a DriverConfig,
    task: &'a TaskManifest,
    rng: ChaCha8Rng,
    calls: u64,
}

impl<'a> DriverSession<'a> {
    pub fn new(config: &'a DriverConfig, task: &'a TaskManifest, stream_seed: u64) -> Self {
        DriverSession {
            config,
            task,
            rng: ChaCha8Rng::seed_from_u64(stream_seed),
            calls: 0,
        }
    }

    pub fn next_action(&mut self, obs: &Observation) -> Result<(ActionRecord, Action), DriverError> {
        let record = &self.config.record;
        let out = match &self.config.behavior {
            DriverBehavior::Scripted(script) => scripted_next_action(obs, script, obs.step, record),
            DriverBehavior::Calibration { mode } => calibration_action(*mode, self.task, obs, record),
            DriverBehavior::SyntheticLlm { profile } | DriverBehavior::Controller { profile, .. } => {
                Ok(synthetic_llm_call(obs, profile, record, &mut self.rng, self.calls))
            }
        };
        self.calls += 1;
        out
    }
}

/// Stable seed for an independent random stream keyed by labels and numbers.
pub fn stream_seed(parts: &[CanonicalValue]) -> u64 {
    let d = crate::schema::canonical_hash(&CanonicalValue::List(parts.to_vec())).expect("canonical");
    u64::from_str_radix(&d.hex[..16], 16).expect("hex")
}

impl fmt::Display for DriverType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(step: u64) -> Observation {
        Observation {
            task_id: "t".into(),
            family: Family::Micro,
            step,
            progress: 0,
            goal: 3,
        }
    }

    fn scripted() -> DriverRecord {
        DriverRecord::new("s", DriverType::Scripted, EvidenceStatus::PaperFacing)
    }

    fn script(cyclic: bool) -> Script {
        Script {
            actions: vec!["click".into(), "type".into()],
            cyclic,
            success_prob: 1.0,
        }
    }

    #[test]
    fn script_first_step() {
        let (rec, a) = scripted_next_action(&obs(0), &script(false), 0, &scripted()).unwrap();
        assert_eq!(a.name, "click");
        assert_eq!(rec.parse_status, ParseStatus::Parsed);
        assert!(rec.is_consistent());
    }

    #[test]
    fn script_cycles() {
        let (_, a) = scripted_next_action(&obs(3), &script(true), 3, &scripted()).unwrap();
        assert_eq!(a.name, "type");
    }

    #[test]
    fn script_errors() {
        let empty = Script {
            actions: vec![],
            cyclic: true,
            success_prob: 1.0,
        };
        assert_eq!(
            scripted_next_action(&obs(0), &empty, 0, &scripted()).unwrap_err(),
            DriverError::EmptyScript
        );
        assert_eq!(
            scripted_next_action(&obs(2), &script(false), 2, &scripted())
                .unwrap_err()
                .code(),
            "script_exhausted"
        );
    }

    #[test]
    fn calibration_modes() {
        let d = DriverRecord::new("cal", DriverType::Calibration, EvidenceStatus::Diagnostic);
        let micro = TaskManifest::new(Family::Micro, "m", "r");
        let (_, a) = calibration_action(CalibrationMode::Noop, &micro, &obs(0), &d).unwrap();
        assert_eq!(a.effect, ActionEffect::Noop);
        let (_, a) = calibration_action(CalibrationMode::Oracle, &micro, &obs(0), &d).unwrap();
        assert_eq!(a.effect, ActionEffect::Solve);
        let web = TaskManifest::new(Family::Web, "w", "r");
        assert_eq!(
            calibration_action(CalibrationMode::Oracle, &web, &obs(0), &d).unwrap_err(),
            DriverError::NoOracle(Family::Web)
        );
        let web = web.with_param("oracle_available", true);
        assert!(calibration_action(CalibrationMode::Oracle, &web, &obs(0), &d).is_ok());
    }

    #[test]
    fn llm_record_needs_model_metadata() {
        let d = DriverRecord::new("q", DriverType::Llm, EvidenceStatus::PaperFacing);
        assert_eq!(d.missing_metadata(), vec!["model_family", "backend_engine"]);
        let d = d.with_model("qwen", "qwen-7b", "vllm", "tmpl");
        assert!(d.is_declared());
    }

    #[test]
    fn zero_budget_undeclared() {
        let mut d = scripted();
        d.budget = 0;
        assert!(!d.is_declared());
    }

    #[test]
    fn driver_config_json_shape() {
        let cfg = DriverConfig {
            record: scripted(),
            behavior: DriverBehavior::Scripted(script(true)),
        };
        let json = serde_json::to_value(&cfg).unwrap();
        assert_eq!(json["behavior"]["kind"], "scripted");
        let back: DriverConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn stream_seeds_differ_by_part() {
        let a = stream_seed(&[1u64.into(), "x".into()]);
        let b = stream_seed(&[2u64.into(), "x".into()]);
        assert_ne!(a, b);
        assert_eq!(a, stream_seed(&[1u64.into(), "x".into()]));
    }
}
