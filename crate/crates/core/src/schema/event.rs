use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::canonical::Digest;
use super::trace::TraceContext;

/// Schema version written to every event and log header.
pub const SCHEMA_VERSION: &str = "1.0.0";
/// Versions the validator accepts.
pub const SUPPORTED_SCHEMA_VERSIONS: &[&str] = &[SCHEMA_VERSION];

/// Episode id carried by run-scoped events.
pub const RUN_SCOPE: &str = "run";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReplayClass {
    R0,
    R1,
    R2,
}

impl fmt::Display for ReplayClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplayClass::R0 => "R0",
            ReplayClass::R1 => "R1",
            ReplayClass::R2 => "R2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RunStart,
    RunEnd,
    EpisodeStart,
    EpisodeEnd,
    ModelRequestStart,
    ModelRequestEnd,
    ActionParsed,
    EnvStepStart,
    EnvStepEnd,
    ToolCall,
    VerifierOutcome,
    Retry,
    Error,
    TerminalResult,
}

impl EventKind {
    pub const ALL: [EventKind; 14] = [
        EventKind::RunStart,
        EventKind::RunEnd,
        EventKind::EpisodeStart,
        EventKind::EpisodeEnd,
        EventKind::ModelRequestStart,
        EventKind::ModelRequestEnd,
        EventKind::ActionParsed,
        EventKind::EnvStepStart,
        EventKind::EnvStepEnd,
        EventKind::ToolCall,
        EventKind::VerifierOutcome,
        EventKind::Retry,
        EventKind::Error,
        EventKind::TerminalResult,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::RunStart => "run_start",
            EventKind::RunEnd => "run_end",
            EventKind::EpisodeStart => "episode_start",
            EventKind::EpisodeEnd => "episode_end",
            EventKind::ModelRequestStart => "model_request_start",
            EventKind::ModelRequestEnd => "model_request_end",
            EventKind::ActionParsed => "action_parsed",
            EventKind::EnvStepStart => "env_step_start",
            EventKind::EnvStepEnd => "env_step_end",
            EventKind::ToolCall => "tool_call",
            EventKind::VerifierOutcome => "verifier_outcome",
            EventKind::Retry => "retry",
            EventKind::Error => "error",
            EventKind::TerminalResult => "terminal_result",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Payload keys that must be present for this kind.
    pub fn required_payload(self) -> &'static [&'static str] {
        match self {
            EventKind::RunStart => &["task_id", "driver_id", "setting_label"],
            EventKind::RunEnd => &["status"],
            EventKind::EpisodeStart => &["task_id"],
            EventKind::EpisodeEnd => &["status", "steps"],
            EventKind::ModelRequestStart => &["prompt_hash"],
            EventKind::ModelRequestEnd => &["prompt_tokens", "completion_tokens"],
            EventKind::ActionParsed => &[
                "observation_hash",
                "parse_status",
                "invalid_action",
                "prompt_tokens",
                "completion_tokens",
                "model_latency_ms",
            ],
            EventKind::EnvStepStart => &["action"],
            EventKind::EnvStepEnd => &["progress"],
            EventKind::ToolCall => &["tool"],
            EventKind::VerifierOutcome => &["status", "verifier_id"],
            EventKind::Retry => &["attempt"],
            EventKind::Error => &["code"],
            EventKind::TerminalResult => &["status", "evaluator_id"],
        }
    }

    /// Payload keys that may be present in addition to the required ones.
    pub fn optional_payload(self) -> &'static [&'static str] {
        match self {
            EventKind::RunStart => &[
                "driver_type",
                "family",
                "planned_episodes",
                "sim_concurrency",
                "variant",
            ],
            EventKind::RunEnd => &["episodes", "successes"],
            EventKind::EpisodeStart => &["attempt", "slot"],
            EventKind::EpisodeEnd => &["drop_reason"],
            EventKind::ModelRequestStart => &["model_backend_id"],
            EventKind::ModelRequestEnd => &["backend_engine", "raw_output_hash"],
            EventKind::ActionParsed => &[
                "action",
                "backend_engine",
                "parsed_action_hash",
                "policy_version",
                "prompt_hash",
                "raw_output_hash",
            ],
            EventKind::EnvStepEnd => &["fault", "goal"],
            EventKind::ToolCall => &["exit_status"],
            EventKind::VerifierOutcome => &["detail", "patch_quality", "ticket", "verifier_draw"],
            EventKind::Retry => &["cause"],
            EventKind::Error => &["detail"],
            EventKind::TerminalResult => &["detail"],
            EventKind::EnvStepStart => &[],
        }
    }

    pub fn is_run_scoped(self) -> bool {
        matches!(self, EventKind::RunStart | EventKind::RunEnd)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingFields {
    pub queue_wait_ms: f64,
    pub service_time_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_latency_ms: Option<f64>,
}

impl TimingFields {
    pub fn service(ms: f64) -> Self {
        TimingFields {
            service_time_ms: ms,
            ..Default::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        ok(self.queue_wait_ms)
            && ok(self.service_time_ms)
            && [self.model_latency_ms, self.tool_latency_ms, self.verifier_latency_ms]
                .into_iter()
                .flatten()
                .all(ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceFields {
    pub manifest_hash: Digest,
    pub driver_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_backend_id: Option<String>,
    pub schema_version: String,
    pub replay_class: ReplayClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_digest: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_version: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Parsed,
    Invalid,
    Empty,
}

/// Action-level record produced by every driver call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub observation_hash: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output_hash: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_action_hash: Option<Digest>,
    pub parse_status: ParseStatus,
    pub invalid_action: bool,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub model_latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_engine: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_version: Option<String>,
}

impl ActionRecord {
    /// `invalid_action` must mirror the parse status.
    pub fn is_consistent(&self) -> bool {
        self.invalid_action == (self.parse_status != ParseStatus::Parsed)
            && self.model_latency_ms.is_finite()
            && self.model_latency_ms >= 0.0
    }
}

pub type Payload = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub run_id: String,
    pub episode_id: String,
    pub step_index: u64,
    pub trace: TraceContext,
    pub kind: EventKind,
    pub sequence: u64,
    pub wall_clock_ms: f64,
    pub timing: TimingFields,
    pub provenance: ProvenanceFields,
    pub payload: Payload,
}

impl EventRecord {
    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(|v| v.as_str())
    }

    pub fn payload_u64(&self, key: &str) -> Option<u64> {
        self.payload.get(key).and_then(|v| v.as_u64())
    }

    pub fn payload_f64(&self, key: &str) -> Option<f64> {
        self.payload.get(key).and_then(|v| v.as_f64())
    }

    pub fn payload_bool(&self, key: &str) -> Option<bool> {
        self.payload.get(key).and_then(|v| v.as_bool())
    }
}

/// JSON type expected for a payload key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadType {
    Str,
    UInt,
    Num,
    Bool,
    Object,
}

impl PayloadType {
    pub fn matches(self, v: &serde_json::Value) -> bool {
        match self {
            PayloadType::Str => v.is_string(),
            PayloadType::UInt => v.is_u64(),
            PayloadType::Num => v.as_f64().is_some_and(f64::is_finite),
            PayloadType::Bool => v.is_boolean(),
            PayloadType::Object => v.is_object(),
        }
    }
}

/// Expected type of a payload key; `None` for keys outside the schema.
pub fn payload_type(key: &str) -> Option<PayloadType> {
    use PayloadType::*;
    Some(match key {
        "task_id" | "driver_id" | "setting_label" | "status" | "prompt_hash" | "observation_hash" | "parse_status"
        | "action" | "tool" | "verifier_id" | "code" | "evaluator_id" | "detail" | "drop_reason"
        | "model_backend_id" | "backend_engine" | "raw_output_hash" | "parsed_action_hash" | "policy_version"
        | "cause" | "driver_type" | "family" | "variant" => Str,
        "steps" | "prompt_tokens" | "completion_tokens" | "attempt" | "progress" | "goal" | "planned_episodes"
        | "sim_concurrency" | "episodes" | "successes" | "slot" | "fault" | "ticket" => UInt,
        "model_latency_ms" | "verifier_draw" | "exit_status" => Num,
        "invalid_action" => Bool,
        "patch_quality" => Object,
        _ => return None,
    })
}

/// Top-level keys every serialized event must carry.
pub const REQUIRED_TOP_LEVEL: &[&str] = &[
    "run_id",
    "episode_id",
    "step_index",
    "trace",
    "kind",
    "sequence",
    "wall_clock_ms",
    "timing",
    "provenance",
    "payload",
];
pub const REQUIRED_TRACE: &[&str] = &["trace_id", "span_id"];
pub const REQUIRED_TIMING: &[&str] = &["queue_wait_ms", "service_time_ms"];
pub const REQUIRED_PROVENANCE: &[&str] = &["manifest_hash", "driver_id", "schema_version", "replay_class", "seed"];
pub const REQUIRED_DIGEST: &[&str] = &["algorithm", "hex"];

/// First line of an event log file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: String,
}

impl Default for LogHeader {
    fn default() -> Self {
        LogHeader {
            schema_version: SCHEMA_VERSION.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in EventKind::ALL {
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.as_str()));
            assert_eq!(EventKind::parse(k.as_str()), Some(k));
        }
    }

    #[test]
    fn payload_key_sets_disjoint() {
        for k in EventKind::ALL {
            for r in k.required_payload() {
                assert!(!k.optional_payload().contains(r), "{k}: {r}");
            }
        }
    }

    #[test]
    fn timing_validity() {
        assert!(TimingFields::service(3.0).is_valid());
        assert!(!TimingFields::service(-1.0).is_valid());
        let t = TimingFields {
            model_latency_ms: Some(f64::NAN),
            ..Default::default()
        };
        assert!(!t.is_valid());
    }
}
