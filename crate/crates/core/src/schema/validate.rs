//! Per-run event validation.
//!
//! A [`RunValidator`] holds the boundary state of one run. Each call checks a
//! single record against the type invariants and the run's current state and
//! advances the state only when the record is accepted.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;
use serde_json::Value;

use super::event::*;
use super::trace::{SpanId, TraceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    SequenceOrder,
    MissingField,
    BoundaryMismatch,
    UnknownField,
    InvalidValue,
    UnsupportedSchemaVersion,
    TraceMismatch,
    DuplicateSpan,
    UnknownParent,
    RunMismatch,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::SequenceOrder => "sequence_order",
            ViolationCode::MissingField => "missing_field",
            ViolationCode::BoundaryMismatch => "boundary_mismatch",
            ViolationCode::UnknownField => "unknown_field",
            ViolationCode::InvalidValue => "invalid_value",
            ViolationCode::UnsupportedSchemaVersion => "unsupported_schema_version",
            ViolationCode::TraceMismatch => "trace_mismatch",
            ViolationCode::DuplicateSpan => "duplicate_span",
            ViolationCode::UnknownParent => "unknown_parent",
            ViolationCode::RunMismatch => "run_mismatch",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
}

impl Violation {
    fn new(code: ViolationCode, detail: impl Into<String>) -> Self {
        Violation {
            code,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "violations", rename_all = "snake_case")]
pub enum ValidationReport {
    Ok,
    Violations(Vec<Violation>),
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationReport::Ok)
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        match self {
            ValidationReport::Ok => false,
            ValidationReport::Violations(v) => v.iter().any(|x| x.code == code),
        }
    }

    fn from_list(list: Vec<Violation>) -> Self {
        if list.is_empty() {
            ValidationReport::Ok
        } else {
            ValidationReport::Violations(list)
        }
    }
}

/// State transition of an accepted event.
enum Change {
    Start(RunState),
    Next(EpisodeChange),
}

enum EpisodeChange {
    None,
    RunEnd,
    Open,
    Update(EpisodeState),
    Close,
}

#[derive(Debug, Default, Clone, Copy)]
struct EpisodeState {
    model_open: bool,
    step_open: bool,
    terminal_seen: bool,
}

#[derive(Debug, Clone)]
struct RunState {
    run_id: String,
    trace_id: TraceId,
    last_sequence: u64,
    spans: HashSet<SpanId>,
    open: BTreeMap<String, EpisodeState>,
    closed: BTreeSet<String>,
    ended: bool,
}

#[derive(Debug, Clone)]
pub struct RunValidator {
    strict: bool,
    run: Option<RunState>,
}

impl Default for RunValidator {
    fn default() -> Self {
        RunValidator::new(true)
    }
}

impl RunValidator {
    /// `strict` rejects payload keys outside the per-kind schema.
    pub fn new(strict: bool) -> Self {
        RunValidator { strict, run: None }
    }

    pub fn validate_event(&mut self, record: &EventRecord) -> ValidationReport {
        let mut out = Vec::new();
        check_fields(record, self.strict, &mut out);
        let change = self.check_boundaries(record, &mut out);
        if let (true, Some(change)) = (out.is_empty(), change) {
            self.apply(record, change);
        }
        ValidationReport::from_list(out)
    }

    /// Validate one serialized record, reporting absent required keys as
    /// `missing_field` before attempting to decode it.
    pub fn validate_value(&mut self, value: &Value) -> ValidationReport {
        let missing = missing_keys(value);
        if !missing.is_empty() {
            return ValidationReport::Violations(
                missing
                    .into_iter()
                    .map(|k| Violation::new(ViolationCode::MissingField, k))
                    .collect(),
            );
        }
        match serde_json::from_value::<EventRecord>(value.clone()) {
            Ok(rec) => self.validate_event(&rec),
            Err(e) => ValidationReport::Violations(vec![Violation::new(ViolationCode::InvalidValue, e.to_string())]),
        }
    }

    pub fn validate_line(&mut self, line: &str) -> ValidationReport {
        match serde_json::from_str::<Value>(line) {
            Ok(v) => self.validate_value(&v),
            Err(e) => ValidationReport::Violations(vec![Violation::new(ViolationCode::InvalidValue, e.to_string())]),
        }
    }

    /// Closing check: the run ended and every episode was closed.
    pub fn finish(&self) -> ValidationReport {
        match &self.run {
            None => ValidationReport::Violations(vec![Violation::new(ViolationCode::BoundaryMismatch, "no run_start")]),
            Some(run) => {
                let mut out = Vec::new();
                if !run.ended {
                    out.push(Violation::new(ViolationCode::BoundaryMismatch, "missing run_end"));
                }
                for ep in run.open.keys() {
                    out.push(Violation::new(
                        ViolationCode::BoundaryMismatch,
                        format!("episode {ep} never ended"),
                    ));
                }
                ValidationReport::from_list(out)
            }
        }
    }

    pub fn is_started(&self) -> bool {
        self.run.is_some()
    }

    fn check_boundaries(&self, rec: &EventRecord, out: &mut Vec<Violation>) -> Option<Change> {
        use ViolationCode::*;
        let kind = rec.kind;
        let Some(run) = &self.run else {
            if kind != EventKind::RunStart {
                out.push(Violation::new(BoundaryMismatch, format!("{kind} before run_start")));
                return None;
            }
            if let Some(p) = rec.trace.parent_span_id {
                out.push(Violation::new(UnknownParent, format!("run_start parent {p}")));
            }
            let mut spans = HashSet::new();
            spans.insert(rec.trace.span_id);
            return Some(Change::Start(RunState {
                run_id: rec.run_id.clone(),
                trace_id: rec.trace.trace_id,
                last_sequence: rec.sequence,
                spans,
                open: BTreeMap::new(),
                closed: BTreeSet::new(),
                ended: false,
            }));
        };

        if run.ended {
            out.push(Violation::new(BoundaryMismatch, format!("{kind} after run_end")));
        }
        if kind == EventKind::RunStart {
            out.push(Violation::new(BoundaryMismatch, "duplicate run_start"));
        }
        if rec.sequence <= run.last_sequence {
            out.push(Violation::new(
                SequenceOrder,
                format!("sequence {} after {}", rec.sequence, run.last_sequence),
            ));
        }
        if !rec.run_id.is_empty() && rec.run_id != run.run_id {
            out.push(Violation::new(RunMismatch, rec.run_id.clone()));
        }
        if rec.trace.trace_id != run.trace_id {
            out.push(Violation::new(TraceMismatch, rec.trace.trace_id.to_string()));
        }
        if run.spans.contains(&rec.trace.span_id) {
            out.push(Violation::new(DuplicateSpan, rec.trace.span_id.to_string()));
        }
        if let Some(p) = rec.trace.parent_span_id {
            if !run.spans.contains(&p) || p == rec.trace.span_id {
                out.push(Violation::new(UnknownParent, p.to_string()));
            }
        }

        let ep_id = rec.episode_id.as_str();
        let episode = match kind {
            EventKind::RunStart => EpisodeChange::None,
            EventKind::RunEnd => {
                if !run.open.is_empty() {
                    out.push(Violation::new(
                        BoundaryMismatch,
                        format!("run_end with {} open episodes", run.open.len()),
                    ));
                }
                EpisodeChange::RunEnd
            }
            EventKind::EpisodeStart => {
                if ep_id == RUN_SCOPE || run.open.contains_key(ep_id) || run.closed.contains(ep_id) {
                    out.push(Violation::new(
                        BoundaryMismatch,
                        format!("episode_start {ep_id} reused"),
                    ));
                }
                EpisodeChange::Open
            }
            EventKind::Error if ep_id == RUN_SCOPE => EpisodeChange::None,
            _ => {
                let Some(mut ep) = run.open.get(ep_id).copied() else {
                    out.push(Violation::new(
                        BoundaryMismatch,
                        format!("{kind} outside open episode {ep_id}"),
                    ));
                    return None;
                };
                let mut bad = |msg: &str| out.push(Violation::new(BoundaryMismatch, format!("{kind}: {msg}")));
                match kind {
                    EventKind::ModelRequestStart => {
                        if ep.model_open || ep.step_open {
                            bad("request already open");
                        }
                        ep.model_open = true;
                    }
                    EventKind::ModelRequestEnd => {
                        if !ep.model_open {
                            bad("no open model request");
                        }
                        ep.model_open = false;
                    }
                    EventKind::ActionParsed => {
                        if ep.model_open || ep.step_open {
                            bad("model request or step still open");
                        }
                    }
                    EventKind::EnvStepStart => {
                        if ep.step_open || ep.model_open {
                            bad("step already open");
                        }
                        if ep.terminal_seen {
                            bad("step after terminal_result");
                        }
                        ep.step_open = true;
                    }
                    EventKind::EnvStepEnd => {
                        if !ep.step_open {
                            bad("no open env step");
                        }
                        ep.step_open = false;
                    }
                    EventKind::Retry => {
                        if !ep.step_open {
                            bad("retry outside env step");
                        }
                    }
                    EventKind::ToolCall | EventKind::Error => {}
                    EventKind::VerifierOutcome => {
                        if ep.step_open || ep.terminal_seen {
                            bad("verifier outcome inside step or after terminal");
                        }
                    }
                    EventKind::TerminalResult => {
                        if ep.step_open || ep.model_open || ep.terminal_seen {
                            bad("terminal_result misplaced");
                        }
                        ep.terminal_seen = true;
                    }
                    EventKind::EpisodeEnd => {
                        if ep.step_open || ep.model_open {
                            bad("episode_end with open step");
                        }
                        return Some(Change::Next(EpisodeChange::Close));
                    }
                    EventKind::RunStart | EventKind::RunEnd | EventKind::EpisodeStart => {
                        unreachable!("handled above")
                    }
                }
                EpisodeChange::Update(ep)
            }
        };
        Some(Change::Next(episode))
    }

    fn apply(&mut self, rec: &EventRecord, change: Change) {
        let next = match change {
            Change::Start(state) => {
                self.run = Some(state);
                return;
            }
            Change::Next(next) => next,
        };
        let Some(run) = self.run.as_mut() else { return };
        run.last_sequence = rec.sequence;
        run.spans.insert(rec.trace.span_id);
        let ep_id = rec.episode_id.as_str();
        match next {
            EpisodeChange::None => {}
            EpisodeChange::RunEnd => run.ended = true,
            EpisodeChange::Open => {
                run.open.insert(ep_id.to_string(), EpisodeState::default());
            }
            EpisodeChange::Update(ep) => {
                if let Some(slot) = run.open.get_mut(ep_id) {
                    *slot = ep;
                }
            }
            EpisodeChange::Close => {
                run.open.remove(ep_id);
                run.closed.insert(ep_id.to_string());
            }
        }
    }
}

fn check_fields(rec: &EventRecord, strict: bool, out: &mut Vec<Violation>) {
    use ViolationCode::*;
    let mut missing = |name: &str| out.push(Violation::new(MissingField, name));
    if rec.run_id.is_empty() {
        missing("run_id");
    }
    if rec.episode_id.is_empty() {
        missing("episode_id");
    }
    if rec.provenance.driver_id.is_empty() {
        missing("provenance.driver_id");
    }
    if rec.provenance.schema_version.is_empty() {
        missing("provenance.schema_version");
    }
    for key in rec.kind.required_payload() {
        if !rec.payload.contains_key(*key) {
            missing(&format!("payload.{key}"));
        }
    }
    for (key, value) in &rec.payload {
        if payload_type(key).is_some_and(|t| !t.matches(value)) {
            out.push(Violation::new(InvalidValue, format!("payload.{key}")));
        }
    }
    let schema = &rec.provenance.schema_version;
    if !schema.is_empty() && !SUPPORTED_SCHEMA_VERSIONS.contains(&schema.as_str()) {
        out.push(Violation::new(UnsupportedSchemaVersion, schema.clone()));
    }
    if !rec.provenance.manifest_hash.is_well_formed() {
        out.push(Violation::new(InvalidValue, "provenance.manifest_hash"));
    }
    if let Some(d) = &rec.provenance.snapshot_digest {
        if !d.is_well_formed() {
            out.push(Violation::new(InvalidValue, "provenance.snapshot_digest"));
        }
    }
    if !rec.timing.is_valid() {
        out.push(Violation::new(InvalidValue, "timing"));
    }
    if !rec.wall_clock_ms.is_finite() || rec.wall_clock_ms < 0.0 {
        out.push(Violation::new(InvalidValue, "wall_clock_ms"));
    }
    if strict {
        let kind = rec.kind;
        for key in rec.payload.keys() {
            let k = key.as_str();
            if !kind.required_payload().contains(&k) && !kind.optional_payload().contains(&k) {
                out.push(Violation::new(UnknownField, format!("payload.{key}")));
            }
        }
    }
    if rec.kind == EventKind::ActionParsed {
        let status = rec.payload_str("parse_status");
        let invalid = rec.payload_bool("invalid_action");
        if let (Some(status), Some(invalid)) = (status, invalid) {
            if invalid != (status != "parsed") {
                out.push(Violation::new(
                    InvalidValue,
                    "invalid_action disagrees with parse_status",
                ));
            }
        }
    }
}

fn missing_keys(value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec!["<record>".to_string()];
    };
    let need = |o: &serde_json::Map<String, Value>, keys: &[&str], prefix: &str, out: &mut Vec<String>| {
        for k in keys {
            if !o.contains_key(*k) {
                out.push(format!("{prefix}{k}"));
            }
        }
    };
    need(obj, REQUIRED_TOP_LEVEL, "", &mut out);
    if let Some(t) = obj.get("trace").and_then(Value::as_object) {
        need(t, REQUIRED_TRACE, "trace.", &mut out);
    }
    if let Some(t) = obj.get("timing").and_then(Value::as_object) {
        need(t, REQUIRED_TIMING, "timing.", &mut out);
    }
    if let Some(p) = obj.get("provenance").and_then(Value::as_object) {
        need(p, REQUIRED_PROVENANCE, "provenance.", &mut out);
        for digest_key in ["manifest_hash", "snapshot_digest"] {
            if let Some(d) = p.get(digest_key).and_then(Value::as_object) {
                need(d, REQUIRED_DIGEST, &format!("provenance.{digest_key}."), &mut out);
            }
        }
    }
    let kind = obj.get("kind").and_then(Value::as_str).and_then(EventKind::parse);
    if let (Some(kind), Some(p)) = (kind, obj.get("payload").and_then(Value::as_object)) {
        need(p, kind.required_payload(), "payload.", &mut out);
    }
    out
}

/// Validate a complete log; returns the per-event reports and whether the
/// whole trace is complete (every event accepted, boundaries closed).
pub fn validate_log(events: &[EventRecord], strict: bool) -> (Vec<ValidationReport>, bool) {
    let mut v = RunValidator::new(strict);
    let reports: Vec<_> = events.iter().map(|e| v.validate_event(e)).collect();
    let complete = reports.iter().all(ValidationReport::is_ok) && v.finish().is_ok();
    (reports, complete)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{new_trace_context, Digest};
    use serde_json::json;

    fn prov() -> ProvenanceFields {
        ProvenanceFields {
            manifest_hash: Digest::from_bytes(b"m"),
            driver_id: "d".into(),
            model_backend_id: None,
            schema_version: SCHEMA_VERSION.into(),
            replay_class: ReplayClass::R0,
            snapshot_digest: None,
            verifier_version: None,
            seed: 7,
        }
    }

    struct Log {
        seq: u64,
        span: u64,
        root: Option<SpanId>,
    }

    impl Log {
        fn new() -> Self {
            Log {
                seq: 0,
                span: 0,
                root: None,
            }
        }
        fn ev(&mut self, kind: EventKind, ep: &str, payload: Value) -> EventRecord {
            let mut trace = new_trace_context(7, self.span);
            if let Some(r) = self.root {
                trace = trace.with_parent(r);
            } else {
                self.root = Some(trace.span_id);
            }
            let rec = EventRecord {
                run_id: "r1".into(),
                episode_id: ep.into(),
                step_index: 0,
                trace,
                kind,
                sequence: self.seq,
                wall_clock_ms: self.seq as f64,
                timing: TimingFields::default(),
                provenance: prov(),
                payload: serde_json::from_value(payload).unwrap(),
            };
            self.seq += 1;
            self.span += 1;
            rec
        }
    }

    fn run_start(log: &mut Log) -> EventRecord {
        log.ev(
            EventKind::RunStart,
            RUN_SCOPE,
            json!({"task_id": "t", "driver_id": "d", "setting_label": "clean"}),
        )
    }

    #[test]
    fn first_run_start_ok() {
        let mut log = Log::new();
        let mut v = RunValidator::default();
        assert!(v.validate_event(&run_start(&mut log)).is_ok());
    }

    #[test]
    fn step_end_without_start() {
        let mut log = Log::new();
        let mut v = RunValidator::default();
        assert!(v.validate_event(&run_start(&mut log)).is_ok());
        assert!(v
            .validate_event(&log.ev(EventKind::EpisodeStart, "e0", json!({"task_id": "t"})))
            .is_ok());
        let r = v.validate_event(&log.ev(EventKind::EnvStepEnd, "e0", json!({"progress": 1})));
        assert!(r.has(ViolationCode::BoundaryMismatch));
    }

    #[test]
    fn event_before_run_start() {
        let mut log = Log::new();
        let mut v = RunValidator::default();
        let r = v.validate_event(&log.ev(EventKind::EpisodeStart, "e0", json!({"task_id": "t"})));
        assert!(r.has(ViolationCode::BoundaryMismatch));
        assert!(!v.is_started());
    }

    #[test]
    fn sequence_regression() {
        let mut log = Log::new();
        let mut v = RunValidator::default();
        assert!(v.validate_event(&run_start(&mut log)).is_ok());
        let mut e = log.ev(EventKind::EpisodeStart, "e0", json!({"task_id": "t"}));
        e.sequence = 0;
        assert!(v.validate_event(&e).has(ViolationCode::SequenceOrder));
        // state not advanced: the same episode can still be opened
        e.sequence = 5;
        assert!(v.validate_event(&e).is_ok());
    }

    #[test]
    fn missing_payload_field() {
        let mut log = Log::new();
        let mut v = RunValidator::default();
        let r = v.validate_event(&log.ev(EventKind::RunStart, RUN_SCOPE, json!({"task_id": "t"})));
        assert!(r.has(ViolationCode::MissingField));
    }

    #[test]
    fn payload_types_checked() {
        let mut log = Log::new();
        let e = log.ev(
            EventKind::RunStart,
            RUN_SCOPE,
            json!({"task_id": "t", "driver_id": [], "setting_label": "clean"}),
        );
        let r = RunValidator::new(false).validate_event(&e);
        assert!(r.has(ViolationCode::InvalidValue));
    }

    #[test]
    fn strict_rejects_unknown_permissive_keeps() {
        let mut log = Log::new();
        let e = log.ev(
            EventKind::RunStart,
            RUN_SCOPE,
            json!({"task_id": "t", "driver_id": "d", "setting_label": "clean", "extra": 1}),
        );
        assert!(RunValidator::new(true)
            .validate_event(&e)
            .has(ViolationCode::UnknownField));
        assert!(RunValidator::new(false).validate_event(&e).is_ok());
    }

    #[test]
    fn episode_must_close_before_run_end() {
        let mut log = Log::new();
        let mut v = RunValidator::default();
        v.validate_event(&run_start(&mut log));
        v.validate_event(&log.ev(EventKind::EpisodeStart, "e0", json!({"task_id": "t"})));
        let r = v.validate_event(&log.ev(EventKind::RunEnd, RUN_SCOPE, json!({"status": "ok"})));
        assert!(r.has(ViolationCode::BoundaryMismatch));
        assert!(!v.finish().is_ok());
    }

    #[test]
    fn duplicate_terminal_rejected() {
        let mut log = Log::new();
        let mut v = RunValidator::default();
        v.validate_event(&run_start(&mut log));
        v.validate_event(&log.ev(EventKind::EpisodeStart, "e0", json!({"task_id": "t"})));
        let t = json!({"status": "success", "evaluator_id": "x"});
        assert!(v
            .validate_event(&log.ev(EventKind::TerminalResult, "e0", t.clone()))
            .is_ok());
        assert!(v
            .validate_event(&log.ev(EventKind::TerminalResult, "e0", t))
            .has(ViolationCode::BoundaryMismatch));
    }

    #[test]
    fn unsupported_schema_version() {
        let mut log = Log::new();
        let mut e = run_start(&mut log);
        e.provenance.schema_version = "9.9.9".into();
        assert!(RunValidator::default()
            .validate_event(&e)
            .has(ViolationCode::UnsupportedSchemaVersion));
    }

    #[test]
    fn inconsistent_parse_status() {
        let mut log = Log::new();
        let mut v = RunValidator::default();
        v.validate_event(&run_start(&mut log));
        v.validate_event(&log.ev(EventKind::EpisodeStart, "e0", json!({"task_id": "t"})));
        let hash = serde_json::to_value(Digest::from_bytes(b"o")).unwrap();
        let r = v.validate_event(&log.ev(
            EventKind::ActionParsed,
            "e0",
            json!({"observation_hash": hash, "parse_status": "parsed", "invalid_action": true,
                   "prompt_tokens": 0, "completion_tokens": 0, "model_latency_ms": 0.0}),
        ));
        assert!(r.has(ViolationCode::InvalidValue));
    }

    #[test]
    fn value_route_reports_missing_keys() {
        let mut log = Log::new();
        let e = run_start(&mut log);
        let mut value = serde_json::to_value(&e).unwrap();
        value["provenance"].as_object_mut().unwrap().remove("seed");
        let r = RunValidator::default().validate_value(&value);
        assert_eq!(
            r,
            ValidationReport::Violations(vec![Violation::new(ViolationCode::MissingField, "provenance.seed")])
        );
    }
}
