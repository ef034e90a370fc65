//! Discrete-event execution of one run.
//!
//! A run is a pool of simulated actors working through planned episode slots.
//! Actors interact with private environment instances and meet only at the
//! shared [`VerifierQueue`]. Events are drafted per episode with simulated
//! wall-clock stamps; sequencing happens after a stable time sort.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::drivers::{
    hook_a_filter, hook_b_adjust, stream_seed, ControllerVariant, DriverBehavior, DriverConfig, DriverSession,
    DropReason, HookAVerdict, HookBConfig, Observation, SampleMeta, TelemetrySample, TelemetryWindow,
};
use crate::manifest::{Family, TaskManifest};
use crate::schema::{CanonicalValue, EventKind, Payload, TimingFields};
use crate::simenv::{
    env_step, init_env, submit_with_load, uses_verifier, verifier_outcome, EnvState, OperatingSetting, VerifierQueue,
    VerifierResult,
};

/// An event before trace context, sequence, and provenance are attached.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EventDraft {
    pub episode_id: String,
    pub step_index: u64,
    pub kind: EventKind,
    pub wall_clock_ms: f64,
    pub timing: TimingFields,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    Failure,
    Error,
    Dropped,
}

impl EpisodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeStatus::Success => "success",
            EpisodeStatus::Failure => "failure",
            EpisodeStatus::Error => "error",
            EpisodeStatus::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode_id: String,
    pub slot: u32,
    pub attempt: u32,
    pub status: EpisodeStatus,
    pub steps: u64,
    pub start_ms: f64,
    pub end_ms: f64,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_reason: Option<DropReason>,
    #[serde(default)]
    pub retry_exhausted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_code: Option<String>,
}

pub(crate) struct FleetSpec<'a> {
    pub manifest: &'a TaskManifest,
    pub driver: &'a DriverConfig,
    pub setting: &'a OperatingSetting,
    pub stream_key: Vec<CanonicalValue>,
    pub budget: u32,
    pub episodes: u32,
    pub sim_concurrency: u32,
    pub verifier_servers: u32,
    pub horizon_ms: Option<f64>,
    pub max_attempts: u32,
}

pub(crate) struct FleetOutcome {
    pub drafts: Vec<EventDraft>,
    pub summaries: Vec<EpisodeSummary>,
    pub concurrency_trace: Vec<(f64, u32)>,
}

fn payload<const N: usize>(pairs: [(&str, Value); N]) -> Payload {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub(crate) fn episode_id(slot: u32, attempt: u32) -> String {
    format!("ep-{slot:04}-{attempt}")
}

struct Controller {
    variant: ControllerVariant,
    hook_b: HookBConfig,
    window: TelemetryWindow,
}

enum InteractionEnd {
    /// Episode closed during interaction.
    Closed,
    /// Waiting for the verifier.
    Submit,
}

struct Flight {
    actor: usize,
    slot: u32,
    attempt: u32,
    id: String,
    state: EnvState,
    rng: ChaCha8Rng,
    start_ms: f64,
    requeue: bool,
}

#[derive(Clone, Copy)]
enum Wake {
    Done,
    Submit,
    Verdict { ticket: u64 },
}

struct Fleet<'a> {
    spec: &'a FleetSpec<'a>,
    controller: Option<Controller>,
    queue: VerifierQueue,
    drafts: Vec<EventDraft>,
    flights: Vec<Flight>,
    summaries: Vec<Option<EpisodeSummary>>,
    heap: BinaryHeap<Reverse<(u64, u64, usize, u8, u64)>>,
    seq: u64,
    work: VecDeque<(u32, u32)>,
    idle: BTreeSet<usize>,
    active: u32,
    target: u32,
    concurrency_trace: Vec<(f64, u32)>,
}

pub(crate) fn run_fleet(spec: &FleetSpec<'_>) -> FleetOutcome {
    let controller = match &spec.driver.behavior {
        DriverBehavior::Controller {
            variant,
            hook_b,
            window_capacity,
            ..
        } => Some(Controller {
            variant: *variant,
            hook_b: *hook_b,
            window: TelemetryWindow::new(*window_capacity),
        }),
        _ => None,
    };
    let (actors, target) = match &controller {
        Some(c) if c.variant == ControllerVariant::HookBOnly => (
            c.hook_b.max_conc.max(1),
            spec.sim_concurrency.clamp(c.hook_b.min_conc, c.hook_b.max_conc),
        ),
        _ => (spec.sim_concurrency.max(1), spec.sim_concurrency.max(1)),
    };
    let mut fleet = Fleet {
        spec,
        controller,
        queue: VerifierQueue::new(spec.verifier_servers.max(1) as usize),
        drafts: Vec::new(),
        flights: Vec::new(),
        summaries: Vec::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        work: (0..spec.episodes).map(|s| (s, 0)).collect(),
        idle: (0..actors as usize).collect(),
        active: 0,
        target,
        concurrency_trace: vec![(0.0, target)],
    };
    fleet.fill(0.0);
    while let Some(Reverse((bits, _, flight, tag, ticket))) = fleet.heap.pop() {
        let t = f64::from_bits(bits);
        let wake = match tag {
            0 => Wake::Done,
            1 => Wake::Submit,
            _ => Wake::Verdict { ticket },
        };
        fleet.handle(flight, wake, t);
    }
    FleetOutcome {
        drafts: fleet.drafts,
        summaries: fleet.summaries.into_iter().flatten().collect(),
        concurrency_trace: fleet.concurrency_trace,
    }
}

impl<'a> Fleet<'a> {
    fn schedule(&mut self, t: f64, flight: usize, wake: Wake) {
        let (tag, ticket) = match wake {
            Wake::Done => (0, 0),
            Wake::Submit => (1, 0),
            Wake::Verdict { ticket } => (2, ticket),
        };
        self.seq += 1;
        self.heap
            .push(Reverse((t.max(0.0).to_bits(), self.seq, flight, tag, ticket)));
    }

    fn variant(&self) -> Option<ControllerVariant> {
        self.controller.as_ref().map(|c| c.variant)
    }

    fn hook_a(&self) -> bool {
        self.variant() == Some(ControllerVariant::HookAOnly)
    }

    /// Start episodes on idle actors until the concurrency target is met.
    fn fill(&mut self, t: f64) {
        while self.active < self.target {
            if self.work.is_empty() || self.spec.horizon_ms.is_some_and(|h| t >= h) {
                return;
            }
            let Some(actor) = self.idle.pop_first() else {
                return;
            };
            let (slot, attempt) = self.work.pop_front().expect("checked non-empty");
            self.start(actor, slot, attempt, t);
        }
    }

    fn emit(&mut self, episode_id: &str, step: u64, kind: EventKind, t: f64, timing: TimingFields, p: Payload) {
        self.drafts.push(EventDraft {
            episode_id: episode_id.to_string(),
            step_index: step,
            kind,
            wall_clock_ms: t,
            timing,
            payload: p,
        });
    }

    fn stream(&self, label: &str, slot: u32, attempt: u32) -> u64 {
        let mut key = self.spec.stream_key.clone();
        key.push(label.into());
        key.push(u64::from(slot).into());
        key.push(u64::from(attempt).into());
        stream_seed(&key)
    }

    fn start(&mut self, actor: usize, slot: u32, attempt: u32, t0: f64) {
        self.active += 1;
        let spec = self.spec;
        let id = episode_id(slot, attempt);
        let state = init_env(spec.manifest, spec.setting, spec.driver.record.seed)
            .expect("manifest and setting validated before execution")
            .with_budget(spec.budget, spec.driver.record.retry_budget)
            .at_clock(t0);
        let flight = Flight {
            actor,
            slot,
            attempt,
            id,
            state,
            rng: ChaCha8Rng::seed_from_u64(self.stream("env", slot, attempt)),
            start_ms: t0,
            requeue: false,
        };
        let index = self.flights.len();
        self.flights.push(flight);
        self.summaries.push(None);
        let end = self.interact(index);
        let t = self.flights[index].state.sim_clock_ms;
        match end {
            InteractionEnd::Closed => self.schedule(t, index, Wake::Done),
            InteractionEnd::Submit => self.schedule(t, index, Wake::Submit),
        }
    }

    fn close(
        &mut self,
        index: usize,
        status: EpisodeStatus,
        drop_reason: Option<DropReason>,
        retry_exhausted: bool,
        error_code: Option<String>,
    ) {
        let f = &self.flights[index];
        let t = f.state.sim_clock_ms;
        let steps = f.state.step_count;
        let id = f.id.clone();
        let mut p = payload([("status", json!(status.as_str())), ("steps", json!(steps))]);
        if let Some(r) = drop_reason {
            p.insert("drop_reason".into(), json!(r.as_str()));
        }
        self.emit(&id, steps, EventKind::EpisodeEnd, t, TimingFields::default(), p);
        let f = &mut self.flights[index];
        f.requeue = status == EpisodeStatus::Dropped;
        self.summaries[index] = Some(EpisodeSummary {
            episode_id: id,
            slot: f.slot,
            attempt: f.attempt,
            status,
            steps,
            start_ms: f.start_ms,
            end_ms: t,
            wall_ms: t - f.start_ms,
            drop_reason,
            retry_exhausted,
            error_code,
        });
    }

    /// Run the interaction phase of an episode.
    fn interact(&mut self, index: usize) -> InteractionEnd {
        let spec = self.spec;
        let hook_a = self.hook_a();
        let uses_model = spec.driver.uses_model();
        let (slot, attempt, id, t0) = {
            let f = &self.flights[index];
            (f.slot, f.attempt, f.id.clone(), f.start_ms)
        };
        self.emit(
            &id,
            0,
            EventKind::EpisodeStart,
            t0,
            TimingFields::default(),
            payload([
                ("task_id", json!(spec.manifest.task_id)),
                ("slot", json!(slot)),
                ("attempt", json!(attempt)),
            ]),
        );
        let mut session = DriverSession::new(spec.driver, spec.manifest, self.stream("driver", slot, attempt));
        loop {
            let state = self.flights[index].state.clone();
            if !state.accepts_steps() {
                break;
            }
            let step = state.step_count;
            let obs = Observation {
                task_id: state.task_id.clone(),
                family: state.family,
                step,
                progress: state.solved_progress,
                goal: state.goal,
            };
            let mut t = state.sim_clock_ms;
            let (rec, action) = match session.next_action(&obs) {
                Ok(x) => x,
                Err(e) => {
                    self.emit(
                        &id,
                        step,
                        EventKind::Error,
                        t,
                        TimingFields::default(),
                        payload([("code", json!(e.code())), ("detail", json!(e.to_string()))]),
                    );
                    self.close(index, EpisodeStatus::Error, None, false, Some(e.code().to_string()));
                    return InteractionEnd::Closed;
                }
            };
            if uses_model {
                let mut p = payload([("prompt_hash", json!(rec.prompt_hash.as_ref().map(|d| d.hex.clone())))]);
                if let Some(b) = &spec.driver.record.model_backend_id {
                    p.insert("model_backend_id".into(), json!(b));
                }
                self.emit(&id, step, EventKind::ModelRequestStart, t, TimingFields::default(), p);
                t += rec.model_latency_ms;
                let mut p = payload([
                    ("prompt_tokens", json!(rec.prompt_tokens)),
                    ("completion_tokens", json!(rec.completion_tokens)),
                ]);
                if let Some(b) = &rec.backend_engine {
                    p.insert("backend_engine".into(), json!(b));
                }
                if let Some(h) = &rec.raw_output_hash {
                    p.insert("raw_output_hash".into(), json!(h.hex));
                }
                let timing = TimingFields {
                    service_time_ms: rec.model_latency_ms,
                    model_latency_ms: Some(rec.model_latency_ms),
                    ..Default::default()
                };
                self.emit(&id, step, EventKind::ModelRequestEnd, t, timing, p);
            }
            let mut p = payload([
                ("observation_hash", json!(rec.observation_hash.hex)),
                ("parse_status", serde_json::to_value(rec.parse_status).expect("enum")),
                ("invalid_action", json!(rec.invalid_action)),
                ("prompt_tokens", json!(rec.prompt_tokens)),
                ("completion_tokens", json!(rec.completion_tokens)),
                ("model_latency_ms", json!(rec.model_latency_ms)),
                ("action", json!(action.name)),
            ]);
            for (k, v) in [
                ("prompt_hash", &rec.prompt_hash),
                ("raw_output_hash", &rec.raw_output_hash),
                ("parsed_action_hash", &rec.parsed_action_hash),
            ] {
                if let Some(d) = v {
                    p.insert(k.into(), json!(d.hex));
                }
            }
            if let Some(b) = &rec.backend_engine {
                p.insert("backend_engine".into(), json!(b));
            }
            if let Some(v) = &rec.policy_version {
                p.insert("policy_version".into(), json!(v));
            }
            let timing = TimingFields {
                model_latency_ms: uses_model.then_some(rec.model_latency_ms),
                ..Default::default()
            };
            self.emit(&id, step, EventKind::ActionParsed, t, timing, p);
            self.flights[index].state.sim_clock_ms = t;

            if hook_a && rec.invalid_action {
                let meta = SampleMeta {
                    invalid_sample_marker: true,
                    ..SampleMeta::clean(spec.driver.record.retry_budget)
                };
                if let HookAVerdict::Drop(reason) = hook_a_filter(&meta) {
                    self.close(index, EpisodeStatus::Dropped, Some(reason), false, None);
                    return InteractionEnd::Closed;
                }
            }

            self.emit(
                &id,
                step,
                EventKind::EnvStepStart,
                t,
                TimingFields::default(),
                payload([("action", json!(action.name))]),
            );
            let flight = &mut self.flights[index];
            let before = flight.state.clone();
            let (next, out) = env_step(&before, &action, spec.setting, &mut flight.rng)
                .expect("interaction loop only steps live states");
            flight.state = next;
            let mut tf = t;
            for (i, lat) in out.attempt_latencies_ms.iter().enumerate().take(out.faults as usize) {
                tf += lat;
                self.emit(
                    &id,
                    step,
                    EventKind::Retry,
                    tf,
                    TimingFields::service(*lat),
                    payload([("attempt", json!(i + 1)), ("cause", json!("fault_injection"))]),
                );
            }
            let t_end = t + out.latency_ms();
            if spec.manifest.family == Family::Code && !out.retry_exhausted {
                self.emit(
                    &id,
                    step,
                    EventKind::ToolCall,
                    t_end,
                    TimingFields {
                        tool_latency_ms: Some(out.latency_ms()),
                        ..Default::default()
                    },
                    payload([("tool", json!("apply_edit")), ("exit_status", json!(0))]),
                );
            }
            if out.retry_exhausted {
                self.emit(
                    &id,
                    step,
                    EventKind::Error,
                    t_end,
                    TimingFields::default(),
                    payload([
                        ("code", json!("retry_budget_exceeded")),
                        ("detail", json!(format!("{} faults", out.faults))),
                    ]),
                );
            }
            let progress = self.flights[index].state.solved_progress;
            let goal = self.flights[index].state.goal;
            let mut p = payload([("progress", json!(progress)), ("goal", json!(goal))]);
            if out.faults > 0 {
                p.insert("fault".into(), json!(out.faults));
            }
            self.emit(&id, step, EventKind::EnvStepEnd, t_end, out.timing, p);

            if out.retry_exhausted {
                if hook_a {
                    let meta = SampleMeta {
                        retry_count: out.faults,
                        ..SampleMeta::clean(spec.driver.record.retry_budget)
                    };
                    if let HookAVerdict::Drop(reason) = hook_a_filter(&meta) {
                        self.close(index, EpisodeStatus::Dropped, Some(reason), true, None);
                        return InteractionEnd::Closed;
                    }
                }
                self.close(
                    index,
                    EpisodeStatus::Error,
                    None,
                    true,
                    Some("retry_budget_exceeded".into()),
                );
                return InteractionEnd::Closed;
            }
        }
        let state = &self.flights[index].state;
        if let Some(term) = state.terminal.clone() {
            let t = state.sim_clock_ms;
            let steps = state.step_count;
            self.emit(
                &id,
                steps,
                EventKind::TerminalResult,
                t,
                TimingFields::default(),
                payload([
                    ("status", json!(term.status.as_str())),
                    ("evaluator_id", json!(term.evaluator_id)),
                    ("detail", json!(term.detail)),
                ]),
            );
            let status = if term.is_success() {
                EpisodeStatus::Success
            } else {
                EpisodeStatus::Failure
            };
            self.close(index, status, None, false, None);
            return InteractionEnd::Closed;
        }
        debug_assert!(uses_verifier(state.family));
        InteractionEnd::Submit
    }

    fn handle(&mut self, index: usize, wake: Wake, t: f64) {
        match wake {
            Wake::Submit => {
                let setting = self.spec.setting;
                let f = &mut self.flights[index];
                let demand = f.state.draw_verifier_demand(setting, &mut f.rng);
                let ticket = submit_with_load(&mut self.queue, t, demand, setting).expect("positive demand");
                let end = self.queue.ticket(ticket).expect("just submitted").end_ms;
                self.schedule(end, index, Wake::Verdict { ticket });
            }
            Wake::Verdict { ticket } => {
                self.verdict(index, ticket, t);
                self.release(index, t);
            }
            Wake::Done => self.release(index, t),
        }
    }

    fn verdict(&mut self, index: usize, ticket: u64, t: f64) {
        let spec = self.spec;
        let f = &mut self.flights[index];
        let quality = f.state.submission();
        let result: VerifierResult = verifier_outcome(
            &self.queue,
            ticket,
            f.state.family,
            &f.state.evaluator_id,
            quality,
            spec.setting,
            &mut f.rng,
        )
        .expect("ticket was served");
        f.state.apply_verdict(result.outcome.clone(), t);
        let id = f.id.clone();
        let steps = f.state.step_count;
        let verifier_id = spec.manifest.verifier_id.clone();
        let timing = TimingFields {
            queue_wait_ms: result.queue_wait_ms,
            service_time_ms: result.service_ms,
            verifier_latency_ms: Some(result.verifier_latency_ms),
            ..Default::default()
        };
        self.emit(
            &id,
            steps,
            EventKind::VerifierOutcome,
            t,
            timing,
            payload([
                ("status", json!(result.outcome.status.as_str())),
                ("verifier_id", json!(verifier_id)),
                ("detail", json!(result.outcome.detail)),
                ("patch_quality", serde_json::to_value(quality).expect("quality")),
                ("ticket", json!(ticket)),
                ("verifier_draw", json!(result.draw)),
            ]),
        );
        self.emit(
            &id,
            steps,
            EventKind::TerminalResult,
            t,
            TimingFields::default(),
            payload([
                ("status", json!(result.outcome.status.as_str())),
                ("evaluator_id", json!(result.outcome.evaluator_id)),
                ("detail", json!(result.outcome.detail)),
            ]),
        );

        let mut dropped = None;
        if self.hook_a() {
            let meta = SampleMeta {
                snapshot_mismatch: result.stale,
                ..SampleMeta::clean(spec.driver.record.retry_budget)
            };
            if let HookAVerdict::Drop(reason) = hook_a_filter(&meta) {
                dropped = Some(reason);
            }
        }
        match dropped {
            Some(reason) => self.close(index, EpisodeStatus::Dropped, Some(reason), false, None),
            None => {
                let status = if result.outcome.is_success() {
                    EpisodeStatus::Success
                } else {
                    EpisodeStatus::Failure
                };
                self.close(index, status, None, false, None);
            }
        }

        if let Some(c) = self.controller.as_mut() {
            if c.variant == ControllerVariant::HookBOnly {
                let sample = TelemetrySample {
                    wall_clock_ms: t,
                    verifier_queue_depth: self.queue.depth_at(t) as u32,
                    verifier_queue_wait_ms: result.queue_wait_ms,
                };
                c.window.push(sample).expect("verdicts arrive in time order");
                let next = hook_b_adjust(&c.window, &c.hook_b, self.target);
                if next != self.target {
                    self.target = next;
                    self.concurrency_trace.push((t, next));
                }
            }
        }
    }

    fn release(&mut self, index: usize, t: f64) {
        let (actor, requeue, slot, attempt) = {
            let f = &self.flights[index];
            (f.actor, f.requeue, f.slot, f.attempt)
        };
        if requeue && attempt + 1 < self.spec.max_attempts {
            self.work.push_back((slot, attempt + 1));
        }
        self.active -= 1;
        self.idle.insert(actor);
        self.fill(t);
    }
}
