//! Simulated workload families on a deterministic clock.
//!
//! Micro tasks terminate inside the environment. Web and code tasks finish
//! their interaction phase and then wait on a verifier (the web evaluator or
//! the code build/test verifier), which is served by a FIFO multi-server
//! [`VerifierQueue`].

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::drivers::{Action, ActionEffect};
use crate::manifest::{Family, TaskManifest};
use crate::schema::TimingFields;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("stepped_after_terminal: {0}")]
    SteppedAfterTerminal(String),
    #[error("unsupported_family: {0}")]
    UnsupportedFamily(String),
    #[error("unknown_ticket: {0}")]
    UnknownTicket(u64),
    #[error("invalid_setting: {0}")]
    InvalidSetting(String),
    #[error("invalid_demand: {0}")]
    InvalidDemand(f64),
    #[error("invalid_goal: {0}")]
    InvalidGoal(u64),
}

impl EnvError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::SteppedAfterTerminal(_) => "stepped_after_terminal",
            EnvError::UnsupportedFamily(_) => "unsupported_family",
            EnvError::UnknownTicket(_) => "unknown_ticket",
            EnvError::InvalidSetting(_) => "invalid_setting",
            EnvError::InvalidDemand(_) => "invalid_demand",
            EnvError::InvalidGoal(_) => "invalid_goal",
        }
    }
}

/// Parse a family label from an external source.
pub fn parse_family(label: &str) -> Result<Family, EnvError> {
    Family::ALL
        .into_iter()
        .find(|f| f.as_str() == label)
        .ok_or_else(|| EnvError::UnsupportedFamily(label.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingLabel {
    Clean,
    MediumLiveStressed,
}

impl SettingLabel {
    pub const ALL: [SettingLabel; 2] = [SettingLabel::Clean, SettingLabel::MediumLiveStressed];

    pub fn as_str(self) -> &'static str {
        match self {
            SettingLabel::Clean => "clean",
            SettingLabel::MediumLiveStressed => "medium_live_stressed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }

    /// Short name used in study tables.
    pub fn short(self) -> &'static str {
        match self {
            SettingLabel::Clean => "clean",
            SettingLabel::MediumLiveStressed => "medium",
        }
    }
}

impl fmt::Display for SettingLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingSetting {
    pub label: SettingLabel,
    pub env_latency_multiplier: f64,
    /// Applied to draws in the top decile.
    pub tail_inflation: f64,
    pub verifier_arrival_rate_boost: f64,
    pub fault_injection_prob: f64,
    /// A verdict whose queue wait exceeds this is judged against a stale
    /// snapshot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staleness_deadline_ms: Option<f64>,
}

impl OperatingSetting {
    pub fn clean() -> Self {
        OperatingSetting {
            label: SettingLabel::Clean,
            env_latency_multiplier: 1.0,
            tail_inflation: 1.0,
            verifier_arrival_rate_boost: 1.0,
            fault_injection_prob: 0.0,
            staleness_deadline_ms: None,
        }
    }

    /// Synthetic stress calibration, not a measured operating point.
    pub fn medium_live_stressed() -> Self {
        OperatingSetting {
            label: SettingLabel::MediumLiveStressed,
            env_latency_multiplier: 3.0,
            tail_inflation: 4.0,
            verifier_arrival_rate_boost: 2.0,
            fault_injection_prob: 0.02,
            staleness_deadline_ms: Some(1500.0),
        }
    }

    pub fn for_label(label: SettingLabel) -> Self {
        match label {
            SettingLabel::Clean => Self::clean(),
            SettingLabel::MediumLiveStressed => Self::medium_live_stressed(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidSetting(format!("{}: {m}", self.label)));
        for (name, v) in [
            ("env_latency_multiplier", self.env_latency_multiplier),
            ("tail_inflation", self.tail_inflation),
            ("verifier_arrival_rate_boost", self.verifier_arrival_rate_boost),
        ] {
            if !(v.is_finite() && v >= 1.0) {
                return Err(EnvError::InvalidSetting(format!("{}: {name} < 1", self.label)));
            }
        }
        if !(0.0..=1.0).contains(&self.fault_injection_prob) {
            return bad("fault_injection_prob outside [0,1]");
        }
        if let Some(d) = self.staleness_deadline_ms {
            if !(d.is_finite() && d >= 0.0) {
                return bad("staleness_deadline_ms");
            }
        }
        if self.label == SettingLabel::Clean
            && (self.env_latency_multiplier != 1.0
                || self.tail_inflation != 1.0
                || self.verifier_arrival_rate_boost != 1.0
                || self.fault_injection_prob != 0.0
                || self.staleness_deadline_ms.is_some())
        {
            return bad("clean requires unit factors and no faults");
        }
        Ok(())
    }

    pub fn is_stale(&self, queue_wait_ms: f64) -> bool {
        self.staleness_deadline_ms.is_some_and(|d| queue_wait_ms > d)
    }

    /// Scale a base draw: multiplier always, tail inflation when `u` falls in
    /// the top decile.
    pub fn perturb(&self, base_ms: f64, u: f64) -> f64 {
        let tail = if u >= 0.9 { self.tail_inflation } else { 1.0 };
        base_ms * self.env_latency_multiplier * tail
    }
}

/// Per-family base latencies in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyTiming {
    pub step_ms: f64,
    pub step_cv: f64,
    pub verifier_min_ms: f64,
    pub verifier_max_ms: f64,
    pub default_goal: u32,
}

impl FamilyTiming {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Micro => FamilyTiming {
                step_ms: 15.0,
                step_cv: 0.3,
                verifier_min_ms: 0.0,
                verifier_max_ms: 0.0,
                default_goal: 3,
            },
            Family::Web => FamilyTiming {
                step_ms: 75.0,
                step_cv: 0.3,
                verifier_min_ms: 60.0,
                verifier_max_ms: 120.0,
                default_goal: 5,
            },
            Family::Code => FamilyTiming {
                step_ms: 200.0,
                step_cv: 0.3,
                verifier_min_ms: 300.0,
                verifier_max_ms: 500.0,
                default_goal: 1,
            },
        }
    }

    /// Unit-mean log-normal jitter factor.
    fn jitter(&self) -> Option<LogNormal<f64>> {
        if self.step_cv == 0.0 {
            return None;
        }
        let sigma2 = (1.0 + self.step_cv * self.step_cv).ln();
        LogNormal::new(-sigma2 / 2.0, sigma2.sqrt()).ok()
    }
}

/// Whether a family's terminal outcome comes from a queued verifier.
pub fn uses_verifier(family: Family) -> bool {
    matches!(family, Family::Web | Family::Code)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalStatus {
    Success,
    Failure,
    Error,
}

impl TerminalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalStatus::Success => "success",
            TerminalStatus::Failure => "failure",
            TerminalStatus::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [TerminalStatus::Success, TerminalStatus::Failure, TerminalStatus::Error]
            .into_iter()
            .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalOutcome {
    pub status: TerminalStatus,
    pub evaluator_id: String,
    #[serde(default)]
    pub detail: String,
}

impl TerminalOutcome {
    pub fn new(status: TerminalStatus, evaluator_id: &str, detail: &str) -> Self {
        TerminalOutcome {
            status,
            evaluator_id: evaluator_id.to_string(),
            detail: detail.to_string(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == TerminalStatus::Success
    }
}

/// What the verifier is asked to judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "quality", rename_all = "snake_case")]
pub enum PatchQuality {
    Gold,
    Noop,
    Generated { p: f64 },
}

impl PatchQuality {
    pub fn label(&self) -> &'static str {
        match self {
            PatchQuality::Gold => "gold",
            PatchQuality::Noop => "noop",
            PatchQuality::Generated { .. } => "generated",
        }
    }
}

pub const DETAIL_BUDGET_EXHAUSTED: &str = "budget_exhausted";
pub const DETAIL_GOAL_NOT_REACHED: &str = "goal_not_reached";
pub const DETAIL_TESTS_FAILED: &str = "tests_failed";
pub const DETAIL_NO_PATCH: &str = "no_patch";
pub const DETAIL_STALE_SNAPSHOT: &str = "stale_snapshot";

/// Verifier verdict for a quality and its recorded uniform draw. Pure, so it
/// can be re-run from frozen material.
pub fn verifier_decision(family: Family, quality: PatchQuality, draw: f64) -> (TerminalStatus, &'static str) {
    let fail = if family == Family::Code {
        match quality {
            PatchQuality::Noop => DETAIL_NO_PATCH,
            _ => DETAIL_TESTS_FAILED,
        }
    } else {
        DETAIL_GOAL_NOT_REACHED
    };
    let pass = match quality {
        PatchQuality::Gold => true,
        PatchQuality::Noop => false,
        PatchQuality::Generated { p } => draw < p,
    };
    if pass {
        (TerminalStatus::Success, "")
    } else {
        (TerminalStatus::Failure, fail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub family: Family,
    pub task_id: String,
    pub step_count: u64,
    pub solved_progress: u32,
    pub goal: u32,
    pub terminal: Option<TerminalOutcome>,
    pub sim_clock_ms: f64,
    pub budget: u32,
    pub retry_budget: u32,
    /// Set once an unparseable action corrupts the session.
    pub stalled: bool,
    /// Interaction finished; the verdict is pending with the verifier.
    pub awaiting_verdict: bool,
    pub patch: Option<PatchQuality>,
    pub evaluator_id: String,
    generated_pass_prob: f64,
    timing: FamilyTiming,
    seed: u64,
}

pub const DEFAULT_BUDGET: u32 = 10;
pub const DEFAULT_GENERATED_PASS_PROB: f64 = 0.3;

pub fn init_env(manifest: &TaskManifest, setting: &OperatingSetting, seed: u64) -> Result<EnvState, EnvError> {
    setting.validate()?;
    let timing = FamilyTiming::for_family(manifest.family);
    let goal = match manifest.family_params.get("goal") {
        None => timing.default_goal,
        Some(v) => match v.as_u64() {
            Some(g) if g >= 1 && g <= u32::MAX as u64 => g as u32,
            Some(g) => return Err(EnvError::InvalidGoal(g)),
            None => return Err(EnvError::InvalidGoal(0)),
        },
    };
    Ok(EnvState {
        family: manifest.family,
        task_id: manifest.task_id.clone(),
        step_count: 0,
        solved_progress: 0,
        goal,
        terminal: None,
        sim_clock_ms: 0.0,
        budget: DEFAULT_BUDGET,
        retry_budget: 2,
        stalled: false,
        awaiting_verdict: false,
        patch: None,
        evaluator_id: manifest.verifier_id.clone(),
        generated_pass_prob: manifest
            .param_f64("generated_pass_prob")
            .unwrap_or(DEFAULT_GENERATED_PASS_PROB),
        timing,
        seed,
    })
}

impl EnvState {
    pub fn with_budget(mut self, budget: u32, retry_budget: u32) -> Self {
        self.budget = budget.max(1);
        self.retry_budget = retry_budget;
        self
    }

    pub fn at_clock(mut self, now_ms: f64) -> Self {
        self.sim_clock_ms = now_ms;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn timing(&self) -> &FamilyTiming {
        &self.timing
    }

    pub fn accepts_steps(&self) -> bool {
        self.terminal.is_none() && !self.awaiting_verdict
    }

    /// Quality submitted to the verifier once interaction ends.
    pub fn submission(&self) -> PatchQuality {
        match self.family {
            Family::Code => self.patch.unwrap_or(PatchQuality::Noop),
            _ if self.solved_progress >= self.goal => PatchQuality::Gold,
            _ => PatchQuality::Noop,
        }
    }

    /// Base verifier service demand for one submission.
    pub fn draw_verifier_demand(&self, setting: &OperatingSetting, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let base = self.timing.verifier_min_ms + (self.timing.verifier_max_ms - self.timing.verifier_min_ms) * u;
        let tail_u: f64 = rng.random();
        setting.perturb(base.max(1.0), tail_u)
    }

    pub fn apply_verdict(&mut self, outcome: TerminalOutcome, at_ms: f64) {
        self.sim_clock_ms = self.sim_clock_ms.max(at_ms);
        self.awaiting_verdict = false;
        self.terminal = Some(outcome);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Latency of each attempt, including the failed ones.
    pub attempt_latencies_ms: Vec<f64>,
    pub faults: u32,
    /// Faults exceeded the retry budget; the step did not complete.
    pub retry_exhausted: bool,
    pub progressed: bool,
    pub timing: TimingFields,
}

impl StepOutcome {
    pub fn latency_ms(&self) -> f64 {
        self.attempt_latencies_ms.iter().sum()
    }
}

/// Execute one action.
///
/// Each attempt draws, in order: jitter, tail uniform, fault uniform. A
/// completed step then draws one uniform for progress.
pub fn env_step(
    state: &EnvState,
    action: &Action,
    setting: &OperatingSetting,
    rng: &mut ChaCha8Rng,
) -> Result<(EnvState, StepOutcome), EnvError> {
    if !state.accepts_steps() {
        return Err(EnvError::SteppedAfterTerminal(state.task_id.clone()));
    }
    let mut next = state.clone();
    let jitter = state.timing.jitter();
    let mut attempts = Vec::new();
    let mut faults = 0u32;
    let mut retry_exhausted = false;
    loop {
        let j = jitter.map_or(1.0, |d| d.sample(rng));
        let tail_u: f64 = rng.random();
        let fault_u: f64 = rng.random();
        attempts.push(setting.perturb(state.timing.step_ms * j, tail_u));
        if fault_u < setting.fault_injection_prob {
            faults += 1;
            if faults > state.retry_budget {
                retry_exhausted = true;
                break;
            }
            continue;
        }
        break;
    }
    let latency: f64 = attempts.iter().sum();
    next.sim_clock_ms += latency;
    next.step_count += 1;

    let mut progressed = false;
    if !retry_exhausted {
        let u: f64 = rng.random();
        progressed = !next.stalled
            && match action.effect {
                ActionEffect::Solve => true,
                ActionEffect::Noop | ActionEffect::Invalid => false,
                ActionEffect::Attempt { success_prob } => u < success_prob,
            };
        if action.effect == ActionEffect::Invalid {
            next.stalled = true;
        }
        if progressed {
            next.solved_progress = (next.solved_progress + 1).min(next.goal);
            if next.family == Family::Code && next.solved_progress == next.goal {
                next.patch = Some(match action.effect {
                    ActionEffect::Solve => PatchQuality::Gold,
                    _ => PatchQuality::Generated {
                        p: next.generated_pass_prob,
                    },
                });
            }
        }
        let done = next.solved_progress == next.goal;
        let exhausted = next.step_count >= next.budget as u64;
        if done || exhausted {
            if uses_verifier(next.family) {
                next.awaiting_verdict = true;
            } else if done {
                next.terminal = Some(TerminalOutcome::new(TerminalStatus::Success, &next.evaluator_id, ""));
            } else {
                next.terminal = Some(TerminalOutcome::new(
                    TerminalStatus::Failure,
                    &next.evaluator_id,
                    DETAIL_BUDGET_EXHAUSTED,
                ));
            }
        }
    }
    let timing = TimingFields {
        queue_wait_ms: 0.0,
        service_time_ms: latency,
        tool_latency_ms: (next.family == Family::Code).then_some(latency),
        ..Default::default()
    };
    Ok((
        next,
        StepOutcome {
            attempt_latencies_ms: attempts,
            faults,
            retry_exhausted,
            progressed,
            timing,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: u64,
    pub submit_ms: f64,
    pub demand_ms: f64,
    pub start_ms: f64,
    pub end_ms: f64,
    pub server: usize,
    /// Load injected by the operating setting rather than by an episode.
    pub shadow: bool,
}

impl Ticket {
    pub fn queue_wait_ms(&self) -> f64 {
        self.start_ms - self.submit_ms
    }
}

/// FIFO multi-server queue. Tickets must be submitted in non-decreasing time
/// order; each is assigned the earliest-free server on arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierQueue {
    busy_until: Vec<f64>,
    tickets: Vec<Ticket>,
}

impl VerifierQueue {
    pub fn new(servers: usize) -> Self {
        VerifierQueue {
            busy_until: vec![0.0; servers.max(1)],
            tickets: Vec::new(),
        }
    }

    pub fn servers(&self) -> usize {
        self.busy_until.len()
    }

    fn enqueue(&mut self, now_ms: f64, demand_ms: f64, shadow: bool) -> Result<u64, EnvError> {
        if !(demand_ms.is_finite() && demand_ms > 0.0) {
            return Err(EnvError::InvalidDemand(demand_ms));
        }
        let last_submit = self.tickets.last().map_or(0.0, |t| t.submit_ms);
        let now = now_ms.max(last_submit);
        let (server, free) = self
            .busy_until
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("at least one server");
        let start = now.max(free);
        let end = start + demand_ms;
        self.busy_until[server] = end;
        let id = self.tickets.len() as u64;
        self.tickets.push(Ticket {
            id,
            submit_ms: now,
            demand_ms,
            start_ms: start,
            end_ms: end,
            server,
            shadow,
        });
        Ok(id)
    }

    /// Waiting (not yet in service) tickets at `t`.
    pub fn depth_at(&self, t: f64) -> usize {
        self.tickets
            .iter()
            .filter(|k| k.submit_ms <= t && k.start_ms > t)
            .count()
    }

    pub fn served_by(&self, t: f64) -> usize {
        self.tickets.iter().filter(|k| k.end_ms <= t).count()
    }

    pub fn pending_at(&self, t: f64) -> usize {
        self.tickets.iter().filter(|k| k.submit_ms <= t && k.end_ms > t).count()
    }

    pub fn submitted_by(&self, t: f64) -> usize {
        self.tickets.iter().filter(|k| k.submit_ms <= t).count()
    }

    pub fn ticket(&self, id: u64) -> Result<&Ticket, EnvError> {
        self.tickets.get(id as usize).ok_or(EnvError::UnknownTicket(id))
    }

    pub fn tickets(&self) -> &[Ticket] {
        &self.tickets
    }
}

pub fn submit_patch(queue: &mut VerifierQueue, now_ms: f64, demand_ms: f64) -> Result<u64, EnvError> {
    queue.enqueue(now_ms, demand_ms, false)
}

/// Submit and add the setting's extra arrivals as shadow tickets of the same
/// demand.
pub fn submit_with_load(
    queue: &mut VerifierQueue,
    now_ms: f64,
    demand_ms: f64,
    setting: &OperatingSetting,
) -> Result<u64, EnvError> {
    let id = queue.enqueue(now_ms, demand_ms, false)?;
    let extra = (setting.verifier_arrival_rate_boost - 1.0).max(0.0).round() as u64;
    for _ in 0..extra {
        queue.enqueue(now_ms, demand_ms, true)?;
    }
    Ok(id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierResult {
    pub outcome: TerminalOutcome,
    pub queue_wait_ms: f64,
    pub service_ms: f64,
    pub verifier_latency_ms: f64,
    pub completed_at_ms: f64,
    pub draw: f64,
    pub stale: bool,
}

/// Verdict for a served ticket. Draws one uniform regardless of quality.
pub fn verifier_outcome(
    queue: &VerifierQueue,
    ticket_id: u64,
    family: Family,
    evaluator_id: &str,
    quality: PatchQuality,
    setting: &OperatingSetting,
    rng: &mut ChaCha8Rng,
) -> Result<VerifierResult, EnvError> {
    let t = queue.ticket(ticket_id)?;
    let draw: f64 = rng.random();
    let wait = t.queue_wait_ms();
    let stale = setting.is_stale(wait);
    let (status, detail) = if stale {
        (TerminalStatus::Failure, DETAIL_STALE_SNAPSHOT)
    } else {
        verifier_decision(family, quality, draw)
    };
    Ok(VerifierResult {
        outcome: TerminalOutcome::new(status, evaluator_id, detail),
        queue_wait_ms: wait,
        service_ms: t.demand_ms,
        verifier_latency_ms: t.end_ms - t.submit_ms,
        completed_at_ms: t.end_ms,
        draw,
        stale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::Exp;

    fn micro() -> TaskManifest {
        TaskManifest::new(Family::Micro, "m1", "root")
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn fresh_micro_state() {
        let s = init_env(&micro(), &OperatingSetting::clean(), 1).unwrap();
        assert_eq!(s.goal, 3);
        assert_eq!(s.step_count, 0);
        assert_eq!(s, init_env(&micro(), &OperatingSetting::clean(), 1).unwrap());
    }

    #[test]
    fn goal_pass_through() {
        let m = micro().with_param("goal", 10);
        assert_eq!(init_env(&m, &OperatingSetting::clean(), 0).unwrap().goal, 10);
        let m = micro().with_param("goal", 0);
        assert_eq!(
            init_env(&m, &OperatingSetting::clean(), 0).unwrap_err().code(),
            "invalid_goal"
        );
    }

    #[test]
    fn unknown_family_label() {
        assert_eq!(parse_family("desktop").unwrap_err().code(), "unsupported_family");
        assert_eq!(parse_family("code").unwrap(), Family::Code);
    }

    #[test]
    fn oracle_solves_micro_in_goal_steps() {
        let setting = OperatingSetting::clean();
        let mut s = init_env(&micro(), &setting, 0).unwrap().with_budget(5, 2);
        let mut r = rng(0);
        let solve = Action::new("oracle", ActionEffect::Solve);
        let mut steps = 0;
        while s.accepts_steps() {
            s = env_step(&s, &solve, &setting, &mut r).unwrap().0;
            steps += 1;
        }
        assert_eq!(steps, 3);
        assert!(s.terminal.as_ref().unwrap().is_success());
        let err = env_step(&s, &solve, &setting, &mut r).unwrap_err();
        assert_eq!(err.code(), "stepped_after_terminal");
    }

    #[test]
    fn noop_exhausts_budget() {
        let setting = OperatingSetting::clean();
        let mut s = init_env(&micro(), &setting, 0).unwrap().with_budget(5, 2);
        let mut r = rng(0);
        while s.accepts_steps() {
            s = env_step(&s, &Action::noop(), &setting, &mut r).unwrap().0;
        }
        assert_eq!(s.step_count, 5);
        let t = s.terminal.unwrap();
        assert_eq!(t.status, TerminalStatus::Failure);
        assert_eq!(t.detail, DETAIL_BUDGET_EXHAUSTED);
    }

    #[test]
    fn invalid_action_stalls() {
        let setting = OperatingSetting::clean();
        let s = init_env(&micro(), &setting, 0).unwrap().with_budget(5, 2);
        let mut r = rng(0);
        let (s, _) = env_step(&s, &Action::new("x", ActionEffect::Invalid), &setting, &mut r).unwrap();
        let (s, out) = env_step(&s, &Action::new("o", ActionEffect::Solve), &setting, &mut r).unwrap();
        assert!(!out.progressed);
        assert_eq!(s.solved_progress, 0);
    }

    #[test]
    fn code_awaits_verdict_with_patch() {
        let setting = OperatingSetting::clean();
        let m = TaskManifest::new(Family::Code, "c", "root");
        let s = init_env(&m, &setting, 0).unwrap();
        let (s, _) = env_step(&s, &Action::new("o", ActionEffect::Solve), &setting, &mut rng(0)).unwrap();
        assert!(s.awaiting_verdict);
        assert!(s.terminal.is_none());
        assert_eq!(s.submission(), PatchQuality::Gold);
        assert!(!s.accepts_steps());
    }

    #[test]
    fn clean_setting_invariant() {
        assert!(OperatingSetting::clean().validate().is_ok());
        assert!(OperatingSetting::medium_live_stressed().validate().is_ok());
        let mut bad = OperatingSetting::clean();
        bad.fault_injection_prob = 0.1;
        assert_eq!(bad.validate().unwrap_err().code(), "invalid_setting");
    }

    fn mean_step_latency(setting: &OperatingSetting, seed: u64, n: usize) -> f64 {
        let m = TaskManifest::new(Family::Web, "w", "root").with_param("goal", 1_000_000);
        let mut s = init_env(&m, setting, 0).unwrap().with_budget(u32::MAX, 1000);
        let mut r = rng(seed);
        let mut total = 0.0;
        for _ in 0..n {
            let (next, out) = env_step(&s, &Action::noop(), setting, &mut r).unwrap();
            total += out.attempt_latencies_ms[0];
            s = next;
        }
        total / n as f64
    }

    #[test]
    fn multiplier_ratio_oracle() {
        let pure = OperatingSetting {
            label: SettingLabel::MediumLiveStressed,
            env_latency_multiplier: 3.0,
            tail_inflation: 1.0,
            verifier_arrival_rate_boost: 1.0,
            fault_injection_prob: 0.0,
            staleness_deadline_ms: None,
        };
        let clean = mean_step_latency(&OperatingSetting::clean(), 1, 10_000);
        let stressed = mean_step_latency(&pure, 2, 10_000);
        let ratio = stressed / clean;
        assert!((ratio - 3.0).abs() / 3.0 < 0.05, "ratio {ratio}");

        // Independent tail draw: expected factor m * (0.9 + 0.1 * tail).
        let medium = OperatingSetting {
            fault_injection_prob: 0.0,
            ..OperatingSetting::medium_live_stressed()
        };
        let expected = 3.0 * (0.9 + 0.1 * 4.0);
        let ratio = mean_step_latency(&medium, 3, 10_000) / clean;
        assert!((ratio - expected).abs() / expected < 0.05, "ratio {ratio}");
    }

    #[test]
    fn fifo_arithmetic() {
        let mut q = VerifierQueue::new(1);
        let a = submit_patch(&mut q, 0.0, 10.0).unwrap();
        let b = submit_patch(&mut q, 0.0, 10.0).unwrap();
        assert_eq!(q.ticket(a).unwrap().queue_wait_ms(), 0.0);
        assert_eq!(q.ticket(b).unwrap().queue_wait_ms(), 10.0);
        assert_eq!(q.depth_at(5.0), 1);
        assert_eq!(q.ticket(9).unwrap_err().code(), "unknown_ticket");
        assert_eq!(submit_patch(&mut q, 1.0, 0.0).unwrap_err().code(), "invalid_demand");
    }

    #[test]
    fn conservation() {
        let mut q = VerifierQueue::new(2);
        let mut r = rng(4);
        let mut t = 0.0;
        for _ in 0..200 {
            t += r.random::<f64>() * 20.0;
            submit_patch(&mut q, t, 5.0 + r.random::<f64>() * 30.0).unwrap();
        }
        for probe in [0.0, 100.0, 555.5, 1500.0, 5000.0] {
            assert_eq!(q.submitted_by(probe), q.served_by(probe) + q.pending_at(probe));
        }
    }

    #[test]
    fn mm1_mean_wait_oracle() {
        // Poisson arrivals at 0.8 of capacity, exponential service, one server.
        let mu = 1.0 / 10.0;
        let lambda = 0.8 * mu;
        let expected = lambda / (mu * (mu - lambda));
        let mut q = VerifierQueue::new(1);
        let mut r = rng(11);
        let inter = Exp::new(lambda).unwrap();
        let service = Exp::new(mu).unwrap();
        let mut t = 0.0;
        let n = 200_000;
        for _ in 0..n {
            t += inter.sample(&mut r);
            submit_patch(&mut q, t, service.sample(&mut r)).unwrap();
        }
        let warm = n / 10;
        let waits: Vec<f64> = q.tickets()[warm..].iter().map(Ticket::queue_wait_ms).collect();
        let mean = waits.iter().sum::<f64>() / waits.len() as f64;
        assert!((mean - expected).abs() / expected < 0.15, "mean {mean} vs {expected}");
    }

    #[test]
    fn verdicts_by_quality() {
        let setting = OperatingSetting::clean();
        let mut q = VerifierQueue::new(1);
        let mut r = rng(5);
        for _ in 0..5 {
            let id = submit_patch(&mut q, 0.0, 100.0).unwrap();
            let gold = verifier_outcome(&q, id, Family::Code, "v", PatchQuality::Gold, &setting, &mut r).unwrap();
            assert!(gold.outcome.is_success());
            let noop = verifier_outcome(&q, id, Family::Code, "v", PatchQuality::Noop, &setting, &mut r).unwrap();
            assert_eq!(noop.outcome.status, TerminalStatus::Failure);
            assert_eq!(noop.outcome.detail, DETAIL_NO_PATCH);
        }
        for _ in 0..100 {
            let id = submit_patch(&mut q, 0.0, 1.0).unwrap();
            let g = PatchQuality::Generated { p: 0.0 };
            let out = verifier_outcome(&q, id, Family::Code, "v", g, &setting, &mut r).unwrap();
            assert_eq!(out.outcome.status, TerminalStatus::Failure);
        }
    }

    #[test]
    fn stale_verdicts_fail() {
        let setting = OperatingSetting {
            staleness_deadline_ms: Some(5.0),
            ..OperatingSetting::medium_live_stressed()
        };
        let mut q = VerifierQueue::new(1);
        submit_patch(&mut q, 0.0, 10.0).unwrap();
        let id = submit_patch(&mut q, 0.0, 10.0).unwrap();
        let out = verifier_outcome(&q, id, Family::Web, "e", PatchQuality::Gold, &setting, &mut rng(0)).unwrap();
        assert!(out.stale);
        assert_eq!(out.outcome.detail, DETAIL_STALE_SNAPSHOT);
    }

    #[test]
    fn boost_adds_shadow_load() {
        let setting = OperatingSetting::medium_live_stressed();
        let mut q = VerifierQueue::new(1);
        submit_with_load(&mut q, 0.0, 10.0, &setting).unwrap();
        let id = submit_with_load(&mut q, 0.0, 10.0, &setting).unwrap();
        assert_eq!(q.tickets().len(), 4);
        assert_eq!(q.ticket(id).unwrap().queue_wait_ms(), 20.0);
    }

    #[test]
    fn trajectory_bit_identical() {
        let setting = OperatingSetting::medium_live_stressed();
        let run = || {
            let m = TaskManifest::new(Family::Web, "w", "root");
            let mut s = init_env(&m, &setting, 3).unwrap().with_budget(8, 2);
            let mut r = rng(3);
            let mut outs = Vec::new();
            let a = Action::new("a", ActionEffect::Attempt { success_prob: 0.6 });
            while s.accepts_steps() {
                let (n, o) = env_step(&s, &a, &setting, &mut r).unwrap();
                assert!(n.sim_clock_ms >= s.sim_clock_ms);
                outs.push(o);
                s = n;
            }
            (s, outs)
        };
        assert_eq!(run(), run());
    }
}
