//! The two single-hook controller variants.
//!
//! Hook A screens samples for validity and staleness. Hook B adjusts actor
//! concurrency from verifier queue pressure over a rolling window.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DriverError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerVariant {
    HookAOnly,
    HookBOnly,
}

impl ControllerVariant {
    pub const ALL: [ControllerVariant; 2] = [ControllerVariant::HookAOnly, ControllerVariant::HookBOnly];

    pub fn label(self) -> &'static str {
        match self {
            ControllerVariant::HookAOnly => "hook_a_only",
            ControllerVariant::HookBOnly => "hook_b_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.label() == s)
    }
}

impl fmt::Display for ControllerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SampleMeta {
    pub has_terminal_outcome: bool,
    pub invalid_sample_marker: bool,
    pub version_fields_present: bool,
    pub version_mismatch: bool,
    pub snapshot_mismatch: bool,
    pub retry_count: u32,
    pub retry_budget: u32,
}

impl SampleMeta {
    pub fn clean(retry_budget: u32) -> Self {
        SampleMeta {
            has_terminal_outcome: true,
            version_fields_present: true,
            retry_budget,
            ..Default::default()
        }
    }
}

/// Drop reasons, listed in the order they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingTerminal,
    InvalidSample,
    VersionSnapshotMismatch,
    RetryBudgetExceeded,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::MissingTerminal => "missing_terminal",
            DropReason::InvalidSample => "invalid_sample",
            DropReason::VersionSnapshotMismatch => "version_snapshot_mismatch",
            DropReason::RetryBudgetExceeded => "retry_budget_exceeded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookAVerdict {
    Keep,
    Drop(DropReason),
}

/// First failing check wins: missing terminal, invalid marker, version or
/// snapshot mismatch (only when version fields exist), retry budget.
pub fn hook_a_filter(sample: &SampleMeta) -> HookAVerdict {
    if !sample.has_terminal_outcome {
        return HookAVerdict::Drop(DropReason::MissingTerminal);
    }
    if sample.invalid_sample_marker {
        return HookAVerdict::Drop(DropReason::InvalidSample);
    }
    if sample.version_fields_present && (sample.version_mismatch || sample.snapshot_mismatch) {
        return HookAVerdict::Drop(DropReason::VersionSnapshotMismatch);
    }
    if sample.retry_count > sample.retry_budget {
        return HookAVerdict::Drop(DropReason::RetryBudgetExceeded);
    }
    HookAVerdict::Keep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub wall_clock_ms: f64,
    pub verifier_queue_depth: u32,
    pub verifier_queue_wait_ms: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WindowError {
    #[error("timestamp {got} precedes window tail {last}")]
    NonMonotone { last: f64, got: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryWindow {
    window: VecDeque<TelemetrySample>,
    capacity: usize,
}

impl TelemetryWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        TelemetryWindow {
            window: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Append a sample, evicting the oldest when full.
    pub fn push(&mut self, sample: TelemetrySample) -> Result<(), WindowError> {
        if let Some(last) = self.window.back() {
            if sample.wall_clock_ms < last.wall_clock_ms {
                return Err(WindowError::NonMonotone {
                    last: last.wall_clock_ms,
                    got: sample.wall_clock_ms,
                });
            }
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mean_wait_ms(&self) -> Option<f64> {
        if self.window.is_empty() {
            return None;
        }
        Some(self.window.iter().map(|s| s.verifier_queue_wait_ms).sum::<f64>() / self.window.len() as f64)
    }

    pub fn samples(&self) -> impl Iterator<Item = &TelemetrySample> {
        self.window.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HookBConfig {
    pub pressure_threshold_ms: f64,
    pub min_conc: u32,
    pub max_conc: u32,
    pub step: u32,
}

impl Default for HookBConfig {
    fn default() -> Self {
        HookBConfig {
            pressure_threshold_ms: 50.0,
            min_conc: 1,
            max_conc: 8,
            step: 1,
        }
    }
}

impl HookBConfig {
    pub fn validate(&self) -> Result<(), DriverError> {
        if self.min_conc == 0 || self.min_conc > self.max_conc {
            return Err(DriverError::InvalidProfile("need 1 <= min_conc <= max_conc".into()));
        }
        if !(self.pressure_threshold_ms.is_finite() && self.pressure_threshold_ms >= 0.0) {
            return Err(DriverError::InvalidProfile("pressure_threshold_ms".into()));
        }
        Ok(())
    }
}

/// Shrink under pressure, grow once the window is below half the threshold.
pub fn hook_b_adjust(window: &TelemetryWindow, cfg: &HookBConfig, current_conc: u32) -> u32 {
    let current = current_conc.clamp(cfg.min_conc, cfg.max_conc);
    let Some(mean) = window.mean_wait_ms() else {
        return current;
    };
    if mean > cfg.pressure_threshold_ms {
        current.saturating_sub(cfg.step).max(cfg.min_conc)
    } else if mean < cfg.pressure_threshold_ms / 2.0 {
        current.saturating_add(cfg.step).min(cfg.max_conc)
    } else {
        current
    }
}
