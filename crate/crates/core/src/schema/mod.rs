//! Typed event vocabulary, trace contexts, canonical hashing, and validation.

mod canonical;
mod event;
mod trace;
mod validate;

pub use canonical::{canonical_bytes, canonical_hash, hash_serialize, CanonicalValue, Digest, HASH_ALGORITHM};
pub use event::*;
pub use trace::{new_trace_context, SpanId, TraceContext, TraceId};
pub use validate::{validate_log, RunValidator, ValidationReport, Violation, ViolationCode};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchemaError {
    #[error("non_canonical_value: {0}")]
    NonCanonicalValue(String),
}

impl SchemaError {
    pub fn code(&self) -> &'static str {
        match self {
            SchemaError::NonCanonicalValue(_) => "non_canonical_value",
        }
    }
}

/// `major.minor.patch` with numeric components.
pub fn is_semver(s: &str) -> bool {
    let parts: Vec<&str> = s.split('.').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}
