use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// 128-bit trace identifier, serialized as 32 lowercase hex characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceId(pub u128);

/// 64-bit span identifier, serialized as 16 lowercase hex characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpanId(pub u64);

impl fmt::Display for TraceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Display for SpanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

macro_rules! hex_serde {
    ($ty:ident, $inner:ty, $len:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                if s.len() != $len {
                    return Err(de::Error::custom(format!(
                        "expected {} hex characters, got {}",
                        $len,
                        s.len()
                    )));
                }
                <$inner>::from_str_radix(&s, 16)
                    .map($ty)
                    .map_err(de::Error::custom)
            }
        }
    };
}

hex_serde!(TraceId, u128, 32);
hex_serde!(SpanId, u64, 16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceContext {
    pub trace_id: TraceId,
    pub span_id: SpanId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_span_id: Option<SpanId>,
}

impl TraceContext {
    pub fn with_parent(mut self, parent: SpanId) -> Self {
        self.parent_span_id = Some(parent);
        self
    }
}

/// murmur3's 64-bit finalizer; a bijection on u64.
fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

fn seed_material(run_seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"gatebench.trace");
    h.update(run_seed.to_le_bytes());
    h.finalize().into()
}

/// Deterministic trace context for the `counter`-th span of a run.
///
/// The trace id depends only on `run_seed`. Span ids are a bijective mix of
/// `counter` keyed by the seed, so distinct counters never collide.
pub fn new_trace_context(run_seed: u64, counter: u64) -> TraceContext {
    let m = seed_material(run_seed);
    let trace = u128::from_le_bytes(m[..16].try_into().expect("16 bytes"));
    let key = u64::from_le_bytes(m[16..24].try_into().expect("8 bytes"));
    TraceContext {
        trace_id: TraceId(trace),
        span_id: SpanId(fmix64(counter ^ key)),
        parent_span_id: None,
    }
}
