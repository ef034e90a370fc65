//! Canonical serialization and content hashing.
//!
//! Documents are serialized as UTF-8 with keys sorted bytewise, integers in
//! decimal, and floats in shortest round-trip form. The digest of that byte
//! string is the content address used for manifests, hashes in action
//! records, and run identities.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::SchemaError;

/// Name recorded in [`Digest::algorithm`] for every digest this crate emits.
pub const HASH_ALGORITHM: &str = "sha256";
const HEX_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digest {
    pub algorithm: String,
    pub hex: String,
}

impl Digest {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let out = Sha256::digest(bytes);
        Digest {
            algorithm: HASH_ALGORITHM.to_string(),
            hex: hex::encode(out),
        }
    }

    /// True when the algorithm label is known and the hex string has the
    /// right length and alphabet.
    pub fn is_well_formed(&self) -> bool {
        self.algorithm == HASH_ALGORITHM
            && self.hex.len() == HEX_LEN
            && self
                .hex
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    }

    /// First `n` hex characters, used for short identifiers.
    pub fn short(&self, n: usize) -> &str {
        &self.hex[..n.min(self.hex.len())]
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.algorithm, self.hex)
    }
}

/// An ordered key/value document as handed to [`canonical_hash`].
///
/// `Doc` keeps insertion order; canonicalization sorts it.
#[derive(Debug, Clone, PartialEq)]
pub enum CanonicalValue {
    Null,
    Bool(bool),
    Int(i64),
    UInt(u64),
    Float(f64),
    Str(String),
    List(Vec<CanonicalValue>),
    Doc(Vec<(String, CanonicalValue)>),
}

impl CanonicalValue {
    pub fn doc<K: Into<String>>(pairs: impl IntoIterator<Item = (K, CanonicalValue)>) -> Self {
        CanonicalValue::Doc(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

impl From<&str> for CanonicalValue {
    fn from(s: &str) -> Self {
        CanonicalValue::Str(s.to_string())
    }
}
impl From<String> for CanonicalValue {
    fn from(s: String) -> Self {
        CanonicalValue::Str(s)
    }
}
impl From<i64> for CanonicalValue {
    fn from(v: i64) -> Self {
        CanonicalValue::Int(v)
    }
}
impl From<u64> for CanonicalValue {
    fn from(v: u64) -> Self {
        CanonicalValue::UInt(v)
    }
}
impl From<f64> for CanonicalValue {
    fn from(v: f64) -> Self {
        CanonicalValue::Float(v)
    }
}
impl From<bool> for CanonicalValue {
    fn from(v: bool) -> Self {
        CanonicalValue::Bool(v)
    }
}

impl From<&serde_json::Value> for CanonicalValue {
    fn from(v: &serde_json::Value) -> Self {
        use serde_json::Value;
        match v {
            Value::Null => CanonicalValue::Null,
            Value::Bool(b) => CanonicalValue::Bool(*b),
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    CanonicalValue::Int(i)
                } else if let Some(u) = n.as_u64() {
                    CanonicalValue::UInt(u)
                } else {
                    CanonicalValue::Float(n.as_f64().unwrap_or(f64::NAN))
                }
            }
            Value::String(s) => CanonicalValue::Str(s.clone()),
            Value::Array(items) => CanonicalValue::List(items.iter().map(Into::into).collect()),
            Value::Object(map) => CanonicalValue::Doc(map.iter().map(|(k, v)| (k.clone(), v.into())).collect()),
        }
    }
}

/// Canonical byte serialization of a document.
pub fn canonical_bytes(value: &CanonicalValue) -> Result<Vec<u8>, SchemaError> {
    let mut out = String::new();
    write_canonical(value, &mut out)?;
    Ok(out.into_bytes())
}

fn write_canonical(value: &CanonicalValue, out: &mut String) -> Result<(), SchemaError> {
    match value {
        CanonicalValue::Null => out.push_str("null"),
        CanonicalValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        CanonicalValue::Int(i) => write!(out, "{i}").expect("write to string"),
        CanonicalValue::UInt(u) => write!(out, "{u}").expect("write to string"),
        CanonicalValue::Float(f) => {
            if !f.is_finite() {
                return Err(SchemaError::NonCanonicalValue(format!("non-finite number {f}")));
            }
            // -0.0 and 0.0 compare equal and must hash equal.
            let f = if *f == 0.0 { 0.0 } else { *f };
            write!(out, "{f:?}").expect("write to string");
        }
        CanonicalValue::Str(s) => push_json_string(s, out),
        CanonicalValue::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out)?;
            }
            out.push(']');
        }
        CanonicalValue::Doc(pairs) => {
            let mut sorted: Vec<&(String, CanonicalValue)> = pairs.iter().collect();
            sorted.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            for w in sorted.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(SchemaError::NonCanonicalValue(format!("duplicate key {:?}", w[0].0)));
                }
            }
            out.push('{');
            for (i, (k, v)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                push_json_string(k, out);
                out.push(':');
                write_canonical(v, out)?;
            }
            out.push('}');
        }
    }
    Ok(())
}

fn push_json_string(s: &str, out: &mut String) {
    out.push_str(&serde_json::to_string(s).expect("strings always serialize"));
}

/// Content hash of a document under the canonical serialization.
pub fn canonical_hash(content: &CanonicalValue) -> Result<Digest, SchemaError> {
    Ok(Digest::from_bytes(&canonical_bytes(content)?))
}

/// Hash any serializable value through its JSON form.
///
/// Non-finite floats become `null` during JSON conversion, so callers hashing
/// typed records validate finiteness on the record itself.
pub fn hash_serialize<T: Serialize + ?Sized>(value: &T) -> Result<Digest, SchemaError> {
    let json = serde_json::to_value(value).map_err(|e| SchemaError::NonCanonicalValue(e.to_string()))?;
    canonical_hash(&CanonicalValue::from(&json))
}
