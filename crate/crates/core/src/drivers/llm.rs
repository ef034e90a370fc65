use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{Action, ActionEffect, DriverError, DriverRecord, Observation};
use crate::schema::{canonical_hash, ActionRecord, CanonicalValue, Digest, ParseStatus};

/// Stand-in for a served model: latency, token, and output-quality knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLlmProfile {
    pub mean_model_latency_ms: f64,
    pub latency_cv: f64,
    pub invalid_action_prob: f64,
    pub mean_prompt_tokens: u64,
    pub mean_completion_tokens: u64,
    pub success_bias: f64,
}

impl Default for SyntheticLlmProfile {
    fn default() -> Self {
        SyntheticLlmProfile {
            mean_model_latency_ms: 400.0,
            latency_cv: 0.3,
            invalid_action_prob: 0.05,
            mean_prompt_tokens: 1200,
            mean_completion_tokens: 60,
            success_bias: 0.8,
        }
    }
}

impl SyntheticLlmProfile {
    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |m: &str| Err(DriverError::InvalidProfile(m.to_string()));
        if !(self.mean_model_latency_ms.is_finite() && self.mean_model_latency_ms > 0.0) {
            return bad("mean_model_latency_ms must be > 0");
        }
        if !(self.latency_cv.is_finite() && self.latency_cv >= 0.0) {
            return bad("latency_cv must be >= 0");
        }
        for (name, p) in [
            ("invalid_action_prob", self.invalid_action_prob),
            ("success_bias", self.success_bias),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DriverError::InvalidProfile(format!("{name} outside [0,1]")));
            }
        }
        Ok(())
    }

    /// Log-normal parameters matching the configured mean and CV.
    fn latency_distribution(&self) -> Option<LogNormal<f64>> {
        if self.latency_cv == 0.0 {
            return None;
        }
        let sigma2 = (1.0 + self.latency_cv * self.latency_cv).ln();
        let mu = self.mean_model_latency_ms.ln() - sigma2 / 2.0;
        LogNormal::new(mu, sigma2.sqrt()).ok()
    }

    pub fn draw_latency(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.latency_distribution() {
            Some(d) => d.sample(rng),
            None => self.mean_model_latency_ms,
        }
    }
}

fn tokens_around(mean: u64, rng: &mut ChaCha8Rng) -> u64 {
    let scale: f64 = rng.random_range(0.8..1.2);
    (mean as f64 * scale).round() as u64
}

fn hash_doc(pairs: Vec<(&str, CanonicalValue)>) -> Digest {
    canonical_hash(&CanonicalValue::doc(pairs)).expect("canonical")
}

/// One call to the synthetic model.
///
/// Draw order per call is fixed (validity, latency, prompt tokens,
/// completion tokens, output nonce), so a seeded generator replays the same
/// sequence of records.
pub fn synthetic_llm_call(
    obs: &Observation,
    profile: &SyntheticLlmProfile,
    driver: &DriverRecord,
    rng: &mut ChaCha8Rng,
    call_index: u64,
) -> (ActionRecord, Action) {
    let invalid = rng.random::<f64>() < profile.invalid_action_prob;
    let latency = profile.draw_latency(rng);
    let prompt_tokens = tokens_around(profile.mean_prompt_tokens, rng);
    let completion_tokens = tokens_around(profile.mean_completion_tokens, rng);
    let nonce: u64 = rng.random();

    let observation_hash = obs.hash();
    let template = driver
        .prompt_template_hash
        .as_ref()
        .map(|d| d.hex.clone())
        .unwrap_or_default();
    let prompt_hash = hash_doc(vec![
        ("observation", observation_hash.hex.clone().into()),
        ("template", template.into()),
    ]);
    let raw_output_hash = hash_doc(vec![
        ("call", call_index.into()),
        ("nonce", nonce.into()),
        ("prompt", prompt_hash.hex.clone().into()),
    ]);
    let action = if invalid {
        Action::new("invalid", ActionEffect::Invalid)
    } else {
        Action::new(
            "act",
            ActionEffect::Attempt {
                success_prob: profile.success_bias,
            },
        )
    };
    let record = ActionRecord {
        observation_hash,
        prompt_hash: Some(prompt_hash),
        raw_output_hash: Some(raw_output_hash),
        parsed_action_hash: (!invalid).then(|| action.hash()),
        parse_status: if invalid {
            ParseStatus::Invalid
        } else {
            ParseStatus::Parsed
        },
        invalid_action: invalid,
        prompt_tokens,
        completion_tokens,
        model_latency_ms: latency,
        backend_engine: driver.backend_engine.clone(),
        policy_version: Some(driver.policy_version()),
    };
    (record, action)
}
