//! The biased-oracle mock: a pure function of (prompt hash, profile) that
//! picks a level from a base value plus a per-characteristic offset, and
//! refuses with a configured per-characteristic probability.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelResponse, RequestHash, TrialHint};
use crate::promptkit::PromptPair;

pub const MOCK_REFUSAL_TEXT: &str =
    "I cannot make assumptions about a student's abilities based on their background.";

const GENERATION_TEXTS: &str = include_str!("../../data/mock_generations.json");

fn default_base() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleProfile {
    #[serde(default = "default_base")]
    pub base_level: f64,
    /// Phrase substring -> level offset. Keys match whole words of the
    /// candidate; the longest matching key wins.
    #[serde(default)]
    pub offsets: BTreeMap<String, f64>,
    /// Phrase substring -> probability of a full refusal.
    #[serde(default)]
    pub refusals: BTreeMap<String, f64>,
    /// Probability of a full refusal for candidates no refusal key matches.
    #[serde(default)]
    pub default_refusal: f64,
    /// Standard deviation of Gaussian noise added before rounding.
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
    /// Generation responses use this text verbatim when set.
    #[serde(default)]
    pub fixed_text: Option<String>,
}

impl Default for OracleProfile {
    fn default() -> Self {
        Self {
            base_level: default_base(),
            offsets: BTreeMap::new(),
            refusals: BTreeMap::new(),
            default_refusal: 0.0,
            noise_sd: 0.0,
            seed: 0,
            fixed_text: None,
        }
    }
}

impl OracleProfile {
    pub fn validate(&self) -> Result<(), String> {
        if !self.base_level.is_finite() {
            return Err("base_level must be finite".into());
        }
        if let Some((k, v)) = self.offsets.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("offset for '{k}' is not finite: {v}"));
        }
        let probs = self
            .refusals
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .chain([("<default>", self.default_refusal)]);
        for (k, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("refusal probability for '{k}' outside [0,1]: {p}"));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err("noise_sd must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn offset_for(&self, candidate: &str) -> f64 {
        best_match(candidate, &self.offsets).unwrap_or(0.0)
    }

    pub fn refusal_for(&self, candidate: &str) -> f64 {
        best_match(candidate, &self.refusals).unwrap_or(self.default_refusal)
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'-' || b == b'\''
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    let bytes = hay.as_bytes();
    hay.match_indices(&needle).any(|(start, m)| {
        let end = start + m.len();
        let left_ok = start == 0 || !is_word_byte(bytes[start - 1]);
        let right_ok = end == bytes.len() || !is_word_byte(bytes[end]);
        left_ok && right_ok
    })
}

fn best_match(candidate: &str, map: &BTreeMap<String, f64>) -> Option<f64> {
    map.iter()
        .filter(|(k, _)| contains_word(candidate, k))
        // longest key wins; BTreeMap order breaks ties
        .fold(None::<(&String, f64)>, |best, (k, v)| match best {
            Some((bk, _)) if bk.len() >= k.len() => best,
            _ => Some((k, *v)),
        })
        .map(|(_, v)| v)
}

fn trial_rng(profile_seed: u64, hash: RequestHash) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(profile_seed.to_le_bytes());
    h.update(hash.0);
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn generation_texts() -> Vec<String> {
    serde_json::from_str(GENERATION_TEXTS).expect("bundled generation texts parse")
}

/// Deterministic mock completion. Ranking prompts (hint carries a
/// presentation) answer with a bare letter; generation prompts answer with a
/// canned explanation whose complexity tracks the chosen level.
pub fn oracle_complete(
    prompt: &PromptPair,
    profile: &OracleProfile,
    hint: &TrialHint,
    hash: RequestHash,
) -> ModelResponse {
    let _ = prompt;
    let mut rng = trial_rng(profile.seed, hash);
    let refusal_draw: f64 = rng.random();
    let noise = if profile.noise_sd > 0.0 {
        Normal::new(0.0, profile.noise_sd)
            .expect("validated noise_sd")
            .sample(&mut rng)
    } else {
        0.0
    };

    let respond = |text: String| ModelResponse {
        text,
        finish_reason: "stop".into(),
        latency: Duration::ZERO,
        from_cache: false,
        request_hash: hash,
    };

    if refusal_draw < profile.refusal_for(&hint.candidate) {
        return respond(MOCK_REFUSAL_TEXT.into());
    }

    let target = profile.base_level + profile.offset_for(&hint.candidate) + noise;
    match &hint.presentation {
        Some(pres) => {
            let l = pres.level_count().max(1) as f64;
            let level = target.round().clamp(1.0, l) as u32;
            let letter = pres.letter_for(level).unwrap_or('A');
            respond(letter.to_string())
        }
        None => {
            if let Some(text) = &profile.fixed_text {
                return respond(text.clone());
            }
            let texts = generation_texts();
            let level = target.round().clamp(1.0, texts.len() as f64) as usize;
            let topic = topic_from_prompt(&prompt.user).unwrap_or("this topic");
            respond(texts[level - 1].replace("{topic}", topic))
        }
    }
}

fn topic_from_prompt(user: &str) -> Option<&str> {
    const MARK: &str = "on the topic of ";
    let start = user.rfind(MARK)? + MARK.len();
    let rest = &user[start..];
    Some(rest.strip_suffix('.').unwrap_or(rest)).filter(|t| !t.is_empty())
}
