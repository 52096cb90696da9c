//! Serialized pipeline output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::Candidate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub acoustic_model: String,
    pub lexicon: String,
    pub lm: String,
    pub channel: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub text: String,
    pub score: f64,
    /// Canonical pronunciation along the best path.
    pub phonemes: Vec<String>,
}

impl From<Candidate> for CandidateResult {
    fn from(c: Candidate) -> Self {
        Self { text: c.words.join(" "), score: c.score, phonemes: c.canonical.to_symbols() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentResult {
    pub start_s: f64,
    pub end_s: f64,
    /// Recognized phonemes fed to the word decoder.
    pub phonemes: Vec<String>,
    pub phoneme_log_prob: f64,
    /// Best first.
    pub candidates: Vec<CandidateResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyricResult {
    pub audio_sha256: String,
    pub duration_s: f64,
    pub seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub fingerprints: Fingerprints,
    pub segments: Vec<SegmentResult>,
}

impl LyricResult {
    /// Pretty JSON with a trailing newline. Field order is fixed, so equal
    /// results serialize to identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Top candidate text per segment.
    pub fn top_lines(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.candidates.first().map(|c| c.text.clone()).unwrap_or_default()).collect()
    }
}
