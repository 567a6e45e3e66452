use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GenerationRequest, MockProbe, ModelClient, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMode {
    /// Always the gold answer.
    EchoGold,
    /// Gold with probability `accuracy`, regardless of context.
    FixedAccuracy,
    /// Gold with probability `base + gain * mean context similarity`, plus
    /// `repeat_bonus` when a repeated demonstration is at least
    /// `repeat_similarity_threshold` similar to the query.
    SimilarityOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockModelConfig {
    pub mode: MockMode,
    #[serde(default)]
    pub accuracy: f64,
    #[serde(default)]
    pub base: f64,
    #[serde(default)]
    pub gain: f64,
    #[serde(default)]
    pub repeat_bonus: f64,
    #[serde(default)]
    pub repeat_similarity_threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MockModelConfig {
    pub fn echo_gold() -> Self {
        Self::with_mode(MockMode::EchoGold)
    }

    pub fn fixed_accuracy(accuracy: f64, seed: u64) -> Self {
        Self {
            accuracy,
            seed,
            ..Self::with_mode(MockMode::FixedAccuracy)
        }
    }

    pub fn similarity_oracle(base: f64, gain: f64, seed: u64) -> Self {
        Self {
            base,
            gain,
            seed,
            ..Self::with_mode(MockMode::SimilarityOracle)
        }
    }

    fn with_mode(mode: MockMode) -> Self {
        Self {
            mode,
            accuracy: 0.0,
            base: 0.0,
            gain: 0.0,
            repeat_bonus: 0.0,
            repeat_similarity_threshold: 0.0,
            seed: 0,
        }
    }

    /// Probability of answering correctly for this probe, clamped to [0, 1].
    pub fn correctness_probability(&self, probe: &MockProbe) -> f64 {
        let p = match self.mode {
            MockMode::EchoGold => 1.0,
            MockMode::FixedAccuracy => self.accuracy,
            MockMode::SimilarityOracle => {
                let sims = &probe.context_similarities;
                let mean = if sims.is_empty() {
                    0.0
                } else {
                    sims.iter().sum::<f64>() / sims.len() as f64
                };
                let bonus = if probe
                    .repeat_similarities
                    .iter()
                    .any(|&s| s >= self.repeat_similarity_threshold)
                {
                    self.repeat_bonus
                } else {
                    0.0
                };
                self.base + self.gain.max(0.0) * mean + bonus
            }
        };
        p.clamp(0.0, 1.0)
    }
}

/// Deterministic offline model. Randomness is keyed on `(seed, probe.query)`
/// only, so two prompts for the same question share one uniform draw and a
/// higher correctness probability can never turn a right answer wrong.
#[derive(Debug)]
pub struct MockModel {
    model_id: String,
    config: MockModelConfig,
    calls: AtomicUsize,
}

fn hash_u64(seed: u64, domain: &[u8], text: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain);
    h.update(text.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl MockModel {
    pub fn new(model_id: impl Into<String>, config: MockModelConfig) -> Self {
        Self {
            model_id: model_id.into(),
            config,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &MockModelConfig {
        &self.config
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn answer(&self, probe: &MockProbe) -> String {
        let p = self.config.correctness_probability(probe);
        let u = (hash_u64(self.config.seed, b"u", &probe.query) >> 11) as f64 / (1u64 << 53) as f64;
        if u < p || probe.alternatives.is_empty() {
            return probe.gold.clone();
        }
        let pick = hash_u64(self.config.seed, b"w", &probe.query) as usize % probe.alternatives.len();
        probe.alternatives[pick].clone()
    }
}

impl ModelClient for MockModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let probe = MockProbe::extract(&request.prompt)
            .ok_or_else(|| ModelError::ResponseMalformed("mock prompt carries no probe".into()))?;
        Ok(self.answer(&probe).trim_end().to_string())
    }

    fn wants_probe(&self) -> bool {
        true
    }
}
