use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::llm::{HttpEndpoint, LlmError};

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StubMode {
    /// One seeded pseudo-random unit vector per distinct text.
    WholeText,
    /// Normalized sum of per-token seeded vectors, so texts sharing words
    /// land near each other.
    BagOfWords,
}

/// Network-free embedder: identical text always yields the identical vector.
pub struct StubEmbedder {
    dim: usize,
    mode: StubMode,
    cache: Mutex<HashMap<String, Vec<f32>>>,
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        Self::with_mode(dim, StubMode::WholeText)
    }

    pub fn bag_of_words(dim: usize) -> Self {
        Self::with_mode(dim, StubMode::BagOfWords)
    }

    pub fn with_mode(dim: usize, mode: StubMode) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            mode,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn seeded_vector(&self, key: &str) -> Vec<f64> {
        let digest = Sha256::digest(key.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn compute(&self, text: &str) -> Vec<f32> {
        let raw = match self.mode {
            StubMode::WholeText => self.seeded_vector(text),
            StubMode::BagOfWords => {
                let mut acc = vec![0.0f64; self.dim];
                let mut any = false;
                for token in tokens(text) {
                    any = true;
                    for (a, v) in acc.iter_mut().zip(self.seeded_vector(&token)) {
                        *a += v;
                    }
                }
                if !any {
                    acc = self.seeded_vector(text);
                }
                acc
            }
        };
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.iter().map(|v| (v / norm) as f32).collect()
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl Embedder for StubEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError> {
        if let Some(v) = self.cache.lock().expect("embed cache poisoned").get(text) {
            return Ok(v.clone());
        }
        let v = self.compute(text);
        self.cache
            .lock()
            .expect("embed cache poisoned")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    api_key: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint, dim: usize) -> Result<Self, LlmError> {
        let api_key = std::env::var(&endpoint.api_key_env).map_err(|_| {
            LlmError::ProviderUnavailable(format!("environment variable {} is not set", endpoint.api_key_env))
        })?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build();
        Ok(Self {
            endpoint,
            api_key,
            dim,
            agent,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError> {
        let url = format!("{}/embeddings", self.endpoint.endpoint.trim_end_matches('/'));
        let response = self
            .agent
            .post(&url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(json!({"model": self.endpoint.model, "input": text}))
            .map_err(|e| LlmError::ProviderUnavailable(e.to_string()))?;
        let parsed: EmbeddingResponse = response
            .into_json()
            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        let v = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| LlmError::MalformedResponse("no embedding returned".into()))?;
        if v.len() != self.dim {
            return Err(LlmError::MalformedResponse(format!(
                "embedding has {} dimensions, expected {}",
                v.len(),
                self.dim
            )));
        }
        Ok(v)
    }
}
