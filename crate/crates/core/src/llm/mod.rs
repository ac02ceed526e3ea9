//! Uniform completion interface over interchangeable LLM providers.
//!
//! [`Gateway`] wraps a provider with the context-window precondition,
//! retries, per-tag token/cost counters and optional prompt dumps.

pub mod call;
mod http;
pub mod output;
mod scripted;
mod synthetic;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::PipelineConfig;

pub use call::{with_correction, CallError, Caller};
pub use http::{HttpEndpoint, HttpProvider};
pub use scripted::{Responder, ScriptRule, ScriptedProvider};
pub use synthetic::SyntheticProvider;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("prompt of {prompt_tokens} tokens plus {max_output_tokens} output tokens exceeds the {context_window} token window")]
    ContextOverflow {
        prompt_tokens: usize,
        max_output_tokens: usize,
        context_window: usize,
    },
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response matches prompt for task {task}")]
    NoScriptedResponse { task: String },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub tag: String,
}

impl CompletionRequest {
    pub fn new(config: &PipelineConfig, tag: &str, prompt: String) -> Self {
        Self {
            prompt,
            max_output_tokens: config.max_output_tokens,
            temperature: config.temperature,
            top_p: config.top_p,
            frequency_penalty: config.frequency_penalty,
            presence_penalty: config.presence_penalty,
            tag: tag.to_string(),
        }
    }

    pub fn with_max_output(mut self, tokens: usize) -> Self {
        self.max_output_tokens = tokens.max(1);
        self
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub provider: String,
    pub latency_ms: u64,
}

/// What a provider hands back; token counts are filled in by the gateway
/// when the provider does not report them.
#[derive(Clone, Debug, Default)]
pub struct ProviderReply {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

impl ProviderReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, LlmError>;
    fn tokenizer(&self) -> Option<Arc<dyn Tokenizer>> {
        None
    }
}

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Conservative fallback: one token per three characters, rounded up.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicTokenizer;

impl Tokenizer for HeuristicTokenizer {
    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(3)
    }
}

/// Cuts `text` to at most `max_tokens` heuristic tokens, the way a provider
/// stops generating at its output limit.
pub fn truncate_to_tokens(text: &str, max_tokens: usize) -> String {
    let limit = max_tokens.saturating_mul(3);
    if text.chars().count() <= limit {
        text.to_string()
    } else {
        text.chars().take(limit).collect()
    }
}

/// Largest column group a window can plausibly hold.
pub const MIN_TOKENS_PER_COLUMN: usize = 16;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ProviderProfile {
    pub name: String,
    pub context_window_tokens: usize,
    pub column_group_size: usize,
    #[serde(default)]
    pub price_per_1m_input: f64,
    #[serde(default)]
    pub price_per_1m_output: f64,
}

impl ProviderProfile {
    /// Profile with an effectively unbounded window, used by test doubles.
    pub fn unbounded(name: &str) -> Self {
        Self {
            name: name.to_string(),
            context_window_tokens: 1 << 30,
            column_group_size: 40,
            price_per_1m_input: 0.0,
            price_per_1m_output: 0.0,
        }
    }

    pub fn column_group_bound(&self) -> usize {
        self.context_window_tokens / MIN_TOKENS_PER_COLUMN
    }

    pub fn check(&self) -> Result<(), String> {
        if self.context_window_tokens == 0 || self.column_group_size == 0 {
            return Err(format!("profile {}: window and group size must be positive", self.name));
        }
        if self.column_group_size >= self.column_group_bound() {
            return Err(format!(
                "profile {}: column_group_size {} must be below {}",
                self.name,
                self.column_group_size,
                self.column_group_bound()
            ));
        }
        Ok(())
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        (input_tokens as f64 * self.price_per_1m_input
            + output_tokens as f64 * self.price_per_1m_output)
            / 1_000_000.0
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, Default, PartialEq)]
pub struct TagUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
    pub max_prompt_tokens: u64,
    pub latency_ms: u64,
}

impl TagUsage {
    fn add(&mut self, other: &TagUsage) {
        self.calls += other.calls;
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.cost += other.cost;
        self.max_prompt_tokens = self.max_prompt_tokens.max(other.max_prompt_tokens);
        self.latency_ms += other.latency_ms;
    }
}

#[derive(Clone, Debug)]
pub struct RetryPolicy {
    pub unavailable_retries: u32,
    pub malformed_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            unavailable_retries: 3,
            malformed_retries: 1,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self {
            base_delay: Duration::ZERO,
            ..Self::default()
        }
    }
}

pub struct Gateway {
    provider: Arc<dyn LlmProvider>,
    profile: ProviderProfile,
    tokenizer: Arc<dyn Tokenizer>,
    retry: RetryPolicy,
    usage: Mutex<BTreeMap<String, TagUsage>>,
    dump_dir: Option<PathBuf>,
    dump_seq: AtomicU64,
    overflows: AtomicU64,
}

impl Gateway {
    pub fn new(provider: Arc<dyn LlmProvider>, profile: ProviderProfile) -> Self {
        let tokenizer = provider
            .tokenizer()
            .unwrap_or_else(|| Arc::new(HeuristicTokenizer));
        Self {
            provider,
            profile,
            tokenizer,
            retry: RetryPolicy::default(),
            usage: Mutex::new(BTreeMap::new()),
            dump_dir: None,
            dump_seq: AtomicU64::new(0),
            overflows: AtomicU64::new(0),
        }
    }

    /// Requests refused for not fitting the context window, including ones
    /// a caller recovered from.
    pub fn overflow_count(&self) -> u64 {
        self.overflows.load(Ordering::Relaxed)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Writes every prompt to `dir` as `<seq>-<tag>.txt`.
    pub fn with_prompt_dump(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dump_dir = Some(dir.into());
        self
    }

    pub fn profile(&self) -> &ProviderProfile {
        &self.profile
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        self.tokenizer.count(text)
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let prompt_tokens = self.count_tokens(&request.prompt);
        if prompt_tokens + request.max_output_tokens > self.profile.context_window_tokens {
            self.overflows.fetch_add(1, Ordering::Relaxed);
            return Err(LlmError::ContextOverflow {
                prompt_tokens,
                max_output_tokens: request.max_output_tokens,
                context_window: self.profile.context_window_tokens,
            });
        }
        self.dump(request);

        let started = Instant::now();
        let mut unavailable = 0;
        let mut malformed = 0;
        let reply = loop {
            match self.provider.complete(request) {
                Ok(reply) => break reply,
                Err(LlmError::ProviderUnavailable(msg)) if unavailable < self.retry.unavailable_retries => {
                    let delay = self.retry.base_delay * 2u32.pow(unavailable);
                    log::warn!("{} unavailable ({msg}), retrying in {delay:?}", self.provider.name());
                    unavailable += 1;
                    std::thread::sleep(delay);
                }
                Err(LlmError::MalformedResponse(msg)) if malformed < self.retry.malformed_retries => {
                    log::warn!("{} returned a malformed payload ({msg}), retrying", self.provider.name());
                    malformed += 1;
                }
                Err(e) => return Err(e),
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let input_tokens = reply.input_tokens.unwrap_or(prompt_tokens as u64);
        let output_tokens = reply
            .output_tokens
            .unwrap_or_else(|| self.count_tokens(&reply.text) as u64);

        {
            let mut usage = self.usage.lock().expect("usage lock poisoned");
            let entry = usage.entry(request.tag.clone()).or_default();
            entry.calls += 1;
            entry.input_tokens += input_tokens;
            entry.output_tokens += output_tokens;
            entry.cost += self.profile.cost(input_tokens, output_tokens);
            entry.max_prompt_tokens = entry.max_prompt_tokens.max(prompt_tokens as u64);
            entry.latency_ms += latency_ms;
        }

        Ok(CompletionResult {
            text: reply.text,
            input_tokens,
            output_tokens,
            provider: self.provider.name().to_string(),
            latency_ms,
        })
    }

    pub fn usage(&self) -> BTreeMap<String, TagUsage> {
        self.usage.lock().expect("usage lock poisoned").clone()
    }

    pub fn tag_usage(&self, tag: &str) -> TagUsage {
        self.usage
            .lock()
            .expect("usage lock poisoned")
            .get(tag)
            .cloned()
            .unwrap_or_default()
    }

    pub fn total_usage(&self) -> TagUsage {
        let usage = self.usage.lock().expect("usage lock poisoned");
        let mut total = TagUsage::default();
        for u in usage.values() {
            total.add(u);
        }
        total
    }

    pub fn reset_usage(&self) {
        self.usage.lock().expect("usage lock poisoned").clear();
    }

    fn dump(&self, request: &CompletionRequest) {
        let Some(dir) = &self.dump_dir else { return };
        let seq = self.dump_seq.fetch_add(1, Ordering::SeqCst);
        let path = dir.join(format!("{seq:05}-{}.txt", request.tag));
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, &request.prompt)) {
            log::warn!("could not dump prompt to {}: {e}", path.display());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    fn config() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn scripted(rules: Vec<ScriptRule>) -> Arc<dyn LlmProvider> {
        Arc::new(ScriptedProvider::new(rules).strict(true))
    }

    #[test]
    fn scripted_echo() {
        let gw = Gateway::new(
            scripted(vec![ScriptRule::contains(&["COLUMN-BATCH t1"], "desc-block-1")]),
            ProviderProfile::unbounded("scripted"),
        );
        let req = CompletionRequest::new(&config(), "hdc", "please COLUMN-BATCH t1 now".into());
        assert_eq!(gw.complete(&req).unwrap().text, "desc-block-1");
    }

    #[test]
    fn context_overflow() {
        let mut profile = ProviderProfile::unbounded("tiny");
        profile.context_window_tokens = 8;
        let gw = Gateway::new(scripted(vec![]), profile);
        // 30 chars -> 10 heuristic tokens
        let req = CompletionRequest::new(&config(), "hdc", "x".repeat(30)).with_max_output(1);
        assert!(matches!(gw.complete(&req), Err(LlmError::ContextOverflow { prompt_tokens: 10, .. })));
        assert_eq!(gw.overflow_count(), 1);
    }

    #[test]
    fn output_tokens_accumulate_per_tag() {
        // 15 and 21 characters: 5 and 7 heuristic tokens
        let gw = Gateway::new(
            scripted(vec![
                ScriptRule::contains(&["first"], "abcdefghijklmno"),
                ScriptRule::contains(&["second"], "abcdefghijklmnopqrstu"),
            ]),
            ProviderProfile::unbounded("scripted"),
        );
        for p in ["first", "second"] {
            gw.complete(&CompletionRequest::new(&config(), "hdc", p.into())).unwrap();
        }
        let hdc = gw.tag_usage("hdc");
        assert_eq!(hdc.output_tokens, 12);
        assert_eq!(hdc.calls, 2);
        assert_eq!(gw.total_usage().output_tokens, 12);
    }

    #[test]
    fn token_count_pins() {
        let t = HeuristicTokenizer;
        assert_eq!(t.count(""), 0);
        assert_eq!(t.count("select id from t"), 6);
    }

    struct Flaky {
        failures: AtomicU32,
        error: LlmError,
    }

    impl LlmProvider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn complete(&self, _: &CompletionRequest) -> Result<ProviderReply, LlmError> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                Err(self.error.clone())
            } else {
                Ok(ProviderReply::text("ok"))
            }
        }
    }

    fn flaky_gateway(failures: u32, error: LlmError) -> Gateway {
        Gateway::new(
            Arc::new(Flaky {
                failures: AtomicU32::new(failures),
                error,
            }),
            ProviderProfile::unbounded("flaky"),
        )
        .with_retry(RetryPolicy::immediate())
    }

    #[test]
    fn unavailable_is_retried_three_times() {
        let req = CompletionRequest::new(&config(), "t", "p".into());
        let unavailable = LlmError::ProviderUnavailable("503".into());
        assert!(flaky_gateway(3, unavailable.clone()).complete(&req).is_ok());
        assert!(flaky_gateway(4, unavailable).complete(&req).is_err());
    }

    #[test]
    fn malformed_is_retried_once() {
        let req = CompletionRequest::new(&config(), "t", "p".into());
        let malformed = LlmError::MalformedResponse("bad json".into());
        assert!(flaky_gateway(1, malformed.clone()).complete(&req).is_ok());
        assert!(flaky_gateway(2, malformed).complete(&req).is_err());
    }

    #[test]
    fn profile_group_bound() {
        let mut p = ProviderProfile::unbounded("p");
        p.context_window_tokens = 640;
        p.column_group_size = 40;
        assert!(p.check().is_err());
        p.context_window_tokens = 8192;
        assert!(p.check().is_ok());
    }

    #[test]
    fn prompts_are_dumped() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(
            scripted(vec![ScriptRule::contains(&["x"], "y")]),
            ProviderProfile::unbounded("s"),
        )
        .with_prompt_dump(dir.path());
        gw.complete(&CompletionRequest::new(&config(), "stage", "x".into())).unwrap();
        let dumped = std::fs::read_to_string(dir.path().join("00000-stage.txt")).unwrap();
        assert_eq!(dumped, "x");
    }
}
