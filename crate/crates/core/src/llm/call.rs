//! Budget-checked calls with structured output, shared by every pipeline stage.

use serde::de::DeserializeOwned;
use thiserror::Error;

use super::output::parse_json;
use super::{CompletionRequest, Gateway, LlmError};
use crate::domain::PipelineConfig;
use crate::prompt::catalog::CORRECTION;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CallError {
    #[error("{tag}: prompt needs {prompt_tokens} tokens, budget is {limit}")]
    Budget {
        tag: String,
        prompt_tokens: usize,
        limit: usize,
    },
    #[error("{tag}: {source}")]
    Llm {
        tag: String,
        #[source]
        source: LlmError,
    },
    #[error("{tag}: unusable reply after a corrective re-prompt: {message}")]
    Malformed { tag: String, message: String },
}

/// Appends a corrective note to a prompt, keeping it stateless.
pub fn with_correction(prompt: &str, note: &str) -> String {
    format!("{prompt}\n{CORRECTION} {note}\n")
}

#[derive(Clone, Copy)]
pub struct Caller<'a> {
    pub gateway: &'a Gateway,
    pub config: &'a PipelineConfig,
}

impl<'a> Caller<'a> {
    pub fn new(gateway: &'a Gateway, config: &'a PipelineConfig) -> Self {
        Self { gateway, config }
    }

    pub fn tokens(&self, text: &str) -> usize {
        self.gateway.count_tokens(text)
    }

    /// Prompt budget: the configured limit, further bounded so a prompt plus
    /// the output reserve always fits the provider's window.
    pub fn prompt_limit(&self) -> usize {
        let window = self.gateway.profile().context_window_tokens;
        self.config
            .max_prompt_tokens
            .min(window.saturating_sub(self.config.max_output_tokens))
            .max(1)
    }

    pub fn fits(&self, prompt: &str) -> bool {
        self.tokens(prompt) <= self.prompt_limit()
    }

    pub fn check_budget(&self, tag: &str, prompt: &str) -> Result<(), CallError> {
        let prompt_tokens = self.tokens(prompt);
        if prompt_tokens > self.prompt_limit() {
            return Err(CallError::Budget {
                tag: tag.to_string(),
                prompt_tokens,
                limit: self.prompt_limit(),
            });
        }
        Ok(())
    }

    /// Largest `k <= n` whose prompt `build(k)` fits the budget. `build` must
    /// grow monotonically with `k`.
    pub fn fit_prefix(&self, n: usize, build: impl Fn(usize) -> String) -> Option<(usize, String)> {
        let whole = build(n);
        if self.fits(&whole) {
            return Some((n, whole));
        }
        let (mut lo, mut hi) = (0usize, n);
        let mut best: Option<(usize, String)> = None;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let p = build(mid);
            if self.fits(&p) {
                best = Some((mid, p));
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        best
    }

    pub fn text(&self, tag: &str, prompt: String, max_output: Option<usize>) -> Result<String, CallError> {
        self.check_budget(tag, &prompt)?;
        let mut request = CompletionRequest::new(self.config, tag, prompt);
        if let Some(cap) = max_output {
            let cap = cap.min(request.max_output_tokens).max(1);
            request = request.with_max_output(cap);
        }
        self.gateway
            .complete(&request)
            .map(|r| r.text)
            .map_err(|source| CallError::Llm {
                tag: tag.to_string(),
                source,
            })
    }

    /// Calls and decodes JSON; an undecodable reply gets one corrective
    /// re-prompt under `<tag>.retry`.
    pub fn json<T: DeserializeOwned>(&self, tag: &str, prompt: String) -> Result<T, CallError> {
        let reply = self.text(tag, prompt.clone(), None)?;
        match parse_json::<T>(&reply) {
            Ok(v) => Ok(v),
            Err(first) => {
                let note = format!("the previous reply could not be decoded ({first}); answer with the JSON object only");
                let retry_tag = format!("{tag}.retry");
                let reply = self.text(&retry_tag, with_correction(&prompt, &note), None)?;
                parse_json::<T>(&reply).map_err(|message| CallError::Malformed {
                    tag: tag.to_string(),
                    message,
                })
            }
        }
    }
}
