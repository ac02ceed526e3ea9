use std::fmt;
use std::path::Path;
use std::sync::Arc;

use regex::Regex;
use serde::Deserialize;

use super::{truncate_to_tokens, CompletionRequest, LlmError, LlmProvider, ProviderReply, SyntheticProvider};
use crate::prompt;

pub enum Responder {
    Fixed(String),
    Dynamic(Arc<dyn Fn(&str) -> String + Send + Sync>),
}

impl fmt::Debug for Responder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Responder::Fixed(s) => f.debug_tuple("Fixed").field(s).finish(),
            Responder::Dynamic(_) => f.write_str("Dynamic(..)"),
        }
    }
}

/// Matches when every `contains` needle is present, none of the `excludes`
/// needles are, and the optional regex matches.
#[derive(Debug)]
pub struct ScriptRule {
    pub contains: Vec<String>,
    pub excludes: Vec<String>,
    pub regex: Option<Regex>,
    pub responder: Responder,
}

impl ScriptRule {
    pub fn contains(needles: &[&str], response: impl Into<String>) -> Self {
        Self {
            contains: needles.iter().map(|s| s.to_string()).collect(),
            excludes: Vec::new(),
            regex: None,
            responder: Responder::Fixed(response.into()),
        }
    }

    pub fn dynamic(needles: &[&str], f: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        Self {
            contains: needles.iter().map(|s| s.to_string()).collect(),
            excludes: Vec::new(),
            regex: None,
            responder: Responder::Dynamic(Arc::new(f)),
        }
    }

    pub fn excluding(mut self, needles: &[&str]) -> Self {
        self.excludes.extend(needles.iter().map(|s| s.to_string()));
        self
    }

    fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|n| prompt.contains(n.as_str()))
            && !self.excludes.iter().any(|n| prompt.contains(n.as_str()))
            && self.regex.as_ref().is_none_or(|r| r.is_match(prompt))
    }
}

#[derive(Deserialize)]
struct ScriptFile {
    #[serde(default)]
    strict: bool,
    #[serde(default)]
    default_response: Option<String>,
    /// `"synthetic"` sends unmatched prompts to the synthetic provider.
    #[serde(default)]
    fallback: Option<String>,
    rules: Vec<RuleFile>,
}

#[derive(Deserialize)]
struct RuleFile {
    #[serde(default)]
    contains: Vec<String>,
    #[serde(default)]
    excludes: Vec<String>,
    #[serde(default)]
    regex: Option<String>,
    /// Strings are returned verbatim; any other JSON value is returned compact-encoded.
    response: serde_json::Value,
}

/// Deterministic provider answering from an ordered rule table. The first
/// matching rule wins. Unmatched prompts fail in strict mode, otherwise go to
/// the fallback provider or the default response.
pub struct ScriptedProvider {
    name: String,
    rules: Vec<ScriptRule>,
    strict: bool,
    default_response: Option<String>,
    fallback: Option<Arc<dyn LlmProvider>>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            name: "scripted".into(),
            rules,
            strict: false,
            default_response: None,
            fallback: None,
        }
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn LlmProvider>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    /// Appends rules after the existing ones.
    pub fn extend(mut self, rules: impl IntoIterator<Item = ScriptRule>) -> Self {
        self.rules.extend(rules);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: ScriptFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut rules = Vec::with_capacity(file.rules.len());
        for r in file.rules {
            let regex = r
                .regex
                .map(|p| Regex::new(&p).map_err(|e| format!("bad rule regex {p}: {e}")))
                .transpose()?;
            let response = match r.response {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            rules.push(ScriptRule {
                contains: r.contains,
                excludes: r.excludes,
                regex,
                responder: Responder::Fixed(response),
            });
        }
        let mut provider = Self::new(rules).strict(file.strict);
        provider.default_response = file.default_response;
        match file.fallback.as_deref() {
            None => {}
            Some("synthetic") => provider.fallback = Some(Arc::new(SyntheticProvider::new())),
            Some(other) => return Err(format!("unknown fallback provider `{other}`")),
        }
        Ok(provider)
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }
}

impl LlmProvider for ScriptedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, LlmError> {
        let prompt = request.prompt.as_str();
        let text = match self.rules.iter().find(|r| r.matches(prompt)) {
            Some(rule) => match &rule.responder {
                Responder::Fixed(s) => s.clone(),
                Responder::Dynamic(f) => f(prompt),
            },
            None if self.strict => {
                return Err(LlmError::NoScriptedResponse {
                    task: prompt::task_of(prompt).unwrap_or("?").to_string(),
                })
            }
            None => match (&self.fallback, &self.default_response) {
                (Some(fallback), _) => return fallback.complete(request),
                (None, Some(default)) => default.clone(),
                (None, None) => String::new(),
            },
        };
        Ok(ProviderReply::text(truncate_to_tokens(&text, request.max_output_tokens)))
    }
}
