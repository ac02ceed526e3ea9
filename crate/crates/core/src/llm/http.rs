use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionRequest, LlmError, LlmProvider, ProviderReply};

/// Connection details for an OpenAI-compatible chat-completion endpoint.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct HttpEndpoint {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

pub struct HttpProvider {
    name: String,
    endpoint: HttpEndpoint,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(name: &str, endpoint: HttpEndpoint) -> Result<Self, LlmError> {
        let api_key = std::env::var(&endpoint.api_key_env).map_err(|_| {
            LlmError::ProviderUnavailable(format!("environment variable {} is not set", endpoint.api_key_env))
        })?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build();
        Ok(Self {
            name: name.to_string(),
            endpoint,
            api_key,
            agent,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.endpoint.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl LlmProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, LlmError> {
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "frequency_penalty": request.frequency_penalty,
            "presence_penalty": request.presence_penalty,
        });
        let response = self
            .agent
            .post(&self.url())
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                return Err(LlmError::ProviderUnavailable(format!("HTTP {code}: {detail}")));
            }
            Err(e) => return Err(LlmError::ProviderUnavailable(e.to_string())),
        };
        let parsed: ChatResponse = response
            .into_json()
            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("response has no message content".into()))?;
        Ok(ProviderReply {
            text,
            input_tokens: parsed.usage.as_ref().map(|u| u.prompt_tokens),
            output_tokens: parsed.usage.as_ref().map(|u| u.completion_tokens),
        })
    }
}
