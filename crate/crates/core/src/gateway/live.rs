//! Chat-completion HTTP client. One request per elicitation, blocking,
//! with auth taken from the environment so secrets never live in config
//! files or logs.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{ChatBackend, Message, TransportError};

/// Sampling temperature used when a temperature-style config leaves it
/// unset.
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Minimal,
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    Low,
    Medium,
    High,
}

/// Exactly one sampling mode per model. Temperature-style models send a
/// `temperature` field; reasoning-style models send `reasoning_effort`
/// and `verbosity` and no temperature at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Temperature(f64),
    Reasoning {
        effort: ReasoningEffort,
        verbosity: Verbosity,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InvalidModelConfig {
    #[error("temperature {0} outside [0, 2]")]
    TemperatureOutOfRange(String),
    #[error("model name must not be empty")]
    EmptyModelName,
    #[error("endpoint must not be empty")]
    EmptyEndpoint,
}

/// Everything needed to reach one live model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_name: String,
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub sampling: Sampling,
    pub timeout: Duration,
    pub max_retries: u32,
    pub requests_per_minute: u32,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), InvalidModelConfig> {
        if self.model_name.is_empty() {
            return Err(InvalidModelConfig::EmptyModelName);
        }
        if self.endpoint.is_empty() {
            return Err(InvalidModelConfig::EmptyEndpoint);
        }
        if let Sampling::Temperature(t) = self.sampling {
            if !(0.0..=2.0).contains(&t) || !t.is_finite() {
                return Err(InvalidModelConfig::TemperatureOutOfRange(t.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// Blocking chat-completion client for one model.
pub struct LiveBackend {
    config: ModelConfig,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    /// Builds the client and resolves the API key. A missing key is a
    /// construction-time error so runs fail before the first match, not
    /// in the middle of one.
    pub fn new(config: ModelConfig) -> Result<LiveBackend, TransportError> {
        config
            .validate()
            .map_err(|e| TransportError::BadResponse(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            TransportError::BadResponse(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(LiveBackend {
            config,
            api_key,
            client,
        })
    }

    fn request_body(&self, messages: &[Message]) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": messages,
        });
        match self.config.sampling {
            Sampling::Temperature(t) => {
                body["temperature"] = json!(t);
            }
            Sampling::Reasoning { effort, verbosity } => {
                body["reasoning_effort"] = serde_json::to_value(effort).expect("serializes");
                body["verbosity"] = serde_json::to_value(verbosity).expect("serializes");
            }
        }
        body
    }
}

fn truncate_for_log(text: &str) -> String {
    const LIMIT: usize = 500;
    if text.len() <= LIMIT {
        text.to_string()
    } else {
        let mut cut = LIMIT;
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        format!("{}… ({} bytes)", &text[..cut], text.len())
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&mut self, key: &str, messages: &[Message]) -> Result<String, TransportError> {
        let body = self.request_body(messages);
        // The auth header is deliberately absent from logs.
        log::debug!(
            "POST {} key={key} body={}",
            self.config.endpoint,
            truncate_for_log(&body.to_string())
        );
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        log::debug!(
            "reply {} key={key} body={}",
            status,
            truncate_for_log(&text)
        );
        if !status.is_success() {
            return Err(TransportError::HttpStatus {
                status: status.as_u16(),
                body: truncate_for_log(&text),
            });
        }
        let parsed: CompletionResponse = serde_json::from_str(&text).map_err(|e| {
            TransportError::BadResponse(format!("{e}: {}", truncate_for_log(&text)))
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                TransportError::BadResponse("response carried no message content".into())
            })
    }
}
