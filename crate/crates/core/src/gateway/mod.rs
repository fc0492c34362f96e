//! Uniform access to agent backends. Live chat-completion endpoints and
//! the deterministic offline mocks implement one text-in/text-out trait,
//! so nothing downstream can tell them apart.

pub mod backends;
pub mod clock;
pub mod live;
pub mod parse;
pub mod rate_limit;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::Action;
use crate::prompts;
pub use clock::{Clock, SystemClock};
pub use parse::{parse_action, ParseError};
pub use rate_limit::RateLimiter;

/// Message roles of the chat wire format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Message {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Message {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Message {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A backend-level failure for one send.
#[derive(Debug, Error, Clone)]
pub enum TransportError {
    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("request failed: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("scripted backend ran out of replies")]
    ScriptExhausted,
    #[error("no recorded reply for key {0}")]
    MissingRecording(String),
}

impl TransportError {
    /// Whether a retry could plausibly succeed. Mock-backend errors and
    /// client-side HTTP errors are permanent; network flakes, timeouts,
    /// throttling, and server errors are not.
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Network(_) => true,
            TransportError::HttpStatus { status, .. } => {
                *status >= 500 || *status == 429 || *status == 408
            }
            _ => false,
        }
    }
}

/// Terminal gateway failure, after retries are exhausted.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempts: {last}")]
    TransportExhausted { attempts: u32, last: TransportError },
    #[error("reply still unparseable after {attempts} attempts: {last}")]
    ParseExhausted { attempts: u32, last: ParseError },
}

/// The one contract every backend implements: send a conversation, get
/// raw text back.
///
/// `key` names the elicitation (condition, match, round, attempt) so the
/// replay backend can look up a recorded reply; other backends ignore it.
pub trait ChatBackend: Send {
    fn complete(&mut self, key: &str, messages: &[Message]) -> Result<String, TransportError>;
}

/// A ready-to-query agent: a backend plus retry policy, optional shared
/// rate limiter, and the clock that paces backoff.
pub struct AgentHandle {
    backend: Box<dyn ChatBackend>,
    /// Maximum total attempts for each failure class (transport sends and
    /// parse re-asks are counted separately). A value of 5 means five
    /// total attempts, not five retries after the first.
    pub max_retries: u32,
    backoff_base: Duration,
    rate_limiter: Option<Arc<RateLimiter>>,
    clock: Arc<dyn Clock>,
    context_key: String,
}

impl AgentHandle {
    pub fn new(backend: Box<dyn ChatBackend>, max_retries: u32) -> AgentHandle {
        assert!(
            max_retries >= 1,
            "max_retries must allow at least one attempt"
        );
        AgentHandle {
            backend,
            max_retries,
            backoff_base: Duration::from_millis(500),
            rate_limiter: None,
            clock: Arc::new(SystemClock),
            context_key: String::new(),
        }
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> AgentHandle {
        self.rate_limiter = Some(limiter);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> AgentHandle {
        self.clock = clock;
        self
    }

    pub fn with_backoff_base(mut self, base: Duration) -> AgentHandle {
        self.backoff_base = base;
        self
    }

    /// Names the next elicitation for replay lookup and logging.
    pub fn set_context_key(&mut self, key: impl Into<String>) {
        self.context_key = key.into();
    }

    /// Sends one conversation, retrying transient transport failures with
    /// exponential backoff. Does not interpret the reply.
    pub fn complete_raw(&mut self, messages: &[Message]) -> Result<String, GatewayError> {
        let mut last = None;
        let mut attempts = 0;
        for attempt in 1..=self.max_retries {
            if let Some(limiter) = &self.rate_limiter {
                limiter.acquire();
            }
            let key = if self.context_key.is_empty() {
                format!("a{attempt}")
            } else {
                format!("{}/a{attempt}", self.context_key)
            };
            attempts = attempt;
            match self.backend.complete(&key, messages) {
                Ok(text) => return Ok(text),
                Err(err) => {
                    let transient = err.is_transient();
                    log::warn!("send {key} failed (attempt {attempt}): {err}");
                    last = Some(err);
                    if !transient || attempt == self.max_retries {
                        break;
                    }
                    self.clock.sleep(backoff_delay(self.backoff_base, attempt));
                }
            }
        }
        Err(GatewayError::TransportExhausted {
            attempts,
            last: last.expect("at least one attempt ran"),
        })
    }
}

/// Exponential backoff with 25% jitter, capped at 30 seconds.
fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    use rand::Rng;
    let exp = base.saturating_mul(1u32 << (attempt - 1).min(16));
    let capped = exp.min(Duration::from_secs(30));
    let jitter = rand::rng().random_range(0.0..0.25);
    capped.mul_f64(1.0 + jitter)
}

/// A parsed move along with how it was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionReply {
    pub raw: String,
    pub parsed: Action,
    pub attempts: u32,
}

/// Builds the two-message conversation for one round: the personality
/// prompt (when the condition has one) and the game context as the system
/// message, then the history block plus the answer instruction as the
/// user message. Earlier rounds are not carried as turns; each round's
/// history block is self-contained.
pub fn assemble_conversation(
    context: &str,
    personality: Option<&str>,
    history: &str,
) -> Vec<Message> {
    vec![
        Message::system(assemble_system_prompt(context, personality)),
        Message::user(assemble_user_prompt(history)),
    ]
}

pub fn assemble_system_prompt(context: &str, personality: Option<&str>) -> String {
    match personality {
        Some(p) => format!("{p}\n\n{context}"),
        None => context.to_string(),
    }
}

pub fn assemble_user_prompt(history: &str) -> String {
    format!("{history}\n\n{}", prompts::elicitation_suffix())
}

/// Asks the agent for one move.
///
/// Parse failures re-ask with the reminder line (the malformed reply stays
/// in the conversation so the model can correct itself); transport
/// failures retry inside [`AgentHandle::complete_raw`]. Both loops are
/// capped at `max_retries` total attempts, and exhaustion surfaces as an
/// error rather than a fabricated move.
pub fn elicit_action(
    agent: &mut AgentHandle,
    context: &str,
    personality: Option<&str>,
    history: &str,
) -> Result<ActionReply, GatewayError> {
    let mut conversation = assemble_conversation(context, personality, history);
    let mut last = None;
    for attempt in 1..=agent.max_retries {
        let raw = agent.complete_raw(&conversation)?;
        match parse_action(&raw) {
            Ok(parsed) => {
                return Ok(ActionReply {
                    raw,
                    parsed,
                    attempts: attempt,
                })
            }
            Err(err) => {
                log::warn!("unparseable move reply (attempt {attempt}): {raw:?}");
                conversation.push(Message::assistant(raw));
                conversation.push(Message::user(prompts::retry_reminder()));
                last = Some(err);
            }
        }
    }
    Err(GatewayError::ParseExhausted {
        attempts: agent.max_retries,
        last: last.expect("at least one attempt ran"),
    })
}
