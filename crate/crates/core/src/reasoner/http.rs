//! OpenAI-compatible chat-completions client with retry.
//!
//! Credentials come only from the environment (`REASONER_API_KEY`, optional
//! `REASONER_BASE_URL`); they never appear in config files, logs, or debug
//! output.

use serde::Deserialize;
use serde_json::json;
use std::fmt;
use std::time::{Duration, Instant};

use crate::monitor::Role;

use super::{estimate_tokens_for_chars, Reasoner, ReasonerError, ReasonerRequest, ReasonerResponse};

pub const ENV_API_KEY: &str = "REASONER_API_KEY";
pub const ENV_BASE_URL: &str = "REASONER_BASE_URL";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Transient failures retry with exponential backoff: `base_delay`, then
/// doubling, for up to `max_retries` extra attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_secs(1) }
    }
}

#[derive(Clone)]
pub struct HttpBackend {
    base_url: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .field("retry", &self.retry)
            .finish()
    }
}

impl HttpBackend {
    pub fn from_env(base_url: Option<String>, model: String) -> Result<Self, ReasonerError> {
        let api_key = std::env::var(ENV_API_KEY).map_err(|_| ReasonerError::MissingEnv(ENV_API_KEY))?;
        let base_url = base_url
            .or_else(|| std::env::var(ENV_BASE_URL).ok())
            .unwrap_or_else(|| DEFAULT_BASE_URL.to_string());
        Ok(Self::with_credentials(base_url, model, api_key))
    }

    pub fn with_credentials(base_url: String, model: String, api_key: String) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("client construction with static options");
        Self { base_url, model, api_key, client, retry: RetryPolicy::default() }
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &ReasonerRequest) -> serde_json::Value {
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                    Role::System | Role::Feedback => "system",
                };
                json!({ "role": role, "content": m.content })
            })
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
        })
    }
}

#[derive(Deserialize)]
struct ChatCompletionBody {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl Reasoner for HttpBackend {
    fn complete(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        let url = self.endpoint();
        let body = self.body(request);
        let start = Instant::now();

        let mut attempt: u32 = 0;
        loop {
            let outcome = self
                .client
                .post(&url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();

            let retriable_detail = match outcome {
                Err(e) => format!("transport: {e}"),
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let parsed: ChatCompletionBody =
                            response.json().map_err(|e| ReasonerError::Protocol {
                                detail: format!("could not decode completion body: {e}"),
                            })?;
                        let choice = parsed.choices.into_iter().next().ok_or(
                            ReasonerError::Protocol { detail: "no choices in response".into() },
                        )?;
                        let text = choice.message.content.ok_or(ReasonerError::Protocol {
                            detail: "choice carries no message content".into(),
                        })?;
                        let usage = parsed.usage.unwrap_or(ChatUsage {
                            prompt_tokens: None,
                            completion_tokens: None,
                        });
                        let input_tokens = usage
                            .prompt_tokens
                            .unwrap_or_else(|| estimate_tokens_for_chars(request.prompt_chars()));
                        let output_tokens = usage.completion_tokens.unwrap_or_else(|| {
                            estimate_tokens_for_chars(text.chars().count() as u64)
                        });
                        return Ok(ReasonerResponse {
                            text,
                            input_tokens,
                            output_tokens,
                            latency_s: start.elapsed().as_secs_f64(),
                        });
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        format!("status {status}")
                    } else {
                        let text = response.text().unwrap_or_default();
                        let snippet: String = text.chars().take(240).collect();
                        return Err(ReasonerError::Protocol {
                            detail: format!("status {status}: {snippet}"),
                        });
                    }
                }
            };

            attempt += 1;
            if attempt > self.retry.max_retries {
                return Err(ReasonerError::Network { attempts: attempt, detail: retriable_detail });
            }
            let delay = self.retry.base_delay * 2u32.saturating_pow(attempt - 1);
            std::thread::sleep(delay);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_never_leaks_the_api_key() {
        let backend = HttpBackend::with_credentials(
            "http://localhost:1".into(),
            "test-model".into(),
            "sk-very-secret".into(),
        );
        let rendered = format!("{backend:?}");
        assert!(!rendered.contains("sk-very-secret"));
        assert!(rendered.contains("<redacted>"));
    }

    #[test]
    fn endpoint_joins_cleanly() {
        let backend = HttpBackend::with_credentials(
            "http://host/v1/".into(),
            "m".into(),
            "k".into(),
        );
        assert_eq!(backend.endpoint(), "http://host/v1/chat/completions");
    }
}
