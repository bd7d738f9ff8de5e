//! Chat-completions HTTP client (`POST {endpoint}` with a message list,
//! `choices[0].message.content` back).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendReply, CompletionBackend, GenerationParams};
use crate::prompting::PromptInstance;

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    top_p: f64,
    frequency_penalty: f64,
    presence_penalty: f64,
    max_tokens: u32,
    n: u32,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

pub struct ChatApiBackend {
    endpoint: String,
    model_name: String,
    api_key: String,
    agent: ureq::Agent,
}

impl ChatApiBackend {
    pub fn new(endpoint: &str, model_name: &str, api_key: String, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            endpoint: endpoint.to_string(),
            model_name: model_name.to_string(),
            api_key,
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl CompletionBackend for ChatApiBackend {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn send(
        &self,
        prompt: &PromptInstance,
        params: &GenerationParams,
    ) -> Result<BackendReply, BackendError> {
        let body = ChatRequest {
            model: &self.model_name,
            messages: vec![ChatMessage {
                role: "user",
                content: &prompt.rendered_text,
            }],
            temperature: params.temperature,
            top_p: params.top_p,
            frequency_penalty: params.frequency_penalty,
            presence_penalty: params.presence_penalty,
            max_tokens: params.max_tokens,
            n: 1,
        };
        let started = Instant::now();
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| BackendError::Transient(format!("request failed: {e}")))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transient(format!("reading body: {e}")))?;
        let latency_ms = started.elapsed().as_millis() as u64;

        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}: {text}"))),
            408 | 409 | 429 | 500..=599 => {
                return Err(BackendError::Transient(format!("HTTP {status}: {text}")))
            }
            _ => return Err(BackendError::Fatal(format!("HTTP {status}: {text}"))),
        }

        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("malformed response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Fatal("response has no choices".to_string()))?;
        let usage = parsed.usage.unwrap_or(Usage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(BackendReply {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            latency_ms,
        })
    }
}
