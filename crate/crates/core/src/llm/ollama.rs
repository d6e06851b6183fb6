//! Client for an Ollama-compatible local model server.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{
    finish_completion, validate_embed_input, BackendStatus, ChatMessage, ChatRequest, EmbeddingVector,
    GatewayError, LlmGateway,
};

pub const DEFAULT_LLM_URL: &str = "http://localhost:11434";

/// Waits between attempts; one more attempt is made than there are delays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![
                Duration::from_millis(250),
                Duration::from_secs(1),
                Duration::from_secs(4),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { backoff: Vec::new() }
    }

    fn run<T>(&self, what: &str, mut attempt: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut delays = self.backoff.iter();
        loop {
            match attempt() {
                Err(err) if err.is_transient() => match delays.next() {
                    Some(delay) => {
                        warn!(%err, ?delay, "{what} failed, retrying");
                        std::thread::sleep(*delay);
                    }
                    None => return Err(err),
                },
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct OllamaConfig {
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub retry: RetryPolicy,
    pub embed_timeout: Duration,
    pub health_timeout: Duration,
}

impl OllamaConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            embedding_model: model.clone(),
            chat_model: model,
            retry: RetryPolicy::default(),
            embed_timeout: Duration::from_secs(60),
            health_timeout: Duration::from_secs(3),
        }
    }
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    stream: bool,
    options: WireOptions,
}

#[derive(Serialize)]
struct WireOptions {
    temperature: f32,
}

#[derive(Deserialize)]
struct WireChatResponse {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Serialize)]
struct WireEmbeddingRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct WireEmbeddingResponse {
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct WireTags {
    #[serde(default)]
    models: Vec<WireModel>,
}

#[derive(Deserialize)]
struct WireModel {
    name: String,
}

#[derive(Deserialize)]
struct WireError {
    error: String,
}

pub struct OllamaGateway {
    config: OllamaConfig,
    agent: ureq::Agent,
}

impl OllamaGateway {
    pub fn new(config: OllamaConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &OllamaConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url, path)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
        timeout: Duration,
    ) -> Result<R, GatewayError> {
        let mut response = self
            .agent
            .post(&self.url(path))
            .config()
            .timeout_global(Some(timeout))
            .build()
            .send_json(body)
            .map_err(|e| transport_error(e, timeout))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| transport_error(e, timeout))?;
        debug!(path, status, bytes = text.len(), "llm response");
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| GatewayError::Protocol(format!("{path}: {e}"))),
            404 => Err(GatewayError::Configuration(error_message(&text, "model not found"))),
            400..=499 => Err(GatewayError::Configuration(error_message(&text, "request rejected"))),
            _ => Err(GatewayError::Transport(format!(
                "{path} returned {status}: {}",
                error_message(&text, "server error")
            ))),
        }
    }
}

fn error_message(body: &str, fallback: &str) -> String {
    serde_json::from_str::<WireError>(body)
        .map(|e| e.error)
        .unwrap_or_else(|_| fallback.to_owned())
}

fn transport_error(err: ureq::Error, timeout: Duration) -> GatewayError {
    match err {
        ureq::Error::Timeout(_) => GatewayError::Timeout(timeout),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => GatewayError::Timeout(timeout),
        ureq::Error::BadUri(uri) => GatewayError::Configuration(format!("bad backend url {uri}")),
        ureq::Error::Json(e) => GatewayError::Protocol(e.to_string()),
        other => GatewayError::Transport(other.to_string()),
    }
}

impl LlmGateway for OllamaGateway {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let body = WireChatRequest {
            model: &request.model,
            messages: &request.messages,
            stream: false,
            options: WireOptions {
                temperature: request.temperature,
            },
        };
        let response: WireChatResponse = self
            .config
            .retry
            .run("chat", || self.post("/api/chat", &body, request.timeout))?;
        finish_completion(response.message.content, request.max_output_chars)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        validate_embed_input(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for text in texts {
            let body = WireEmbeddingRequest {
                model: &self.config.embedding_model,
                prompt: text,
            };
            let response: WireEmbeddingResponse = self
                .config
                .retry
                .run("embed", || self.post("/api/embeddings", &body, self.config.embed_timeout))?;
            let vector = EmbeddingVector::new(response.embedding)?;
            if let Some(first) = out.first().map(EmbeddingVector::dim) {
                if vector.dim() != first {
                    return Err(GatewayError::Protocol(format!(
                        "embedding dimension changed from {first} to {}",
                        vector.dim()
                    )));
                }
            }
            out.push(vector);
        }
        Ok(out)
    }

    fn health_check(&self) -> BackendStatus {
        let unreachable = |detail: String| BackendStatus {
            name: self.config.base_url.clone(),
            models: Vec::new(),
            reachable: false,
            warning: Some(detail),
        };
        let result = self
            .agent
            .get(&self.url("/api/tags"))
            .config()
            .timeout_global(Some(self.config.health_timeout))
            .build()
            .call();
        let mut response = match result {
            Ok(r) if r.status().is_success() => r,
            Ok(r) => return unreachable(format!("model list returned {}", r.status())),
            Err(e) => return unreachable(e.to_string()),
        };
        let tags: WireTags = match response.body_mut().read_json() {
            Ok(t) => t,
            Err(e) => return unreachable(format!("unreadable model list: {e}")),
        };
        let models: Vec<String> = tags.models.into_iter().map(|m| m.name).collect();
        let wanted = &self.config.chat_model;
        let listed = models
            .iter()
            .any(|m| m == wanted || m.split(':').next() == Some(wanted.as_str()));
        BackendStatus {
            name: self.config.base_url.clone(),
            reachable: true,
            warning: (!listed).then(|| format!("model `{wanted}` is not installed on the server")),
            models,
        }
    }
}
