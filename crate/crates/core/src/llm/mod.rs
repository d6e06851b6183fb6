//! Uniform access to a locally served LLM for chat completion and embeddings.
//!
//! Two backends implement [`LlmGateway`]:
//! - [`OllamaGateway`] speaks the Ollama HTTP protocol (`/api/chat`,
//!   `/api/embeddings`, `/api/tags`).
//! - [`ScriptedGateway`] answers from a fixed script keyed on request tags and
//!   embeds text with [`hash_embedding`], so meetings are reproducible without
//!   a model.

mod capture;
mod ollama;
mod scripted;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use capture::CapturingGateway;
pub use ollama::{OllamaConfig, OllamaGateway, RetryPolicy, DEFAULT_LLM_URL};
pub use scripted::{Script, ScriptRule, ScriptedGateway, DEFAULT_SCRIPTED_DIM};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend configuration error: {0}")]
    Configuration(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("scripted backend: {0}")]
    Scripted(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

/// What a chat request is for. The scripted backend matches on this; the live
/// backend ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Guidance,
    Expert,
    Critique,
    Synthesis,
    Reformat,
    FinalSummary,
    Warmup,
}

impl TurnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TurnKind::Guidance => "guidance",
            TurnKind::Expert => "expert",
            TurnKind::Critique => "critique",
            TurnKind::Synthesis => "synthesis",
            TurnKind::Reformat => "reformat",
            TurnKind::FinalSummary => "final_summary",
            TurnKind::Warmup => "warmup",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    pub kind: TurnKind,
    pub speaker: String,
    /// Round index, or batch index for warm-up requests; 0 when neither applies.
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_output_chars: usize,
    pub timeout: Duration,
    pub tag: RequestTag,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.trim().is_empty() {
            return Err(GatewayError::Validation("model must not be empty".into()));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::Validation("messages must not be empty".into()));
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.is_empty()) {
            return Err(GatewayError::Validation(format!("message {i} has empty content")));
        }
        if self.messages[1..].iter().any(|m| m.role == ChatRole::System) {
            return Err(GatewayError::Validation(
                "only the first message may be a system message".into(),
            ));
        }
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            return Err(GatewayError::Validation(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_chars == 0 {
            return Err(GatewayError::Validation("max_output_chars must be positive".into()));
        }
        Ok(())
    }

    /// Concatenated message contents, for containment checks.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Rejects empty or non-finite vectors.
    pub fn new(values: Vec<f32>) -> Result<Self, GatewayError> {
        if values.is_empty() {
            return Err(GatewayError::Protocol("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::Protocol("embedding contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendStatus {
    pub name: String,
    pub models: Vec<String>,
    pub reachable: bool,
    /// Set when the backend is reachable but does not list the configured model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub trait LlmGateway: Send + Sync {
    /// Returns a non-empty completion, truncated to `max_output_chars`.
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError>;

    /// One vector per input text, same order, uniform dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;

    /// Never fails; an unreachable backend reports `reachable = false`.
    fn health_check(&self) -> BackendStatus;
}

impl<G: LlmGateway + ?Sized> LlmGateway for std::sync::Arc<G> {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).chat(request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        (**self).embed(texts)
    }

    fn health_check(&self) -> BackendStatus {
        (**self).health_check()
    }
}

impl fmt::Debug for dyn LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LlmGateway")
    }
}

pub(crate) fn validate_embed_input(texts: &[String]) -> Result<(), GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::Validation("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(GatewayError::Validation(format!("text {i} is empty")));
    }
    Ok(())
}

pub(crate) fn finish_completion(text: String, max_chars: usize) -> Result<String, GatewayError> {
    if text.trim().is_empty() {
        return Err(GatewayError::Protocol("empty completion".into()));
    }
    Ok(match text.char_indices().nth(max_chars) {
        Some((cut, _)) => text[..cut].to_owned(),
        None => text,
    })
}

/// Deterministic feature-hashing embedding used by the scripted backend.
///
/// The text is split into lowercase alphanumeric tokens (the whole text is
/// used as a single token when it has none). For each token in order, with
/// `h = SHA-256(token)`:
///
/// - index  = `u64::from_le_bytes(h[0..8]) % dim`
/// - sign   = `+1` if `h[8]` is even, else `-1`
/// - weight = `1 + h[9] / 255`
///
/// and `vector[index] += sign * weight`, accumulated in `f32`.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        tokens.push(text.to_owned());
    }

    let mut vector = vec![0f32; dim];
    for token in &tokens {
        let digest = Sha256::digest(token.as_bytes());
        let index = (u64::from_le_bytes(digest[0..8].try_into().unwrap()) % dim as u64) as usize;
        let sign = if digest[8] % 2 == 0 { 1.0f32 } else { -1.0 };
        let weight = 1.0f32 + f32::from(digest[9]) / 255.0;
        vector[index] += sign * weight;
    }
    vector
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: "llama3.1".into(),
            messages,
            temperature: 0.2,
            max_output_chars: 100,
            timeout: Duration::from_secs(1),
            tag: RequestTag {
                kind: TurnKind::Guidance,
                speaker: "Coordinator".into(),
                round: 1,
            },
        }
    }

    #[test]
    fn empty_messages_fail_validation() {
        assert!(matches!(request(vec![]).validate(), Err(GatewayError::Validation(_))));
    }

    #[test]
    fn system_message_only_first() {
        let r = request(vec![ChatMessage::user("u"), ChatMessage::system("s")]);
        assert!(r.validate().is_err());
        let r = request(vec![ChatMessage::system("s"), ChatMessage::user("u")]);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn temperature_bounds() {
        let mut r = request(vec![ChatMessage::user("u")]);
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        r.temperature = f32::NAN;
        assert!(r.validate().is_err());
    }

    #[test]
    fn completion_truncation_respects_char_boundaries() {
        assert_eq!(finish_completion("héllo".into(), 2).unwrap(), "hé");
        assert_eq!(finish_completion("hi".into(), 10).unwrap(), "hi");
        assert!(finish_completion("  ".into(), 10).is_err());
    }

    #[test]
    fn hash_embedding_of_punctuation_is_nonzero() {
        let v = hash_embedding("?!", 8);
        assert!(v.iter().any(|x| *x != 0.0));
    }

    #[test]
    fn hash_embedding_ignores_case_and_punctuation() {
        assert_eq!(hash_embedding("Hello, world", 16), hash_embedding("hello world", 16));
    }
}
