use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    finish_completion, hash_embedding, validate_embed_input, BackendStatus, ChatRequest, EmbeddingVector,
    GatewayError, LlmGateway, TurnKind,
};

pub const DEFAULT_SCRIPTED_DIM: usize = 64;

/// One script entry. Every matcher that is set must hold for the rule to
/// apply; the first applicable rule wins.
///
/// `response` may contain `{speaker}`, `{round}` and `{kind}` placeholders,
/// which are filled from the request tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TurnKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    /// Substring that must occur somewhere in the request messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default)]
    pub response: String,
    /// When set, the rule answers with a backend error carrying this text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptRule {
    pub fn reply(kind: TurnKind, response: impl Into<String>) -> Self {
        Self {
            kind: Some(kind),
            speaker: None,
            round: None,
            contains: None,
            response: response.into(),
            error: None,
        }
    }

    pub fn for_speaker(mut self, speaker: impl Into<String>) -> Self {
        self.speaker = Some(speaker.into());
        self
    }

    pub fn in_round(mut self, round: u32) -> Self {
        self.round = Some(round);
        self
    }

    pub fn when_contains(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    pub fn fail(kind: TurnKind, message: impl Into<String>) -> Self {
        Self {
            error: Some(message.into()),
            ..Self::reply(kind, "")
        }
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        let tag = &request.tag;
        self.kind.is_none_or(|k| k == tag.kind)
            && self.speaker.as_deref().is_none_or(|s| s == tag.speaker)
            && self.round.is_none_or(|r| r == tag.round)
            && self
                .contains
                .as_deref()
                .is_none_or(|needle| request.messages.iter().any(|m| m.content.contains(needle)))
    }

    fn render(&self, request: &ChatRequest) -> String {
        self.response
            .replace("{speaker}", &request.tag.speaker)
            .replace("{round}", &request.tag.round.to_string())
            .replace("{kind}", request.tag.kind.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Script {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            embedding_dim: None,
            rules,
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Configuration(format!("cannot read script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Configuration(format!("invalid script {}: {e}", path.display())))
    }

    /// Places `rules` ahead of the existing ones so they take precedence.
    pub fn with_overrides(mut self, rules: Vec<ScriptRule>) -> Self {
        let mut merged = rules;
        merged.append(&mut self.rules);
        self.rules = merged;
        self
    }

    /// A generic script that answers every request kind the engine issues.
    pub fn standard() -> Self {
        Self::new(vec![
            ScriptRule::reply(
                TurnKind::Guidance,
                "Round {round} guidance: each expert should address the agenda from their own discipline, \
                 name one concrete proposal and one open risk, and build on the contributions made before theirs.",
            ),
            ScriptRule::reply(
                TurnKind::Expert,
                "{speaker} (round {round}): my proposal is to fix the interface contract between our \
                 subsystems first and to measure its cost before scaling out. The open risk from my side \
                 is that the current plan leaves performance budgets unstated.",
            ),
            ScriptRule::reply(
                TurnKind::Critique,
                "Critique for round {round}: the proposals assume the interface contract is stable without \
                 evidence, and none of them quantifies the performance budget. Focus topic: performance budgets.",
            ),
            ScriptRule::reply(TurnKind::Synthesis, STANDARD_SYNTHESIS),
            ScriptRule::reply(TurnKind::Reformat, STANDARD_SYNTHESIS),
            ScriptRule::reply(
                TurnKind::FinalSummary,
                "Final summary: the team agreed to settle the interface contract first, to put explicit \
                 performance budgets on every subsystem, and to revisit the open follow-up questions in the \
                 next meeting.",
            ),
            ScriptRule::reply(
                TurnKind::Warmup,
                "{speaker} notes from batch {round}: key concepts, terminology and context extracted from the \
                 assigned knowledge base excerpts.",
            ),
        ])
    }
}

const STANDARD_SYNTHESIS: &str = "SYNTHESIS:\n\
Round {round} converged on settling the interface contract before scaling, while the critique showed that \
performance budgets remain unquantified.\n\
\n\
FOLLOW-UP QUESTIONS:\n\
1. What performance budget should each subsystem commit to after round {round}?\n\
2. Which evidence would show that the interface contract is stable?\n";

/// Deterministic gateway answering from a [`Script`].
#[derive(Debug, Clone)]
pub struct ScriptedGateway {
    script: Script,
    dim: usize,
}

impl ScriptedGateway {
    pub fn new(script: Script) -> Self {
        let dim = script.embedding_dim.unwrap_or(DEFAULT_SCRIPTED_DIM);
        Self { script, dim }
    }

    pub fn standard() -> Self {
        Self::new(Script::standard())
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        self.dim = dim;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl LlmGateway for ScriptedGateway {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let rule = self.script.rules.iter().find(|r| r.matches(request)).ok_or_else(|| {
            GatewayError::Scripted(format!(
                "no rule for {} by `{}` in round {}",
                request.tag.kind.as_str(),
                request.tag.speaker,
                request.tag.round
            ))
        })?;
        if let Some(message) = &rule.error {
            return Err(GatewayError::Scripted(message.clone()));
        }
        finish_completion(rule.render(request), request.max_output_chars)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        validate_embed_input(texts)?;
        texts
            .iter()
            .map(|t| EmbeddingVector::new(hash_embedding(t, self.dim)))
            .collect()
    }

    fn health_check(&self) -> BackendStatus {
        BackendStatus {
            name: "scripted".into(),
            models: vec!["scripted".into()],
            reachable: true,
            warning: None,
        }
    }
}
