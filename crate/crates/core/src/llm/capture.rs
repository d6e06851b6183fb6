use std::sync::Mutex;

use super::{BackendStatus, ChatRequest, EmbeddingVector, GatewayError, LlmGateway};

/// Wraps a gateway and records every chat request it forwards.
pub struct CapturingGateway<G> {
    inner: G,
    requests: Mutex<Vec<ChatRequest>>,
}

impl<G: LlmGateway> CapturingGateway<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("capture lock poisoned").clone()
    }

    pub fn clear(&self) {
        self.requests.lock().expect("capture lock poisoned").clear();
    }
}

impl<G: LlmGateway> LlmGateway for CapturingGateway<G> {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.requests
            .lock()
            .expect("capture lock poisoned")
            .push(request.clone());
        self.inner.chat(request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        self.inner.embed(texts)
    }

    fn health_check(&self) -> BackendStatus {
        self.inner.health_check()
    }
}
