//! The single doorway to language models: prompt templates, deterministic
//! request digests, live/record/replay backends, and call accounting.

pub mod backend;
pub mod cassette;
pub mod counters;
pub mod scripted;
pub mod templates;

pub use backend::{Backend, HttpBackend, RecordBackend, ReplayBackend};
pub use cassette::{Cassette, CassetteEntry, CassetteWriter};
pub use counters::{call_breakdown, CallCounters, CounterSnapshot};
pub use scripted::{ResponderBackend, Rule, ScriptedBackend};
pub use templates::{method_description, render_prompt, TemplateId, ALL_TEMPLATES};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("template {template}: unbound placeholder {placeholder:?}")]
    Template { template: &'static str, placeholder: String },
    #[error("replay cassette has no entry for digest {digest} (template {template})")]
    CassetteMiss { digest: String, template: String },
    #[error("cassette holds conflicting responses for digest {digest}")]
    CassetteConflict { digest: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoding parameters sent with every completion. Defaults are greedy:
/// temperature 0, top_p 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for CompletionParams {
    fn default() -> CompletionParams {
        CompletionParams {
            model_id: "gpt-4o-mini".into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }
}

/// A fully rendered request, ready for any backend.
#[derive(Debug, Clone)]
pub struct Request {
    pub template_id: TemplateId,
    pub prompt: String,
    pub params: CompletionParams,
    pub digest: String,
}

/// Content digest identifying a request: template id, decoding parameters,
/// and the rendered prompt.
pub fn request_digest(template_id: TemplateId, prompt: &str, params: &CompletionParams) -> String {
    let mut h = Sha256::new();
    h.update(template_id.as_str().as_bytes());
    h.update([0]);
    h.update(serde_json::to_string(params).expect("params serialize").as_bytes());
    h.update([0]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// Routes completions to a backend and counts every call.
pub struct Gateway {
    backend: Box<dyn Backend>,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>) -> Gateway {
        Gateway { backend }
    }

    pub fn complete(
        &self,
        template_id: TemplateId,
        prompt: &str,
        params: &CompletionParams,
        counters: &CallCounters,
    ) -> Result<String, GatewayError> {
        counters.record_llm(template_id);
        let request = Request {
            template_id,
            prompt: prompt.to_string(),
            params: params.clone(),
            digest: request_digest(template_id, prompt, params),
        };
        self.backend.complete(&request)
    }
}
