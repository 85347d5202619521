//! Completion backends: live HTTP, cassette replay, and write-through
//! recording.

use super::cassette::{Cassette, CassetteEntry, CassetteWriter};
use super::{GatewayError, Request};
use std::path::Path;
use std::time::Duration;

pub trait Backend: Send + Sync {
    fn complete(&self, request: &Request) -> Result<String, GatewayError>;
}

/// Serves responses from a cassette and never touches the network: an absent
/// digest is a hard error.
pub struct ReplayBackend {
    cassette: Cassette,
}

impl ReplayBackend {
    pub fn new(cassette: Cassette) -> ReplayBackend {
        ReplayBackend { cassette }
    }

    pub fn from_path(path: &Path) -> Result<ReplayBackend, GatewayError> {
        Ok(ReplayBackend { cassette: Cassette::load(path)? })
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &Request) -> Result<String, GatewayError> {
        match self.cassette.get(&request.digest) {
            Some(response) => Ok(response.to_string()),
            None => Err(GatewayError::CassetteMiss {
                digest: request.digest.clone(),
                template: request.template_id.as_str().to_string(),
            }),
        }
    }
}

/// Delegates to an inner backend and appends every successful completion to a
/// cassette file.
pub struct RecordBackend {
    inner: Box<dyn Backend>,
    writer: CassetteWriter,
}

impl RecordBackend {
    pub fn new(inner: Box<dyn Backend>, writer: CassetteWriter) -> RecordBackend {
        RecordBackend { inner, writer }
    }
}

impl Backend for RecordBackend {
    fn complete(&self, request: &Request) -> Result<String, GatewayError> {
        let response = self.inner.complete(request)?;
        self.writer.append(CassetteEntry {
            digest: request.digest.clone(),
            template_id: request.template_id.as_str().to_string(),
            prompt: request.prompt.clone(),
            params: request.params.clone(),
            response: response.clone(),
            recorded_at: None,
        })?;
        Ok(response)
    }
}

/// An OpenAI-compatible chat-completions client. Transport failures and
/// throttling are retried with exponential backoff; well-formed model
/// responses are never retried.
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    max_attempts: u32,
}

pub const API_KEY_VAR: &str = "POS_API_KEY";
pub const API_BASE_VAR: &str = "POS_API_BASE";
const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

impl HttpBackend {
    pub fn new(base_url: &str, api_key: &str) -> Result<HttpBackend, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| GatewayError::Backend(format!("http client: {e}")))?;
        Ok(HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            client,
            max_attempts: 3,
        })
    }

    /// Builds a backend from `POS_API_KEY` and `POS_API_BASE`.
    pub fn from_env() -> Result<HttpBackend, GatewayError> {
        let api_key = std::env::var(API_KEY_VAR)
            .map_err(|_| GatewayError::Backend(format!("{API_KEY_VAR} is not set")))?;
        let base =
            std::env::var(API_BASE_VAR).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        HttpBackend::new(&base, &api_key)
    }

    fn attempt(&self, request: &Request) -> Result<Result<String, String>, String> {
        // Outer Err: retryable transport problem. Inner Err: permanent.
        let url = format!("{}/chat/completions", self.base_url);
        let body = serde_json::json!({
            "model": request.params.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_tokens,
        });
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| format!("request: {e}"))?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(format!("status {status}"));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Ok(Err(format!("status {status}: {text}")));
        }
        let parsed: serde_json::Value =
            response.json().map_err(|e| format!("body: {e}"))?;
        match parsed["choices"][0]["message"]["content"].as_str() {
            Some(content) => Ok(Ok(content.to_string())),
            None => Ok(Err(format!("malformed completion payload: {parsed}"))),
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &Request) -> Result<String, GatewayError> {
        let mut last = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 * (1 << attempt)));
            }
            match self.attempt(request) {
                Ok(Ok(content)) => return Ok(content),
                Ok(Err(permanent)) => return Err(GatewayError::Backend(permanent)),
                Err(transient) => last = transient,
            }
        }
        Err(GatewayError::Backend(format!(
            "gave up after {} attempts: {last}",
            self.max_attempts
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{request_digest, CompletionParams, TemplateId};
    use super::*;
    use tempfile::tempdir;

    fn request(prompt: &str) -> Request {
        let params = CompletionParams::default();
        Request {
            template_id: TemplateId::PlanFull,
            prompt: prompt.to_string(),
            params: params.clone(),
            digest: request_digest(TemplateId::PlanFull, prompt, &params),
        }
    }

    struct Fixed(&'static str);
    impl Backend for Fixed {
        fn complete(&self, _request: &Request) -> Result<String, GatewayError> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn replay_misses_are_errors_not_fallthrough() {
        let backend = ReplayBackend::new(Cassette::default());
        let err = backend.complete(&request("anything")).unwrap_err();
        match err {
            GatewayError::CassetteMiss { template, .. } => assert_eq!(template, "plan_full"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recorder =
            RecordBackend::new(Box::new(Fixed("the plan")), CassetteWriter::create(&path, false).unwrap());
        assert_eq!(recorder.complete(&request("p1")).unwrap(), "the plan");
        drop(recorder);
        let replay = ReplayBackend::from_path(&path).unwrap();
        assert_eq!(replay.complete(&request("p1")).unwrap(), "the plan");
        assert!(replay.complete(&request("p2")).is_err());
    }
}
