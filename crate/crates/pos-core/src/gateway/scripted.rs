//! Deterministic offline backends for tests and fixture generation: rule
//! tables matched against prompt content, and arbitrary responder functions.

use super::{Backend, GatewayError, Request, TemplateId};

/// A scripted response: fires when the request uses `template`, the prompt
/// contains every `requires` fragment, and none of the `forbids` fragments.
#[derive(Debug, Clone)]
pub struct Rule {
    pub template: TemplateId,
    pub requires: Vec<String>,
    pub forbids: Vec<String>,
    pub response: String,
}

impl Rule {
    pub fn new(template: TemplateId, requires: &[&str], forbids: &[&str], response: &str) -> Rule {
        Rule {
            template,
            requires: requires.iter().map(|s| s.to_string()).collect(),
            forbids: forbids.iter().map(|s| s.to_string()).collect(),
            response: response.to_string(),
        }
    }

    fn matches(&self, request: &Request) -> bool {
        self.template == request.template_id
            && self.requires.iter().all(|f| request.prompt.contains(f.as_str()))
            && !self.forbids.iter().any(|f| request.prompt.contains(f.as_str()))
    }
}

/// Answers from a fixed rule table; first matching rule wins. An unmatched
/// request is a hard error so scripts cannot silently drift out of sync with
/// the prompts they were written for.
pub struct ScriptedBackend {
    rules: Vec<Rule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<Rule>) -> ScriptedBackend {
        ScriptedBackend { rules }
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &Request) -> Result<String, GatewayError> {
        for rule in &self.rules {
            if rule.matches(request) {
                return Ok(rule.response.clone());
            }
        }
        let head: String = request.prompt.chars().take(160).collect();
        Err(GatewayError::Backend(format!(
            "no scripted response for {} request starting {head:?}",
            request.template_id.as_str()
        )))
    }
}

/// Wraps a function as a backend, for judges whose response depends on the
/// prompt in ways a static rule table cannot express.
pub struct ResponderBackend {
    respond: Box<dyn Fn(TemplateId, &str) -> Option<String> + Send + Sync>,
}

impl ResponderBackend {
    pub fn new<F>(respond: F) -> ResponderBackend
    where
        F: Fn(TemplateId, &str) -> Option<String> + Send + Sync + 'static,
    {
        ResponderBackend { respond: Box::new(respond) }
    }
}

impl Backend for ResponderBackend {
    fn complete(&self, request: &Request) -> Result<String, GatewayError> {
        (self.respond)(request.template_id, &request.prompt).ok_or_else(|| {
            GatewayError::Backend(format!(
                "responder declined a {} request",
                request.template_id.as_str()
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{request_digest, CompletionParams};
    use super::*;

    fn request(template: TemplateId, prompt: &str) -> Request {
        let params = CompletionParams::default();
        Request {
            template_id: template,
            prompt: prompt.to_string(),
            params: params.clone(),
            digest: request_digest(template, prompt, &params),
        }
    }

    #[test]
    fn first_matching_rule_wins_and_forbids_exclude() {
        let backend = ScriptedBackend::new(vec![
            Rule::new(TemplateId::PlanNextStep, &["Statement: s"], &["1. step one"], "1. step one"),
            Rule::new(TemplateId::PlanNextStep, &["Statement: s", "1. step one"], &[], "DONE"),
        ]);
        let first = backend
            .complete(&request(TemplateId::PlanNextStep, "Statement: s\nPrevious steps:\n(none)"))
            .unwrap();
        assert_eq!(first, "1. step one");
        let second = backend
            .complete(&request(TemplateId::PlanNextStep, "Statement: s\nPrevious steps:\n1. step one"))
            .unwrap();
        assert_eq!(second, "DONE");
        assert!(backend.complete(&request(TemplateId::StepToSql, "Statement: s")).is_err());
    }

    #[test]
    fn responder_backend_can_compute_from_the_prompt() {
        let backend = ResponderBackend::new(|template, prompt| {
            (template == TemplateId::JudgeSimulation)
                .then(|| if prompt.contains("holds") { "TRUE" } else { "FALSE" }.to_string())
        });
        let t = backend
            .complete(&request(TemplateId::JudgeSimulation, "the statement holds"))
            .unwrap();
        assert_eq!(t, "TRUE");
    }
}
