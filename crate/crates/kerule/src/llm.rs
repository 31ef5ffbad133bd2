//! Mutation provider backed by an HTTP language-model endpoint.

use std::time::Duration;

use kerule_core::evolve::{build_prompt, extract_candidates, MutationProvider, ProviderError};
use kerule_core::rng::Rng;
use kerule_core::ruledsl::{self, validate, RuleProgram};
use serde::{Deserialize, Serialize};

pub const URL_VAR: &str = "KE_LLM_URL";
pub const TOKEN_VAR: &str = "KE_LLM_TOKEN";

#[derive(Debug, Serialize)]
struct Request<'a> {
    prompt: &'a str,
    n: usize,
    max_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct Response {
    candidates: Vec<String>,
}

/// POSTs `{prompt, n, max_tokens}` and expects `{candidates: [string]}`.
/// Each candidate is either a bare program or text with fenced blocks.
#[derive(Debug, Clone)]
pub struct LlmProvider {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub max_tokens: usize,
}

impl LlmProvider {
    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        LlmProvider { url: url.into(), token, timeout, max_tokens: 4096 }
    }

    /// Endpoint and token from the environment; `None` without a URL.
    pub fn from_env(timeout: Duration) -> Option<Self> {
        let url = std::env::var(URL_VAR).ok().filter(|u| !u.is_empty())?;
        let token = std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty());
        Some(LlmProvider::new(url, token, timeout))
    }

    fn request(&self, prompt: &str, n: usize) -> Result<Vec<String>, ProviderError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut req = agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let body = Request { prompt, n, max_tokens: self.max_tokens };
        let mut resp = req.send_json(&body).map_err(transport)?;
        let parsed: Response = resp.body_mut().read_json().map_err(transport)?;
        Ok(parsed.candidates)
    }
}

fn transport(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::StatusCode(s) => ProviderError::Transport(s),
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout,
        other => {
            log::warn!("llm request failed: {other}");
            ProviderError::Transport(0)
        }
    }
}

fn programs_in(text: &str) -> Vec<RuleProgram> {
    let fenced = extract_candidates(text);
    if !fenced.is_empty() {
        return fenced.into_iter().filter_map(Result::ok).collect();
    }
    match ruledsl::parse(text) {
        Ok(p) if validate(&p).ok => vec![p],
        _ => Vec::new(),
    }
}

impl MutationProvider for LlmProvider {
    fn name(&self) -> &str {
        "llm"
    }

    fn propose(&self, problem: &str, parents: &[RuleProgram], count: usize, _rng: &mut Rng) -> Result<Vec<RuleProgram>, ProviderError> {
        let prompt = build_prompt(problem, parents);
        let texts = self.request(&prompt, count)?;
        let mut out: Vec<RuleProgram> = texts.iter().flat_map(|t| programs_in(t)).collect();
        out.truncate(count);
        if out.is_empty() {
            return Err(ProviderError::NoValidCandidates);
        }
        Ok(out)
    }
}
