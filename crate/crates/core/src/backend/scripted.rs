//! Replays canned answers keyed by the prompt's query text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{same_answer, Backend, BackendError, GenConfig, Generation, TokenLogprob};
use crate::probegen::PromptText;

/// Scripted stub. Lookups use the filled query (not the full prompt), so one
/// script serves zero-shot and k-shot runs alike.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedBackend {
    pub completions: HashMap<String, String>,
    pub default_completion: Option<String>,
    /// Next-token probabilities per query.
    pub distributions: HashMap<String, Vec<(String, f64)>>,
    pub default_distribution: Option<Vec<(String, f64)>>,
    /// Continuation log-probabilities per query, keyed by candidate text.
    pub continuation_logprobs: HashMap<String, HashMap<String, f64>>,
    /// Score for continuations missing from `continuation_logprobs`.
    pub default_logprob: f64,
}

impl ScriptedBackend {
    pub fn with_completion(mut self, query: &str, text: &str) -> Self {
        self.completions.insert(query.to_owned(), text.to_owned());
        self
    }

    pub fn with_distribution(mut self, query: &str, dist: &[(&str, f64)]) -> Self {
        self.distributions
            .insert(query.to_owned(), dist.iter().map(|(t, p)| ((*t).to_owned(), *p)).collect());
        self
    }

    fn query(prompt: &PromptText) -> &str {
        prompt.query.trim()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn generate(&self, prompt: &PromptText, cfg: &GenConfig) -> Result<Generation, BackendError> {
        let q = Self::query(prompt);
        let text = self
            .completions
            .get(q)
            .or(self.default_completion.as_ref())
            .cloned()
            .ok_or_else(|| BackendError::InvalidRequest(format!("no scripted completion for `{q}`")))?;
        let first_token = if cfg.top_logprobs > 0 {
            self.next_token_logprobs(prompt, cfg.top_logprobs, cfg).ok()
        } else {
            None
        };
        Ok(Generation { text, first_token })
    }

    fn continuation_logprob(
        &self,
        prompt: &PromptText,
        continuation: &str,
        _cfg: &GenConfig,
    ) -> Result<f64, BackendError> {
        let scores = self.continuation_logprobs.get(Self::query(prompt));
        Ok(scores
            .and_then(|m| m.iter().find(|(c, _)| same_answer(c, continuation)).map(|(_, s)| *s))
            .unwrap_or(self.default_logprob))
    }

    fn next_token_logprobs(
        &self,
        prompt: &PromptText,
        k: usize,
        _cfg: &GenConfig,
    ) -> Result<Vec<TokenLogprob>, BackendError> {
        let dist = self
            .distributions
            .get(Self::query(prompt))
            .or(self.default_distribution.as_ref())
            .ok_or(BackendError::Unsupported("next-token log-probabilities for this query"))?;
        let mut out: Vec<TokenLogprob> = dist
            .iter()
            .map(|(token, p)| TokenLogprob {
                token: token.clone(),
                logprob: p.ln(),
            })
            .collect();
        out.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then_with(|| a.token.cmp(&b.token)));
        out.truncate(k);
        Ok(out)
    }
}
