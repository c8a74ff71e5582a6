//! Text-completion backends.
//!
//! [`Backend`] is the only way the harness sees a model. Three
//! implementations ship with the crate: an OpenAI-compatible HTTP client,
//! a corpus-driven oracle simulator with controllable error behaviour, and a
//! scripted stub that replays canned answers. Closed-vocabulary answering is
//! implemented on top of any backend by scoring each candidate continuation.

mod http;
mod oracle;
mod scripted;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use oracle::{ErrorModel, InconsistencyMode, OracleBackend, OracleConfig};
pub use scripted::ScriptedBackend;

use serde::{Deserialize, Serialize};

use crate::corpus::CandidateSet;
use crate::probegen::PromptText;
use crate::text::{approx_tokens, normalize, normalized_key};

pub const MAX_SEQUENCE_TOKENS: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint reply: {0}")]
    Malformed(String),
    #[error("token budget exceeded: ~{prompt} prompt tokens + {completion} new tokens > {limit}")]
    TokenBudget {
        prompt: usize,
        completion: usize,
        limit: usize,
    },
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Generation parameters. Decoding is always greedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub max_new_tokens: usize,
    /// Upper bound on prompt plus completion, in whitespace tokens.
    pub max_sequence_tokens: usize,
    /// Number of next-token alternatives to request with a completion.
    pub top_logprobs: usize,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_new_tokens: 16,
            max_sequence_tokens: MAX_SEQUENCE_TOKENS,
            top_logprobs: 0,
            timeout_secs: 30.0,
            max_retries: 2,
            retry_backoff_ms: 200,
        }
    }
}

impl GenConfig {
    pub fn check_budget(&self, prompt: &PromptText) -> Result<(), BackendError> {
        let prompt_tokens = approx_tokens(&prompt.full_text);
        if prompt_tokens + self.max_new_tokens > self.max_sequence_tokens {
            return Err(BackendError::TokenBudget {
                prompt: prompt_tokens,
                completion: self.max_new_tokens,
                limit: self.max_sequence_tokens,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Raw output of a backend before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub first_token: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    pub normalized: Vec<String>,
    pub first_token_dist: Option<Vec<TokenLogprob>>,
}

impl ModelResponse {
    pub fn from_text(raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        ModelResponse {
            normalized: normalize_output(&raw_text),
            raw_text,
            first_token_dist: None,
        }
    }
}

/// Post-processing applied to every completion before scoring.
pub fn normalize_output(raw_text: &str) -> Vec<String> {
    normalize(raw_text)
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    /// Greedy continuation of `prompt`.
    fn generate(&self, prompt: &PromptText, cfg: &GenConfig) -> Result<Generation, BackendError>;

    /// Total log-probability of `continuation` directly after the prompt.
    fn continuation_logprob(
        &self,
        _prompt: &PromptText,
        _continuation: &str,
        _cfg: &GenConfig,
    ) -> Result<f64, BackendError> {
        Err(BackendError::Unsupported("continuation scoring"))
    }

    /// Up to `k` most likely next tokens with their log-probabilities.
    fn next_token_logprobs(
        &self,
        _prompt: &PromptText,
        _k: usize,
        _cfg: &GenConfig,
    ) -> Result<Vec<TokenLogprob>, BackendError> {
        Err(BackendError::Unsupported("next-token log-probabilities"))
    }

    fn complete(&self, prompt: &PromptText, cfg: &GenConfig) -> Result<ModelResponse, BackendError> {
        cfg.check_budget(prompt)?;
        let generation = self.generate(prompt, cfg)?;
        if let Some(dist) = &generation.first_token {
            validate_logprobs(dist)?;
        }
        Ok(ModelResponse {
            normalized: normalize_output(&generation.text),
            raw_text: generation.text,
            first_token_dist: generation.first_token,
        })
    }
}

fn validate_logprobs(dist: &[TokenLogprob]) -> Result<(), BackendError> {
    match dist.iter().find(|t| t.logprob.is_nan() || t.logprob > 0.0) {
        Some(bad) => Err(BackendError::Malformed(format!(
            "log-probability {} for token `{}`",
            bad.logprob, bad.token
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringOptions {
    /// Divide each candidate's log-probability by its word count.
    pub length_normalize: bool,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        ScoringOptions { length_normalize: true }
    }
}

/// Scores every candidate as a continuation of the prompt and returns
/// `(normalized candidate, score)` best first. Ties break lexicographically.
pub fn score_candidates(
    backend: &dyn Backend,
    prompt: &PromptText,
    candidates: &CandidateSet,
    opts: ScoringOptions,
    cfg: &GenConfig,
) -> Result<Vec<(String, f64)>, BackendError> {
    if candidates.is_empty() {
        return Err(BackendError::InvalidRequest("empty candidate set".into()));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for (name, surface) in &candidates.members {
        let total = backend.continuation_logprob(prompt, &format!(" {surface}"), cfg)?;
        if !total.is_finite() {
            return Err(BackendError::Malformed(format!("non-finite score for `{name}`")));
        }
        let score = if opts.length_normalize {
            total / normalize(surface).len().max(1) as f64
        } else {
            total
        };
        scored.push((name.clone(), score));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}

/// Top-`k` next-token probabilities, sorted descending.
pub fn first_token_distribution(
    backend: &dyn Backend,
    prompt: &PromptText,
    k: usize,
    cfg: &GenConfig,
) -> Result<Vec<(String, f64)>, BackendError> {
    if k == 0 {
        return Err(BackendError::InvalidRequest("top-k must be at least 1".into()));
    }
    let lps = backend.next_token_logprobs(prompt, k, cfg)?;
    validate_logprobs(&lps)?;
    let mut dist: Vec<(String, f64)> = lps.into_iter().map(|t| (t.token, t.logprob.exp())).collect();
    dist.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    dist.truncate(k);
    Ok(dist)
}

/// Exact-match helper shared by the simulators.
pub(crate) fn same_answer(a: &str, b: &str) -> bool {
    normalized_key(a) == normalized_key(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::mini_fixture;
    use proptest::prelude::*;

    struct Uniform;

    impl Backend for Uniform {
        fn name(&self) -> &str {
            "uniform"
        }
        fn generate(&self, _: &PromptText, _: &GenConfig) -> Result<Generation, BackendError> {
            Ok(Generation {
                text: String::new(),
                first_token: None,
            })
        }
        fn continuation_logprob(&self, _: &PromptText, c: &str, _: &GenConfig) -> Result<f64, BackendError> {
            Ok(-2.0 * normalize(c).len() as f64)
        }
    }

    struct NoScores;

    impl Backend for NoScores {
        fn name(&self) -> &str {
            "none"
        }
        fn generate(&self, _: &PromptText, _: &GenConfig) -> Result<Generation, BackendError> {
            Ok(Generation {
                text: "The Meteora. extra".into(),
                first_token: Some(vec![TokenLogprob {
                    token: "x".into(),
                    logprob: 0.3,
                }]),
            })
        }
    }

    fn prompt() -> PromptText {
        PromptText::zero_shot("", "Hybrid Theory was released by Linkin Park just before")
    }

    #[test]
    fn uniform_scores_break_ties_lexicographically() {
        let set = mini_fixture().candidate_set("best-picture-win").unwrap();
        let ranked = score_candidates(&Uniform, &prompt(), &set, ScoringOptions::default(), &GenConfig::default())
            .unwrap();
        let names: Vec<&str> = ranked.iter().map(|(n, _)| n.as_str()).collect();
        // all length-normalized to -2.0
        assert_eq!(names, vec!["departed", "hurt locker", "no country for old men", "slumdog millionaire"]);

        let raw = score_candidates(
            &Uniform,
            &prompt(),
            &set,
            ScoringOptions { length_normalize: false },
            &GenConfig::default(),
        )
        .unwrap();
        assert_eq!(raw[0].0, "departed");
        assert_eq!(raw.last().unwrap().0, "no country for old men");
    }

    #[test]
    fn single_candidate_and_empty_set() {
        let mut set = mini_fixture().candidate_set("linkin-park-release").unwrap();
        set.members.retain(|k, _| k == "meteora");
        let ranked = score_candidates(&Uniform, &prompt(), &set, ScoringOptions::default(), &GenConfig::default())
            .unwrap();
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].0, "meteora");
        set.members.clear();
        assert!(matches!(
            score_candidates(&Uniform, &prompt(), &set, ScoringOptions::default(), &GenConfig::default()),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn unsupported_capabilities() {
        let set = mini_fixture().candidate_set("linkin-park-release").unwrap();
        assert!(matches!(
            score_candidates(&NoScores, &prompt(), &set, ScoringOptions::default(), &GenConfig::default()),
            Err(BackendError::Unsupported(_))
        ));
        assert!(matches!(
            first_token_distribution(&NoScores, &prompt(), 2, &GenConfig::default()),
            Err(BackendError::Unsupported(_))
        ));
        assert!(matches!(
            first_token_distribution(&NoScores, &prompt(), 0, &GenConfig::default()),
            Err(BackendError::InvalidRequest(_))
        ));
    }

    #[test]
    fn positive_logprob_rejected() {
        assert!(matches!(
            NoScores.complete(&prompt(), &GenConfig::default()),
            Err(BackendError::Malformed(_))
        ));
    }

    #[test]
    fn budget() {
        let long = PromptText::zero_shot("", &"word ".repeat(250));
        let err = Uniform.complete(&long, &GenConfig::default()).unwrap_err();
        assert!(matches!(err, BackendError::TokenBudget { prompt: 250, completion: 16, limit: 256 }));
        assert!(Uniform.complete(&prompt(), &GenConfig::default()).is_ok());
    }

    #[test]
    fn normalize_output_examples() {
        assert_eq!(normalize_output("The Hybrid Theory."), vec!["hybrid", "theory"]);
        assert!(normalize_output("").is_empty());
    }

    proptest! {
        #[test]
        fn ranking_is_permutation(lens in proptest::collection::vec(1usize..4, 1..8)) {
            let mut set = mini_fixture().candidate_set("fifa-u17-host").unwrap();
            set.members = lens
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    let name = (0..l).map(|w| format!("w{i}x{w}")).collect::<Vec<_>>().join(" ");
                    (name.clone(), name)
                })
                .collect();
            let ranked = score_candidates(&Uniform, &prompt(), &set, ScoringOptions { length_normalize: false }, &GenConfig::default()).unwrap();
            let mut got: Vec<String> = ranked.iter().map(|(n, _)| n.clone()).collect();
            got.sort();
            let want: Vec<String> = set.names().map(str::to_owned).collect();
            prop_assert_eq!(got, want);
            prop_assert!(ranked.iter().all(|(_, s)| s.is_finite()));
            prop_assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
        }
    }
}
