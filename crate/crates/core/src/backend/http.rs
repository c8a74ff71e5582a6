//! OpenAI-compatible `/v1/completions` client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, GenConfig, Generation, TokenLogprob};
use crate::probegen::PromptText;

/// Environment variable holding the bearer token, if the endpoint needs one.
pub const API_KEY_ENV: &str = "TECFAP_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Server root, e.g. `http://localhost:8000`.
    pub base_url: String,
    pub model: String,
    /// Never serialized; read from [`API_KEY_ENV`] by [`HttpConfig::with_env_key`].
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl HttpConfig {
    pub fn new(base_url: &str, model: &str) -> Self {
        HttpConfig {
            base_url: base_url.trim_end_matches('/').to_owned(),
            model: model.to_owned(),
            api_key: None,
        }
    }

    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/completions", self.base_url.trim_end_matches('/'))
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        HttpBackend {
            cfg,
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    /// Posts `body` and returns the parsed JSON reply. Transport failures,
    /// 429 and 5xx are retried with exponential backoff.
    fn post(&self, body: &Value, gen: &GenConfig) -> Result<Value, BackendError> {
        let url = self.cfg.endpoint();
        let timeout = Duration::from_secs_f64(gen.timeout_secs.max(0.001));
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let mut req = self
                .agent
                .post(&url)
                .config()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .header("Content-Type", "application/json");
            if let Some(key) = &self.cfg.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let outcome = match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if status == 200 {
                        return serde_json::from_str(&text)
                            .map_err(|e| BackendError::Malformed(format!("invalid JSON: {e}")));
                    }
                    let err = BackendError::Status { status, body: text };
                    if status == 429 || status >= 500 {
                        err
                    } else {
                        return Err(err);
                    }
                }
                Err(e) => BackendError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > gen.max_retries {
                return Err(outcome);
            }
            let backoff = gen.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            std::thread::sleep(Duration::from_millis(backoff));
        }
    }

    fn request(&self, prompt: &str, max_tokens: usize, logprobs: usize) -> Value {
        let mut body = json!({
            "model": self.cfg.model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0,
        });
        if logprobs > 0 {
            body["logprobs"] = json!(logprobs);
        }
        body
    }
}

fn first_choice(reply: &Value) -> Result<&Value, BackendError> {
    reply
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Malformed("missing choices[0]".into()))
}

fn top_logprobs(choice: &Value) -> Result<Vec<TokenLogprob>, BackendError> {
    let first = choice
        .pointer("/logprobs/top_logprobs/0")
        .and_then(Value::as_object)
        .ok_or_else(|| BackendError::Malformed("missing logprobs.top_logprobs[0]".into()))?;
    let mut out = Vec::with_capacity(first.len());
    for (token, lp) in first {
        let logprob = lp
            .as_f64()
            .ok_or_else(|| BackendError::Malformed(format!("non-numeric log-probability for `{token}`")))?;
        out.push(TokenLogprob {
            token: token.clone(),
            logprob,
        });
    }
    out.sort_by(|a, b| b.logprob.total_cmp(&a.logprob).then_with(|| a.token.cmp(&b.token)));
    Ok(out)
}

/// Sums echoed token log-probabilities whose character offset lies at or
/// after `boundary`.
fn echoed_sum(choice: &Value, boundary: usize) -> Result<f64, BackendError> {
    let lps = choice
        .pointer("/logprobs/token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Malformed("missing logprobs.token_logprobs".into()))?;
    let offsets = choice
        .pointer("/logprobs/text_offset")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Malformed("missing logprobs.text_offset".into()))?;
    if lps.len() != offsets.len() {
        return Err(BackendError::Malformed("token_logprobs and text_offset differ in length".into()));
    }
    let mut total = 0.0;
    let mut counted = 0;
    for (lp, off) in lps.iter().zip(offsets) {
        let off = off
            .as_u64()
            .ok_or_else(|| BackendError::Malformed("non-integer text offset".into()))? as usize;
        if off < boundary {
            continue;
        }
        total += lp
            .as_f64()
            .ok_or_else(|| BackendError::Malformed("null log-probability inside continuation".into()))?;
        counted += 1;
    }
    if counted == 0 {
        return Err(BackendError::Malformed("no continuation tokens echoed".into()));
    }
    Ok(total)
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.cfg.model
    }

    fn generate(&self, prompt: &PromptText, cfg: &GenConfig) -> Result<Generation, BackendError> {
        let body = self.request(&prompt.full_text, cfg.max_new_tokens, cfg.top_logprobs);
        let reply = self.post(&body, cfg)?;
        let choice = first_choice(&reply)?;
        let text = choice
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Malformed("missing choices[0].text".into()))?
            .to_owned();
        let first_token = if cfg.top_logprobs > 0 {
            Some(top_logprobs(choice)?)
        } else {
            None
        };
        Ok(Generation { text, first_token })
    }

    fn continuation_logprob(
        &self,
        prompt: &PromptText,
        continuation: &str,
        cfg: &GenConfig,
    ) -> Result<f64, BackendError> {
        let mut body = self.request(&format!("{}{continuation}", prompt.full_text), 0, 1);
        body["echo"] = json!(true);
        let reply = self.post(&body, cfg)?;
        echoed_sum(first_choice(&reply)?, prompt.full_text.chars().count())
    }

    fn next_token_logprobs(
        &self,
        prompt: &PromptText,
        k: usize,
        cfg: &GenConfig,
    ) -> Result<Vec<TokenLogprob>, BackendError> {
        let body = self.request(&prompt.full_text, 1, k.max(1));
        let reply = self.post(&body, cfg)?;
        let mut out = top_logprobs(first_choice(&reply)?)?;
        out.truncate(k);
        Ok(out)
    }
}
