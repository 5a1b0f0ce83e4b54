use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, PromptRequest, Role, ScoredContinuation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

/// Client for OpenAI-compatible inference servers: `/chat/completions`,
/// `/completions` with `echo` + `logprobs`, and `/embeddings`.
pub struct HttpBackend {
    agent: ureq::Agent,
    base: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &HttpConfig) -> Result<Self> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("API key environment variable `{var}` is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            agent,
            base: config.endpoint.trim_end_matches('/').to_string(),
            api_key,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{path}", self.base);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Error::Transport {
            attempts: 1,
            message: format!("POST {url}: {e}"),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Error::Transport {
            attempts: 1,
            message: format!("reading response from {url}: {e}"),
        })?;
        if !(200..300).contains(&status) {
            return Err(Error::Backend { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| Error::Backend {
            status,
            body: format!("invalid JSON ({e}): {text}"),
        })
    }
}

fn malformed(what: &str, body: &Value) -> Error {
    Error::Backend {
        status: 200,
        body: format!("response missing {what}: {body}"),
    }
}

/// Keep the tokens that overlap the continuation, i.e. end past the first
/// `context_chars` characters of the echoed prompt.
pub(crate) fn slice_continuation(
    context_chars: usize,
    tokens: &[String],
    logprobs: &[Option<f64>],
    offsets: Option<&[usize]>,
) -> Result<ScoredContinuation> {
    if tokens.len() != logprobs.len() {
        return Err(Error::Unsupported("echoed token and logprob counts differ".into()));
    }
    let mut computed = Vec::with_capacity(tokens.len());
    let offsets = match offsets {
        Some(o) if o.len() == tokens.len() => o,
        _ => {
            let mut pos = 0;
            for t in tokens {
                computed.push(pos);
                pos += t.chars().count();
            }
            &computed
        }
    };
    let mut out_tokens = Vec::new();
    let mut out_lps = Vec::new();
    for ((tok, lp), &off) in tokens.iter().zip(logprobs).zip(offsets) {
        if off + tok.chars().count() <= context_chars {
            continue;
        }
        let lp = lp.ok_or_else(|| Error::Unsupported("backend returned no logprob for a continuation token".into()))?;
        out_tokens.push(tok.clone());
        out_lps.push(lp.min(0.0));
    }
    ScoredContinuation::new(out_tokens, out_lps)
}

impl Backend for HttpBackend {
    fn complete(&self, request: &PromptRequest) -> Result<String> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                };
                json!({"role": role, "content": m.text})
            })
            .collect();
        let body = json!({
            "model": request.model_name,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let resp = self.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| malformed("choices[0].message.content", &resp))
    }

    fn score(&self, model: &str, context: &str, continuation: &str) -> Result<ScoredContinuation> {
        let body = json!({
            "model": model,
            "prompt": format!("{context}{continuation}"),
            "max_tokens": 0,
            "temperature": 0.0,
            "echo": true,
            "logprobs": 1,
        });
        let resp = self.post("completions", &body)?;
        let lp = resp
            .pointer("/choices/0/logprobs")
            .filter(|v| !v.is_null())
            .ok_or_else(|| Error::Unsupported("backend does not echo prompt logprobs".into()))?;
        let tokens: Vec<String> =
            serde_json::from_value(lp["tokens"].clone()).map_err(|_| malformed("logprobs.tokens", &resp))?;
        let logprobs: Vec<Option<f64>> = serde_json::from_value(lp["token_logprobs"].clone())
            .map_err(|_| malformed("logprobs.token_logprobs", &resp))?;
        let offsets: Option<Vec<usize>> = serde_json::from_value(lp["text_offset"].clone()).ok();
        slice_continuation(context.chars().count(), &tokens, &logprobs, offsets.as_deref())
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp = self.post("embeddings", &json!({"model": model, "input": texts}))?;
        if let Some(v) = resp.get("vectors") {
            return serde_json::from_value(v.clone()).map_err(|_| malformed("vectors", &resp));
        }
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("vectors", &resp))?;
        data.iter()
            .map(|d| serde_json::from_value(d["embedding"].clone()).map_err(|_| malformed("data[].embedding", &resp)))
            .collect()
    }

    fn name(&self) -> &str {
        "http"
    }
}
