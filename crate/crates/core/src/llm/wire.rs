//! OpenAI-compatible `/chat/completions` backend.

use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, CompletionBackend, CompletionRequest, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Forward the request seed (rerank pass index) to the server.
    pub send_seed: bool,
}

impl Default for WireConfig {
    fn default() -> Self {
        WireConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            send_seed: true,
        }
    }
}

pub struct WireBackend {
    http: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    send_seed: bool,
}

impl WireBackend {
    /// Builds the backend, reading the API key from the configured variable.
    /// A missing key is allowed for local servers that do not check it.
    pub fn from_config(config: &WireConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(WireBackend {
            http,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            api_key,
            send_seed: config.send_seed,
        })
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn request_body(&self, request: &CompletionRequest) -> std::result::Result<Value, BackendError> {
        let mut messages = Vec::with_capacity(request.messages.len());
        for m in &request.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let content = if m.images.is_empty() {
                Value::String(m.content.clone())
            } else {
                let mut parts = vec![json!({"type": "text", "text": m.content})];
                for img in &m.images {
                    parts.push(json!({"type": "image_url", "image_url": {"url": image_url(img)?}}));
                }
                Value::Array(parts)
            };
            messages.push(json!({"role": role, "content": content}));
        }
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        });
        if let (true, Some(seed)) = (self.send_seed, request.seed) {
            body["seed"] = json!(seed);
        }
        Ok(body)
    }
}

/// Remote URIs pass through; local files become base64 `data:` URLs.
fn image_url(reference: &str) -> std::result::Result<String, BackendError> {
    if reference.starts_with("http://") || reference.starts_with("https://") || reference.starts_with("data:") {
        return Ok(reference.to_string());
    }
    let path = Path::new(reference);
    let bytes = std::fs::read(path)
        .map_err(|e| BackendError::permanent(format!("cannot read image {reference}: {e}")))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    };
    Ok(format!(
        "data:{mime};base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

/// Extracts `choices[0].message.content` from a chat-completion response.
pub(crate) fn parse_chat_response(body: &Value) -> std::result::Result<String, BackendError> {
    let content = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| BackendError::protocol("response has no choices[0].message.content"))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        _ => Err(BackendError::protocol("message content is neither a string nor parts")),
    }
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> BackendError {
    let msg = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    if status.as_u16() == 429 || status.is_server_error() || status.as_u16() == 408 {
        BackendError::transient(msg)
    } else {
        BackendError::permanent(msg)
    }
}

#[async_trait]
impl CompletionBackend for WireBackend {
    fn label(&self) -> &str {
        "wire"
    }

    async fn complete_once(&self, request: &CompletionRequest) -> std::result::Result<String, BackendError> {
        let body = self.request_body(request)?;
        let mut call = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().await.map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                BackendError::transient(format!("transport: {e}"))
            } else {
                BackendError::permanent(format!("transport: {e}"))
            }
        })?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| BackendError::transient(format!("reading body: {e}")))?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::protocol(format!("invalid JSON body: {e}")))?;
        parse_chat_response(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{FailureKind, Message};

    fn backend() -> WireBackend {
        WireBackend::from_config(&WireConfig {
            base_url: "http://127.0.0.1:1/v1/".into(),
            api_key_env: "EXPANDRANK_TEST_UNSET_KEY".into(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn endpoint_joins_base_url() {
        assert_eq!(backend().endpoint, "http://127.0.0.1:1/v1/chat/completions");
    }

    #[test]
    fn body_carries_sampling_and_image_parts() {
        let req = CompletionRequest::new(
            "caption",
            vec![
                Message::system("describe"),
                Message::user("image:").with_images(vec!["https://x/y.png".into()]),
            ],
        )
        .sampling(0.0, 1.0, 512);
        let body = backend().request_body(&req).unwrap();
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 512);
        assert_eq!(body["messages"][0]["content"], "describe");
        assert_eq!(body["messages"][1]["content"][1]["type"], "image_url");
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "https://x/y.png");
        assert!(body.get("seed").is_none());
    }

    #[test]
    fn local_image_becomes_data_url() {
        let dir = tempfile::TempDir::new().unwrap();
        let p = dir.path().join("a.png");
        std::fs::write(&p, [1u8, 2, 3]).unwrap();
        let url = image_url(p.to_str().unwrap()).unwrap();
        assert_eq!(url, "data:image/png;base64,AQID");
    }

    #[test]
    fn seed_forwarded_for_passes() {
        let req = CompletionRequest::new("rerank", vec![Message::user("x")]).pass(3);
        assert_eq!(backend().request_body(&req).unwrap()["seed"], 3);
    }

    #[test]
    fn response_parsing() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "[1] > [2]"}}]});
        assert_eq!(parse_chat_response(&ok).unwrap(), "[1] > [2]");
        let bad = json!({"error": "nope"});
        assert_eq!(parse_chat_response(&bad).unwrap_err().kind, FailureKind::Protocol);
    }

    #[test]
    fn status_classification() {
        use reqwest::StatusCode;
        assert_eq!(classify_status(StatusCode::TOO_MANY_REQUESTS, "").kind, FailureKind::Transient);
        assert_eq!(classify_status(StatusCode::BAD_GATEWAY, "").kind, FailureKind::Transient);
        assert_eq!(classify_status(StatusCode::UNAUTHORIZED, "").kind, FailureKind::Permanent);
    }
}
