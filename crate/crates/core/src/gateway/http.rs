//! JSON-over-HTTP backends speaking the common chat-completions protocol.

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use serde_json::{json, Value};

use super::{
    ChatBackend, ChatRequest, EmbeddingBackend, EmbeddingVector, GatewayError, VisionBackend, VisionInput,
    VisionRequest,
};

#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    /// e.g. `http://localhost:8000`
    pub base_url: String,
    /// e.g. `/v1/chat/completions`
    pub path: String,
    pub token: Option<String>,
}

impl HttpEndpoint {
    pub fn url(&self) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), self.path)
    }
}

pub fn chat_request_body(req: &ChatRequest) -> Value {
    json!({
        "model": req.model,
        "messages": req.messages.iter().map(|m| json!({"role": m.role, "content": m.content})).collect::<Vec<_>>(),
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

pub fn vision_request_body(req: &VisionRequest) -> Value {
    let mut content = vec![json!({"type": "text", "text": req.prompt})];
    for input in &req.images {
        content.push(match input {
            VisionInput::Slice(img) => {
                let b64 = base64::engine::general_purpose::STANDARD.encode(img.to_png());
                json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}})
            }
            VisionInput::VolumeRef(r) => json!({"type": "text", "text": format!("volume: {r}")}),
        });
    }
    json!({
        "model": req.model,
        "messages": [{"role": "user", "content": content}],
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

pub fn embedding_request_body(model: &str, texts: &[String]) -> Value {
    json!({"model": model, "input": texts})
}

async fn post_json(client: &reqwest::Client, endpoint: &HttpEndpoint, body: &Value) -> Result<Value, GatewayError> {
    let mut req = client.post(endpoint.url()).json(body);
    if let Some(token) = &endpoint.token {
        req = req.bearer_auth(token);
    }
    let resp = req.send().await.map_err(classify)?;
    let status = resp.status();
    let text = resp.text().await.map_err(classify)?;
    if status.as_u16() == 429 || status.is_server_error() {
        return Err(GatewayError::Transport(format!("status {status}")));
    }
    if !status.is_success() {
        return Err(GatewayError::Rejected { status: status.as_u16(), body: text });
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::Malformed(e.to_string()))
}

fn classify(e: reqwest::Error) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout(Duration::ZERO)
    } else if e.is_decode() {
        GatewayError::Malformed(e.to_string())
    } else {
        GatewayError::Transport(e.to_string())
    }
}

fn first_choice_content(v: &Value) -> Result<String, GatewayError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| GatewayError::Malformed("missing choices[0].message.content".into()))
}

#[derive(Debug, Clone)]
pub struct HttpChat {
    client: reqwest::Client,
    endpoint: HttpEndpoint,
}

impl HttpChat {
    pub fn new(client: reqwest::Client, endpoint: HttpEndpoint) -> Self {
        Self { client, endpoint }
    }
}

#[async_trait]
impl ChatBackend for HttpChat {
    async fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let v = post_json(&self.client, &self.endpoint, &chat_request_body(req)).await?;
        first_choice_content(&v)
    }
}

#[derive(Debug, Clone)]
pub struct HttpVision {
    client: reqwest::Client,
    endpoint: HttpEndpoint,
}

impl HttpVision {
    pub fn new(client: reqwest::Client, endpoint: HttpEndpoint) -> Self {
        Self { client, endpoint }
    }
}

#[async_trait]
impl VisionBackend for HttpVision {
    async fn analyze(&self, req: &VisionRequest) -> Result<String, GatewayError> {
        let v = post_json(&self.client, &self.endpoint, &vision_request_body(req)).await?;
        first_choice_content(&v)
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: reqwest::Client,
    endpoint: HttpEndpoint,
    model: String,
}

impl HttpEmbedder {
    pub fn new(client: reqwest::Client, endpoint: HttpEndpoint, model: impl Into<String>) -> Self {
        Self { client, endpoint, model: model.into() }
    }
}

#[async_trait]
impl EmbeddingBackend for HttpEmbedder {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let v = post_json(&self.client, &self.endpoint, &embedding_request_body(&self.model, texts)).await?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Malformed("missing data array".into()))?;
        let mut rows: Vec<(u64, EmbeddingVector)> = data
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let index = row.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
                let comps = row
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| GatewayError::Malformed("missing embedding".into()))?
                    .iter()
                    .map(|c| c.as_f64().ok_or_else(|| GatewayError::Malformed("non-numeric component".into())))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((index, EmbeddingVector(comps)))
            })
            .collect::<Result<_, GatewayError>>()?;
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}
