use std::io::Cursor;

use async_trait::async_trait;
use base64::Engine as _;
use image::{imageops::FilterType, ImageFormat};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{BackendConfig, Conversation, GatewayError, ModelBackend, PngImage, Role, TokenBucket};

/// OpenAI-compatible chat-completions client.
pub struct HttpChatBackend {
    cfg: BackendConfig,
    client: reqwest::Client,
    inflight: Semaphore,
    bucket: Option<TokenBucket>,
}

impl HttpChatBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let bucket = cfg.requests_per_second.map(|rps| TokenBucket::new(rps, rps.max(1.0)));
        Ok(Self {
            inflight: Semaphore::new(cfg.max_concurrency.max(1)),
            bucket,
            client,
            cfg,
        })
    }

    pub fn request_body(&self, conv: &Conversation) -> Result<Value, GatewayError> {
        chat_body(&self.cfg, conv)
    }
}

/// Serializes a conversation into a chat-completions request body with
/// images inlined as base64 PNG data URLs.
pub fn chat_body(cfg: &BackendConfig, conv: &Conversation) -> Result<Value, GatewayError> {
    let mut messages = vec![json!({ "role": "system", "content": conv.system })];
    for turn in &conv.turns {
        match turn.role {
            Role::Assistant => messages.push(json!({ "role": "assistant", "content": turn.text })),
            Role::User => {
                let mut parts = vec![json!({ "type": "text", "text": turn.text })];
                for img in &turn.images {
                    let png = downscale(img, cfg.max_image_side)?;
                    let b64 = base64::engine::general_purpose::STANDARD.encode(png);
                    parts.push(json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:image/png;base64,{b64}"), "detail": "high" }
                    }));
                }
                messages.push(json!({ "role": "user", "content": parts }));
            }
        }
    }
    Ok(json!({
        "model": cfg.model_name,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    }))
}

fn downscale(img: &PngImage, max_side: u32) -> Result<Vec<u8>, GatewayError> {
    let bad = |e: image::ImageError| GatewayError::InvalidConversation(format!("attached image: {e}"));
    let decoded = image::load_from_memory_with_format(img.bytes(), ImageFormat::Png).map_err(bad)?;
    let (w, h) = (decoded.width(), decoded.height());
    if max_side == 0 || w.max(h) <= max_side {
        return Ok(img.bytes().to_vec());
    }
    let scale = max_side as f64 / w.max(h) as f64;
    let (nw, nh) = (((w as f64 * scale).round() as u32).max(1), ((h as f64 * scale).round() as u32).max(1));
    let resized = decoded.resize_exact(nw, nh, FilterType::Triangle);
    let mut out = Cursor::new(Vec::new());
    resized.write_to(&mut out, ImageFormat::Png).map_err(bad)?;
    Ok(out.into_inner())
}

pub(crate) fn extract_text(body: &Value) -> Result<String, GatewayError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect();
            if texts.is_empty() {
                Err(GatewayError::MalformedResponse("content has no text parts".into()))
            } else {
                Ok(texts.join(""))
            }
        }
        _ => Err(GatewayError::MalformedResponse("content is not text".into())),
    }
}

enum Attempt {
    Done(String),
    Retry(GatewayError),
}

impl HttpChatBackend {
    async fn attempt(&self, body: &Value) -> Result<Attempt, GatewayError> {
        let mut req = self.client.post(&self.cfg.endpoint_url).json(body);
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Ok(Attempt::Retry(GatewayError::BackendTimeout)),
            Err(e) if e.is_connect() => return Ok(Attempt::Retry(GatewayError::Http(e.to_string()))),
            Err(e) => return Err(GatewayError::Http(e.to_string())),
        };
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Ok(Attempt::Retry(GatewayError::RateLimited));
        }
        if status.is_server_error() {
            return Ok(Attempt::Retry(GatewayError::Http(format!("status {status}"))));
        }
        if !status.is_success() {
            return Err(GatewayError::Http(format!("status {status}")));
        }
        let body: Value = match resp.json().await {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Ok(Attempt::Retry(GatewayError::BackendTimeout)),
            Err(e) => return Err(GatewayError::MalformedResponse(e.to_string())),
        };
        extract_text(&body).map(Attempt::Done)
    }
}

#[async_trait]
impl ModelBackend for HttpChatBackend {
    async fn complete(&self, conv: &Conversation) -> Result<String, GatewayError> {
        let body = self.request_body(conv)?;
        let _permit = self.inflight.acquire().await.expect("semaphore never closed");
        let mut attempt = 0;
        loop {
            if let Some(bucket) = &self.bucket {
                bucket.acquire().await;
            }
            match self.attempt(&body).await? {
                Attempt::Done(text) => return Ok(text),
                Attempt::Retry(err) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(err);
                    }
                    tracing::debug!(attempt, error = %err, "retrying model request");
                    tokio::time::sleep(self.cfg.backoff(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }
}
