//! JSON-over-HTTP clients for generation and language-model services.
//!
//! Images: `POST {endpoint}/v1/generate` with
//! `{kind, prompt?, regions?, image_b64?, params, width?, height?}`, answered
//! by `{image_b64}`. Text: `POST {endpoint}/v1/complete` with
//! `{prompt, images_b64?}`, answered by `{text}`. A bearer token is sent
//! when configured.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use countercurate_core::jobs::{JobSpec, Region};
use serde_json::{json, Value};

use crate::clients::{Client, ClientError, Output, ResolvedJob};
use crate::images;

/// Environment variable holding the bearer token.
pub const TOKEN_VAR: &str = "COUNTERCURATE_API_TOKEN";
/// Environment variable holding the request timeout in seconds.
pub const TIMEOUT_VAR: &str = "COUNTERCURATE_TIMEOUT_SECS";
/// Default request timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// A service at one base URL.
#[derive(Clone, Debug)]
pub struct HttpClient {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

fn regions_json(regions: &[Region]) -> Value {
    regions.iter().map(|r| json!({"box": r.bbox.to_array(), "prompt": r.prompt})).collect()
}

/// Request path and body for a job.
pub fn request_body(job: &ResolvedJob) -> Result<(&'static str, Value), ClientError> {
    let b64 = |bytes: &Option<Vec<u8>>| -> Result<String, ClientError> {
        bytes.as_deref().map(|b| B64.encode(b)).ok_or_else(|| ClientError::fatal("source image missing"))
    };
    let body = match &job.job.spec {
        JobSpec::HFlip { .. } => return Err(ClientError::fatal("flips run locally")),
        JobSpec::Inpaint { regions, params, width, height, .. } => json!({
            "kind": "inpaint",
            "regions": regions_json(regions),
            "image_b64": b64(&job.source)?,
            "params": params,
            "width": width,
            "height": height,
        }),
        JobSpec::BoxedT2I { regions, params, width, height, .. } => json!({
            "kind": "boxed_t2i",
            "prompt": job.prompt.as_deref().ok_or_else(|| ClientError::fatal("prompt unresolved"))?,
            "regions": regions_json(regions),
            "params": params,
            "width": width,
            "height": height,
        }),
        JobSpec::TextToImage { prompt, params } => json!({
            "kind": "text_to_image",
            "prompt": prompt,
            "params": {"quality": params.quality, "style": params.style},
        }),
        JobSpec::LlmText { request } => {
            let mut body = json!({"prompt": request.prompt()});
            if !job.images.is_empty() {
                body["images_b64"] = job.images.iter().map(|(_, b)| Value::from(B64.encode(b))).collect();
            }
            return Ok(("/v1/complete", body));
        }
    };
    Ok(("/v1/generate", body))
}

/// Reads a service answer for a job into an output.
pub fn parse_answer(job: &ResolvedJob, answer: &Value) -> Result<Output, ClientError> {
    if matches!(job.job.spec, JobSpec::LlmText { .. }) {
        let text = answer.get("text").and_then(Value::as_str).ok_or_else(|| ClientError::fatal("answer lacks `text`"))?;
        return Ok(Output::Text(text.into()));
    }
    let b64 = answer
        .get("image_b64")
        .and_then(Value::as_str)
        .ok_or_else(|| ClientError::fatal("answer lacks `image_b64`"))?;
    let bytes = B64.decode(b64).map_err(|e| ClientError::fatal(format!("bad base64: {e}")))?;
    let img = images::decode(&bytes).map_err(|e| ClientError::fatal(format!("undecodable image: {e}")))?;
    Ok(Output::Image(images::png_bytes(&img)))
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { endpoint: endpoint.into().trim_end_matches('/').to_string(), token, agent }
    }
}

impl Client for HttpClient {
    fn name(&self) -> &str {
        &self.endpoint
    }

    fn execute(&self, job: &ResolvedJob) -> Result<Output, ClientError> {
        let (path, body) = request_body(job)?;
        let mut req = self.agent.post(&format!("{}{path}", self.endpoint)).set("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.set("Authorization", &format!("Bearer {t}"));
        }
        let response = match req.send_string(&body.to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                let message = format!("{path} returned {code}: {}", detail.trim());
                return Err(if code == 429 || code >= 500 {
                    ClientError::retryable(message)
                } else {
                    ClientError::fatal(message)
                });
            }
            Err(e) => return Err(ClientError::retryable(format!("{path}: {e}"))),
        };
        let text = response.into_string().map_err(|e| ClientError::retryable(format!("reading answer: {e}")))?;
        let answer: Value =
            serde_json::from_str(&text).map_err(|e| ClientError::fatal(format!("answer is not JSON: {e}")))?;
        parse_answer(job, &answer)
    }
}
