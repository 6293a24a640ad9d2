//! Live HTTP client for all four capabilities.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde_json::Value;

use super::protocol::{
    self, DetectRequest, DetectResponse, EditRequest, EditResponse, SegmentRequest,
    SegmentResponse, WireImage,
};
use super::{
    BackendError, ChatBackend, ChatRequest, DetectBackend, EditBackend, RawDetection,
    SegmentBackend, SegmentPrompt,
};
use crate::image_ref::{from_base64, ImageRef};
use crate::mask::RleMask;
use crate::parse::SimPrompt;

const BODY_LIMIT: u64 = 256 * 1024 * 1024;

/// Connection settings for one service.
#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub endpoint: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
    /// Model name for chat-completions requests.
    pub model: String,
    pub timeout: Duration,
    pub max_side: u32,
}

impl HttpSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token_env: None,
            model: "default".into(),
            timeout: Duration::from_secs(120),
            max_side: protocol::DEFAULT_MAX_SIDE,
        }
    }
}

/// Speaks chat-completions for chat and the minimal JSON protocol for
/// edit, detect and segment.
pub struct HttpBackend {
    settings: HttpSettings,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.settings.endpoint)
            .finish()
    }
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(settings.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { settings, agent }
    }

    pub fn settings(&self) -> &HttpSettings {
        &self.settings
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.settings.endpoint.trim_end_matches('/'))
    }

    fn token(&self) -> Result<Option<String>, BackendError> {
        match &self.settings.token_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(token) if !token.is_empty() => Ok(Some(token)),
                _ => Err(BackendError::Auth(format!(
                    "environment variable {var} is not set"
                ))),
            },
        }
    }

    fn post(&self, route: &str, body: &Value) -> Result<Value, BackendError> {
        let mut request = self.agent.post(self.url(route));
        if let Some(token) = self.token()? {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(transport_error)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_string()
            .map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(status_error(status, &text));
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::MalformedResponse(format!("response is not JSON: {e}")))
    }

    fn post_typed<T: DeserializeOwned>(
        &self,
        route: &str,
        body: &Value,
    ) -> Result<T, BackendError> {
        let value = self.post(route, body)?;
        serde_json::from_value(value)
            .map_err(|e| BackendError::MalformedResponse(format!("{route} response: {e}")))
    }

    fn wire(&self, image: &ImageRef) -> Result<WireImage, BackendError> {
        protocol::prepare_image(image, self.settings.max_side)
    }
}

fn transport_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => {
            BackendError::Timeout(e.to_string())
        }
        other => BackendError::Transport(other.to_string()),
    }
}

fn status_error(status: u16, body: &str) -> BackendError {
    let detail = format!(
        "HTTP {status}: {}",
        body.chars().take(300).collect::<String>()
    );
    let refused = serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_owned))
        .is_some_and(|e| e == "content_refused");
    match status {
        401 | 403 => BackendError::Auth(detail),
        408 | 504 => BackendError::Timeout(detail),
        429 | 503 => BackendError::RateLimited(detail),
        451 => BackendError::ContentRefused(detail),
        _ if refused => BackendError::ContentRefused(detail),
        _ => BackendError::Transport(detail),
    }
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let images = request
            .images()
            .iter()
            .map(|img| self.wire(img))
            .collect::<Result<Vec<_>, _>>()?;
        let params = request.params();
        let body = protocol::chat_completion_body(
            &self.settings.model,
            request.prompt(),
            &images,
            params.temperature,
            params.max_tokens,
        );
        let response = self.post("v1/chat/completions", &body)?;
        protocol::chat_completion_text(&response)
    }
}

impl EditBackend for HttpBackend {
    fn edit_image(&self, image: &ImageRef, prompt: &SimPrompt) -> Result<ImageRef, BackendError> {
        let wire = self.wire(image)?;
        let body = serde_json::to_value(EditRequest {
            image_b64: wire.b64.clone(),
            prompt: prompt.text.clone(),
        })
        .expect("serializable");
        let response: EditResponse = self.post_typed("edit", &body)?;
        let bytes = from_base64(&response.image_b64)
            .map_err(|e| BackendError::MalformedResponse(format!("image_b64: {e}")))?;
        let id = format!("{}-sim", image.id);
        let edited = ImageRef::from_encoded(id.clone(), bytes)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        protocol::restore_image(&id, edited, &wire)
    }
}

impl DetectBackend for HttpBackend {
    fn detect(
        &self,
        image: &ImageRef,
        query: &str,
        max_regions: usize,
    ) -> Result<Vec<RawDetection>, BackendError> {
        let wire = self.wire(image)?;
        let body = serde_json::to_value(DetectRequest {
            image_b64: wire.b64.clone(),
            query: query.to_string(),
            max_regions,
        })
        .expect("serializable");
        let response: DetectResponse = self.post_typed("detect", &body)?;
        Ok(protocol::rescale_detections(response.regions, &wire))
    }
}

impl SegmentBackend for HttpBackend {
    fn segment(
        &self,
        image: &ImageRef,
        prompts: &[SegmentPrompt],
    ) -> Result<Vec<RleMask>, BackendError> {
        let wire = self.wire(image)?;
        let body = serde_json::to_value(SegmentRequest {
            image_b64: wire.b64.clone(),
            prompts: protocol::wire_prompts(prompts, &wire),
        })
        .expect("serializable");
        let response: SegmentResponse = self.post_typed("segment", &body)?;
        response
            .masks
            .into_iter()
            .map(|m| {
                let mask = RleMask::new(m.width, m.height, m.runs)
                    .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
                if (m.width, m.height) != (wire.sent_width, wire.sent_height) {
                    return Ok(mask);
                }
                // Nearest-neighbour keeps the mask binary.
                mask.resize_nearest(wire.width, wire.height)
                    .map_err(|e| BackendError::MalformedResponse(e.to_string()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_codes_map_to_error_kinds() {
        assert!(matches!(status_error(401, ""), BackendError::Auth(_)));
        assert!(matches!(
            status_error(429, ""),
            BackendError::RateLimited(_)
        ));
        assert!(matches!(status_error(504, ""), BackendError::Timeout(_)));
        assert!(matches!(
            status_error(451, ""),
            BackendError::ContentRefused(_)
        ));
        assert!(matches!(
            status_error(422, r#"{"error":"content_refused"}"#),
            BackendError::ContentRefused(_)
        ));
        assert!(matches!(
            status_error(500, "boom"),
            BackendError::Transport(_)
        ));
    }

    #[test]
    fn missing_token_variable_is_an_auth_error() {
        let mut settings = HttpSettings::new("http://127.0.0.1:9");
        settings.token_env = Some("AFFORD_TEST_SURELY_UNSET_TOKEN".into());
        let backend = HttpBackend::new(settings);
        assert!(matches!(backend.token(), Err(BackendError::Auth(_))));
    }

    #[test]
    fn url_joining() {
        let backend = HttpBackend::new(HttpSettings::new("http://host:1/api/"));
        assert_eq!(backend.url("detect"), "http://host:1/api/detect");
    }
}
