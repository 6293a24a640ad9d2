//! Model capabilities behind abstract interfaces.
//!
//! Four capabilities are used by the pipeline: multimodal chat, image
//! editing, open-vocabulary detection and promptable segmentation. Each is
//! a trait with an HTTP implementation ([`http::HttpBackend`]), a
//! record/replay wrapper ([`fixtures::FixtureBackend`]) and scripted
//! stand-ins for tests ([`scripted`]).
//!
//! Backend implementations return wire-level results. [`Backends`] applies
//! the contract on top (retries, box clamping, keypoint defaults, count and
//! dimension checks) so every implementation gets the same guarantees.

pub mod config;
pub mod fixtures;
pub mod http;
pub mod protocol;
pub mod retry;
pub mod scripted;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, Keypoint};
use crate::image_ref::ImageRef;
use crate::mask::RleMask;
use crate::parse::SimPrompt;

pub use config::{BackendConfig, BackendMode, BackendsConfig};
pub use retry::RetryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Chat,
    Edit,
    Detect,
    Segment,
}

impl Capability {
    pub const ALL: [Capability; 4] = [Self::Chat, Self::Edit, Self::Detect, Self::Segment];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Chat => "chat",
            Self::Edit => "edit",
            Self::Detect => "detect",
            Self::Segment => "segment",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend refused the request: {0}")]
    ContentRefused(String),
    #[error("expected {expected} masks, backend returned {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no fixture recorded for {capability} request {key}")]
    MissingFixture { capability: Capability, key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("capability {0} is not configured")]
    NotConfigured(Capability),
    #[error("fixture store: {0}")]
    Store(String),
}

impl BackendError {
    /// Only transient failures are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Timeout(_) | Self::RateLimited(_))
    }

    pub fn kind_tag(&self) -> &'static str {
        match self {
            Self::Timeout(_) => "timeout",
            Self::Auth(_) => "auth_error",
            Self::RateLimited(_) => "rate_limited",
            Self::MalformedResponse(_) => "malformed_response",
            Self::ContentRefused(_) => "content_refused",
            Self::CountMismatch { .. } => "count_mismatch",
            Self::Transport(_) => "transport",
            Self::MissingFixture { .. } => "missing_fixture",
            Self::InvalidRequest(_) => "invalid_request",
            Self::NotConfigured(_) => "not_configured",
            Self::Store(_) => "fixture_store",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

/// A chat turn with one or two images: the original, optionally followed
/// by the imagined interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    images: Vec<ImageRef>,
    prompt: String,
    params: DecodeParams,
}

impl ChatRequest {
    pub fn new(
        images: Vec<ImageRef>,
        prompt: impl Into<String>,
        params: DecodeParams,
    ) -> Result<Self, BackendError> {
        if images.is_empty() || images.len() > 2 {
            return Err(BackendError::InvalidRequest(format!(
                "chat takes 1 or 2 images, got {}",
                images.len()
            )));
        }
        if params.temperature.is_nan() || params.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature must be non-negative, got {}",
                params.temperature
            )));
        }
        Ok(Self {
            images,
            prompt: prompt.into(),
            params,
        })
    }

    pub fn images(&self) -> &[ImageRef] {
        &self.images
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn params(&self) -> DecodeParams {
        self.params
    }
}

/// A detector region as the backend reported it, before clean-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub points: Vec<Keypoint>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub regions: Vec<Detection>,
    pub query: String,
}

/// One box-plus-points prompt for the segmenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrompt {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub points: Vec<Keypoint>,
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

pub trait EditBackend: Send + Sync {
    fn edit_image(&self, image: &ImageRef, prompt: &SimPrompt) -> Result<ImageRef, BackendError>;
}

pub trait DetectBackend: Send + Sync {
    fn detect(
        &self,
        image: &ImageRef,
        query: &str,
        max_regions: usize,
    ) -> Result<Vec<RawDetection>, BackendError>;
}

pub trait SegmentBackend: Send + Sync {
    fn segment(
        &self,
        image: &ImageRef,
        prompts: &[SegmentPrompt],
    ) -> Result<Vec<RleMask>, BackendError>;
}

struct Slot<T: ?Sized> {
    backend: Arc<T>,
    retry: RetryPolicy,
}

impl<T: ?Sized> Clone for Slot<T> {
    fn clone(&self) -> Self {
        Self {
            backend: Arc::clone(&self.backend),
            retry: self.retry,
        }
    }
}

/// The set of configured capabilities, with the backend contract enforced
/// on every call.
#[derive(Clone, Default)]
pub struct Backends {
    chat: Option<Slot<dyn ChatBackend>>,
    edit: Option<Slot<dyn EditBackend>>,
    detect: Option<Slot<dyn DetectBackend>>,
    segment: Option<Slot<dyn SegmentBackend>>,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("capabilities", &self.capabilities())
            .finish()
    }
}

impl Backends {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_chat(mut self, backend: Arc<dyn ChatBackend>, retry: RetryPolicy) -> Self {
        self.chat = Some(Slot { backend, retry });
        self
    }

    pub fn with_edit(mut self, backend: Arc<dyn EditBackend>, retry: RetryPolicy) -> Self {
        self.edit = Some(Slot { backend, retry });
        self
    }

    pub fn with_detect(mut self, backend: Arc<dyn DetectBackend>, retry: RetryPolicy) -> Self {
        self.detect = Some(Slot { backend, retry });
        self
    }

    pub fn with_segment(mut self, backend: Arc<dyn SegmentBackend>, retry: RetryPolicy) -> Self {
        self.segment = Some(Slot { backend, retry });
        self
    }

    pub fn has(&self, capability: Capability) -> bool {
        match capability {
            Capability::Chat => self.chat.is_some(),
            Capability::Edit => self.edit.is_some(),
            Capability::Detect => self.detect.is_some(),
            Capability::Segment => self.segment.is_some(),
        }
    }

    pub fn capabilities(&self) -> Vec<Capability> {
        Capability::ALL
            .into_iter()
            .filter(|c| self.has(*c))
            .collect()
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let slot = self
            .chat
            .as_ref()
            .ok_or(BackendError::NotConfigured(Capability::Chat))?;
        slot.retry.run(|| slot.backend.chat(request))
    }

    /// Edits an image; the result must keep the input dimensions.
    pub fn edit_image(
        &self,
        image: &ImageRef,
        prompt: &SimPrompt,
    ) -> Result<ImageRef, BackendError> {
        let slot = self
            .edit
            .as_ref()
            .ok_or(BackendError::NotConfigured(Capability::Edit))?;
        let edited = slot.retry.run(|| slot.backend.edit_image(image, prompt))?;
        if (edited.width, edited.height) != (image.width, image.height) {
            return Err(BackendError::MalformedResponse(format!(
                "edited image is {}x{}, input is {}x{}",
                edited.width, edited.height, image.width, image.height
            )));
        }
        Ok(edited)
    }

    /// Detects regions matching `query`, at most `max_regions`, sorted by
    /// descending score. Boxes are clipped to the image and regions without
    /// keypoints get the box centre.
    pub fn detect(
        &self,
        image: &ImageRef,
        query: &str,
        max_regions: usize,
    ) -> Result<DetectionSet, BackendError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(BackendError::InvalidRequest(
                "detection query is empty".into(),
            ));
        }
        if max_regions == 0 {
            return Err(BackendError::InvalidRequest(
                "max_regions must be at least 1".into(),
            ));
        }
        let slot = self
            .detect
            .as_ref()
            .ok_or(BackendError::NotConfigured(Capability::Detect))?;
        let raw = slot
            .retry
            .run(|| slot.backend.detect(image, query, max_regions))?;
        Ok(DetectionSet {
            regions: clean_detections(raw, image.width, image.height, max_regions),
            query: query.to_string(),
        })
    }

    /// One mask per `(box, points)` prompt, in order.
    pub fn segment(
        &self,
        image: &ImageRef,
        boxes: &[BBox],
        points: &[Vec<Keypoint>],
    ) -> Result<Vec<RleMask>, BackendError> {
        if boxes.is_empty() || boxes.len() != points.len() {
            return Err(BackendError::InvalidRequest(format!(
                "need matching non-empty box and point lists, got {} and {}",
                boxes.len(),
                points.len()
            )));
        }
        let slot = self
            .segment
            .as_ref()
            .ok_or(BackendError::NotConfigured(Capability::Segment))?;
        let prompts: Vec<SegmentPrompt> = boxes
            .iter()
            .zip(points)
            .map(|(bbox, pts)| SegmentPrompt {
                bbox: *bbox,
                points: pts.clone(),
            })
            .collect();
        let masks = slot.retry.run(|| slot.backend.segment(image, &prompts))?;
        if masks.len() != prompts.len() {
            return Err(BackendError::CountMismatch {
                expected: prompts.len(),
                got: masks.len(),
            });
        }
        if let Some(bad) = masks
            .iter()
            .find(|m| m.width() != image.width || m.height() != image.height)
        {
            return Err(BackendError::MalformedResponse(format!(
                "mask is {}x{}, image is {}x{}",
                bad.width(),
                bad.height(),
                image.width,
                image.height
            )));
        }
        Ok(masks)
    }
}

/// Clips boxes, drops degenerate ones, fills missing keypoints with the box
/// centre, sorts by score and truncates.
pub fn clean_detections(
    raw: Vec<RawDetection>,
    width: u32,
    height: u32,
    max_regions: usize,
) -> Vec<Detection> {
    let mut regions: Vec<Detection> = raw
        .into_iter()
        .filter_map(|r| {
            let bbox = BBox::from_f64_clamped(r.bbox, width, height)?;
            let mut points: Vec<Keypoint> = r
                .points
                .iter()
                .filter(|p| p[0].is_finite() && p[1].is_finite())
                .map(|p| Keypoint::new(p[0], p[1]).clamped_to(&bbox))
                .collect();
            if points.is_empty() {
                points.push(bbox.center());
            }
            let score = if r.score.is_finite() {
                r.score.clamp(0.0, 1.0)
            } else {
                0.0
            };
            Some(Detection {
                bbox,
                points,
                score,
            })
        })
        .collect();
    // Stable sort keeps backend order among equal scores.
    regions.sort_by(|a, b| b.score.total_cmp(&a.score));
    regions.truncate(max_regions);
    regions
}
