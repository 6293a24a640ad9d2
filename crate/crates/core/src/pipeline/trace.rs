//! The persisted record of one pipeline run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::backends::{BackendError, Capability, DetectionSet};
use crate::image_ref::ImageRef;
use crate::mask::MaskError;
use crate::parse::{ParseError, PartDescription, SimPrompt};
use crate::prompts::{PromptError, RenderedPrompt};
use crate::region::AffordanceResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dreamer,
    Thinker,
    Spotter,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Dreamer => "dreamer",
            Stage::Thinker => "thinker",
            Stage::Spotter => "spotter",
        })
    }
}

/// Why a stage failed.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StageFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Prompt(#[from] PromptErrorText),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("no affordance region found")]
    AffordanceNotFound,
}

/// [`PromptError`] flattened to text so failures stay cloneable.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct PromptErrorText(pub String);

impl From<PromptError> for StageFailure {
    fn from(e: PromptError) -> Self {
        StageFailure::Prompt(PromptErrorText(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage} stage failed: {failure}")]
pub struct StageError {
    pub stage: Stage,
    pub failure: StageFailure,
}

impl StageError {
    pub fn new(stage: Stage, failure: impl Into<StageFailure>) -> Self {
        Self {
            stage,
            failure: failure.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match &self.failure {
            StageFailure::Backend(e) => e.kind_tag(),
            StageFailure::Parse(e) => e.kind_tag(),
            StageFailure::Prompt(_) => "invalid_prompt",
            StageFailure::Mask(_) => "invalid_mask",
            StageFailure::AffordanceNotFound => "affordance_not_found",
        }
    }

    pub fn to_trace(&self) -> TraceError {
        TraceError {
            stage: self.stage,
            kind: self.kind().to_string(),
            raw: match &self.failure {
                StageFailure::Parse(p) => Some(p.raw.clone()),
                _ => None,
            },
            message: self.failure.to_string(),
        }
    }
}

/// Serialized form of a stage failure: `{"stage", "kind", "raw", "message"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceError {
    pub stage: Stage,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawOutput {
    pub stage: Stage,
    pub text: String,
}

/// One logical backend call (retries collapse into one entry).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub capability: Capability,
    pub stage: Stage,
    /// Images sent to a chat call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<usize>,
    /// Text sent to the detector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub item_id: String,
    pub mode: Mode,
    pub task: String,
    pub prompts: Vec<RenderedPrompt>,
    pub raw_outputs: Vec<RawOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_prompt: Option<SimPrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_image: Option<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<PartDescription>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<DetectionSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<AffordanceResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TraceError>,
    /// Set when the imagination stage was skipped after a refusal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Wall time per stage in milliseconds, when enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<Stage, f64>>,
    pub calls: Vec<CallRecord>,
}

impl PipelineTrace {
    pub fn new(item_id: impl Into<String>, mode: Mode, task: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            mode,
            task: task.into(),
            prompts: Vec::new(),
            raw_outputs: Vec::new(),
            sim_prompt: None,
            sim_image: None,
            part: None,
            detections: None,
            result: None,
            error: None,
            degraded: None,
            warnings: Vec::new(),
            timings_ms: None,
            calls: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.result.is_some() && self.error.is_none()
    }

    /// Capabilities invoked, in call order.
    pub fn call_sequence(&self) -> Vec<Capability> {
        self.calls.iter().map(|c| c.capability).collect()
    }

    /// Structural checks: exactly one of result/error, and the recorded
    /// artifacts match the mode.
    pub fn validate(&self) -> Result<(), String> {
        if self.result.is_some() == self.error.is_some() {
            return Err("exactly one of result and error must be set".into());
        }
        let has_sim = self.sim_prompt.is_some() || self.sim_image.is_some();
        match self.mode {
            Mode::Full => {}
            Mode::NoDreamer | Mode::SpotterOnly if has_sim => {
                return Err(format!(
                    "{:?} trace carries imagination artifacts",
                    self.mode
                ));
            }
            _ => {}
        }
        if self.mode == Mode::SpotterOnly && self.part.is_some() {
            return Err("spotter-only trace carries a part description".into());
        }
        Ok(())
    }
}
