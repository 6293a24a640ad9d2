//! Training-free affordance grounding.
//!
//! A task instruction and an image go through three stages: an image
//! editor imagines the interaction, a multimodal chat model names the
//! object part to act on, and a detector plus a promptable segmenter
//! localize that part. Every model sits behind a trait in [`backends`];
//! [`eval`] scores the resulting masks.

pub mod backends;
pub mod eval;
pub mod geometry;
pub mod image_ref;
pub mod mask;
pub mod parse;
pub mod pipeline;
pub mod prompts;
pub mod region;
pub mod render;
pub mod synthetic;

pub use backends::{
    BackendError, Backends, BackendsConfig, Capability, ChatRequest, DecodeParams, Detection,
    DetectionSet,
};
pub use eval::{evaluate, load_manifest, EvalAccumulator, EvalError, EvalReport, TaskItem};
pub use geometry::{BBox, Keypoint};
pub use image_ref::{ImageError, ImageRef, ImageSource};
pub use mask::{iou, mask_union, MaskError, RleMask};
pub use parse::{
    parse_dreamer_output, parse_thinker_output, ParseError, PartDescription, SimPrompt,
};
pub use pipeline::{run_batch, Mode, Pipeline, PipelineConfig, PipelineTrace, TraceStore};
pub use prompts::{PromptSet, PromptTemplate, RenderedPrompt};
pub use region::{AffordanceRegion, AffordanceResult};
