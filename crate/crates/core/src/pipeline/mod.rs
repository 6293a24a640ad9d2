//! The three-stage orchestrator: imagine the interaction, reason about the
//! part, then detect and segment it.
//!
//! ```text
//! FULL         chat(dreamer) -> edit -> chat(thinker, 2 images) -> detect -> segment
//! NO_DREAMER                           chat(thinker, 1 image)   -> detect -> segment
//! SPOTTER_ONLY                                  detect(raw task) -> segment
//! ```

mod batch;
mod trace;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{run_batch, BatchOutcome, TraceStore};
pub use trace::{
    CallRecord, PipelineTrace, RawOutput, Stage, StageError, StageFailure, TraceError,
};

use crate::backends::{
    BackendError, Backends, Capability, ChatRequest, DecodeParams, DetectionSet,
};
use crate::eval::TaskItem;
use crate::image_ref::ImageRef;
use crate::parse::{self, PartDescription, SimPrompt};
use crate::prompts::{PromptSet, RenderedPrompt};
use crate::region::{AffordanceRegion, AffordanceResult};

/// Appended to the reasoning prompt after an unparseable reply.
pub const CORRECTIVE_SUFFIX: &str = "Your previous reply was not valid JSON with keys task, object_name, object_part. Reply with only the JSON.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    NoDreamer,
    SpotterOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::NoDreamer, Mode::SpotterOnly];

    pub fn required_capabilities(&self) -> &'static [Capability] {
        match self {
            Mode::Full => &Capability::ALL,
            Mode::NoDreamer => &[Capability::Chat, Capability::Detect, Capability::Segment],
            Mode::SpotterOnly => &[Capability::Detect, Capability::Segment],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoDreamer => "no_dreamer",
            Mode::SpotterOnly => "spotter_only",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Mode::Full),
            "no_dreamer" => Ok(Mode::NoDreamer),
            "spotter_only" => Ok(Mode::SpotterOnly),
            other => Err(format!(
                "unknown mode {other:?} (expected full, no_dreamer or spotter_only)"
            )),
        }
    }
}

fn default_max_regions() -> usize {
    1
}

fn default_reprompt_budget() -> u32 {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    #[serde(default = "default_max_regions")]
    pub max_regions: usize,
    #[serde(default = "default_reprompt_budget")]
    pub reprompt_budget: u32,
    #[serde(default)]
    pub score_threshold: f64,
    #[serde(default)]
    pub decode: DecodeParams,
    /// Record per-stage wall time in traces. Disable for byte-stable traces.
    #[serde(default = "default_true")]
    pub record_timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::new(Mode::Full)
    }
}

impl PipelineConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            max_regions: default_max_regions(),
            reprompt_budget: default_reprompt_budget(),
            score_threshold: 0.0,
            decode: DecodeParams::default(),
            record_timings: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("mode {mode} needs the {missing} capability")]
    MissingCapability { mode: Mode, missing: Capability },
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
}

/// A configured pipeline. Stateless across items; safe to share between
/// threads.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    backends: Backends,
    prompts: PromptSet,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, backends: Backends) -> Result<Self, PipelineError> {
        Self::with_prompts(config, backends, PromptSet::default())
    }

    pub fn with_prompts(
        config: PipelineConfig,
        backends: Backends,
        prompts: PromptSet,
    ) -> Result<Self, PipelineError> {
        if config.max_regions == 0 {
            return Err(PipelineError::InvalidConfig(
                "max_regions must be at least 1".into(),
            ));
        }
        if !config.score_threshold.is_finite() {
            return Err(PipelineError::InvalidConfig(
                "score_threshold must be finite".into(),
            ));
        }
        if let Some(&missing) = config
            .mode
            .required_capabilities()
            .iter()
            .find(|c| !backends.has(**c))
        {
            return Err(PipelineError::MissingCapability {
                mode: config.mode,
                missing,
            });
        }
        Ok(Self {
            config,
            backends,
            prompts,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Imagination: write an edit instruction, then render the interaction.
    pub fn dream(
        &self,
        image: &ImageRef,
        task: &str,
        trace: &mut PipelineTrace,
    ) -> Result<(SimPrompt, ImageRef), StageError> {
        let stage = Stage::Dreamer;
        let prompt = self
            .prompts
            .dreamer
            .render(task)
            .map_err(|e| StageError::new(stage, e))?;
        trace.prompts.push(prompt.clone());
        let request = ChatRequest::new(vec![image.clone()], prompt.text, self.config.decode)
            .map_err(|e| StageError::new(stage, e))?;
        let raw = self.call_chat(&request, stage, trace)?;
        let sim_prompt =
            parse::parse_dreamer_output(&raw).map_err(|e| StageError::new(stage, e))?;
        if sim_prompt.repaired {
            trace.warnings.push("edit prompt was repaired".into());
        }
        trace.sim_prompt = Some(sim_prompt.clone());
        let edited = self.record(trace, Capability::Edit, stage, None, None, || {
            self.backends.edit_image(image, &sim_prompt)
        });
        let edited = edited.map_err(|e| StageError::new(stage, e))?;
        trace.sim_image = Some(edited.clone());
        Ok((sim_prompt, edited))
    }

    /// Reasoning: name the part to act on, re-prompting on unparseable
    /// replies up to the configured budget.
    pub fn think(
        &self,
        image: &ImageRef,
        sim_image: Option<&ImageRef>,
        task: &str,
        trace: &mut PipelineTrace,
    ) -> Result<PartDescription, StageError> {
        let stage = Stage::Thinker;
        let base = self
            .prompts
            .thinker
            .render(task)
            .map_err(|e| StageError::new(stage, e))?;
        let images: Vec<ImageRef> = std::iter::once(image.clone())
            .chain(sim_image.cloned())
            .collect();
        let mut last_error = None;
        for attempt in 0..=self.config.reprompt_budget {
            let prompt = if attempt == 0 {
                base.clone()
            } else {
                RenderedPrompt {
                    text: format!("{}\n\n{CORRECTIVE_SUFFIX}", base.text),
                    ..base.clone()
                }
            };
            trace.prompts.push(prompt.clone());
            let request = ChatRequest::new(images.clone(), prompt.text, self.config.decode)
                .map_err(|e| StageError::new(stage, e))?;
            let raw = self.call_chat(&request, stage, trace)?;
            match parse::parse_thinker_output_with_warnings(&raw) {
                Ok((part, warnings)) => {
                    trace.warnings.extend(warnings);
                    trace.part = Some(part.clone());
                    return Ok(part);
                }
                Err(e) => {
                    trace
                        .warnings
                        .push(format!("thinker reply {} unparseable: {e}", attempt + 1));
                    last_error = Some(e);
                }
            }
        }
        Err(StageError::new(
            stage,
            last_error.expect("at least one attempt is made"),
        ))
    }

    /// Grounding: detect boxes for the query, then segment each.
    pub fn spot(
        &self,
        image: &ImageRef,
        query: &str,
        trace: &mut PipelineTrace,
    ) -> Result<AffordanceResult, StageError> {
        let stage = Stage::Spotter;
        let detections = self
            .record(trace, Capability::Detect, stage, None, Some(query), || {
                self.backends.detect(image, query, self.config.max_regions)
            })
            .map_err(|e| StageError::new(stage, e))?;
        let kept: Vec<_> = detections
            .regions
            .iter()
            .filter(|d| d.score >= self.config.score_threshold)
            .cloned()
            .collect();
        trace.detections = Some(detections.clone());
        if kept.is_empty() {
            return Err(StageError::new(stage, StageFailure::AffordanceNotFound));
        }
        let boxes: Vec<_> = kept.iter().map(|d| d.bbox).collect();
        let points: Vec<_> = kept.iter().map(|d| d.points.clone()).collect();
        let masks = self
            .record(trace, Capability::Segment, stage, None, None, || {
                self.backends.segment(image, &boxes, &points)
            })
            .map_err(|e| StageError::new(stage, e))?;
        let regions = kept
            .into_iter()
            .zip(masks)
            .map(|(d, mask)| AffordanceRegion::new(d.bbox, d.points, mask, d.score))
            .collect();
        AffordanceResult::from_regions(regions, image.width, image.height)
            .map_err(|e| StageError::new(stage, e))
    }

    /// Runs one item end to end. Never fails: errors land in the trace.
    pub fn run_item(&self, item: &TaskItem) -> PipelineTrace {
        let mut trace = PipelineTrace::new(&item.id, self.config.mode, &item.task);
        let mut timings = BTreeMap::new();
        let outcome = self.run_stages(item, &mut trace, &mut timings);
        match outcome {
            Ok(result) => trace.result = Some(result),
            Err(e) => trace.error = Some(e.to_trace()),
        }
        if self.config.record_timings {
            trace.timings_ms = Some(timings);
        }
        trace
    }

    fn run_stages(
        &self,
        item: &TaskItem,
        trace: &mut PipelineTrace,
        timings: &mut BTreeMap<Stage, f64>,
    ) -> Result<AffordanceResult, StageError> {
        let image = &item.image;
        let query = match self.config.mode {
            Mode::SpotterOnly => item.task.trim().to_string(),
            Mode::Full | Mode::NoDreamer => {
                let sim_image = if self.config.mode == Mode::Full {
                    let started = Instant::now();
                    let dreamed = self.dream(image, &item.task, trace);
                    timings.insert(Stage::Dreamer, elapsed_ms(started));
                    match dreamed {
                        Ok((_, sim)) => Some(sim),
                        Err(StageError {
                            failure: StageFailure::Backend(BackendError::ContentRefused(reason)),
                            ..
                        }) => {
                            trace.degraded = Some(format!(
                                "image edit refused ({reason}); continued without imagination"
                            ));
                            None
                        }
                        Err(e) => return Err(e),
                    }
                } else {
                    None
                };
                let started = Instant::now();
                let part = self.think(image, sim_image.as_ref(), &item.task, trace);
                timings.insert(Stage::Thinker, elapsed_ms(started));
                parse::describe_query(&part?)
            }
        };
        let started = Instant::now();
        let result = self.spot(image, &query, trace);
        timings.insert(Stage::Spotter, elapsed_ms(started));
        result
    }

    fn call_chat(
        &self,
        request: &ChatRequest,
        stage: Stage,
        trace: &mut PipelineTrace,
    ) -> Result<String, StageError> {
        let raw = self
            .record(
                trace,
                Capability::Chat,
                stage,
                Some(request.images().len()),
                None,
                || self.backends.chat(request),
            )
            .map_err(|e| StageError::new(stage, e))?;
        trace.raw_outputs.push(RawOutput {
            stage,
            text: raw.clone(),
        });
        Ok(raw)
    }

    fn record<T>(
        &self,
        trace: &mut PipelineTrace,
        capability: Capability,
        stage: Stage,
        images: Option<usize>,
        query: Option<&str>,
        call: impl FnOnce() -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let result = call();
        trace.calls.push(CallRecord {
            capability,
            stage,
            images,
            query: query.map(str::to_owned),
            error: result.as_ref().err().map(|e| e.kind_tag().to_string()),
        });
        result
    }
}

fn elapsed_ms(started: Instant) -> f64 {
    started.elapsed().as_secs_f64() * 1000.0
}

/// Detection set helper for callers that only need boxes.
pub fn detection_boxes(set: &DetectionSet) -> Vec<crate::geometry::BBox> {
    set.regions.iter().map(|d| d.bbox).collect()
}
