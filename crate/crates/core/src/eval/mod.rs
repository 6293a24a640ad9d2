//! Dataset manifests and the four-metric evaluation suite.

mod exact_sum;
pub mod manifest;
pub mod metrics;

use std::collections::HashMap;

use thiserror::Error;

pub use exact_sum::ExactSum;
pub use manifest::{load_gt_png, load_manifest, ManifestError, TaskItem};
pub use metrics::{
    passes, score_item, EvalAccumulator, EvalReport, ItemIou, ItemScore, THRESHOLDS,
};

use crate::mask::MaskError;
use crate::pipeline::PipelineTrace;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing traces for items: {}", .0.join(", "))]
    MissingTraces(Vec<String>),
}

/// Scores every manifest item that has a ground truth against its trace.
/// Items without ground truth are skipped; items without a trace are an
/// error listing every missing id.
pub fn evaluate(items: &[TaskItem], traces: &[PipelineTrace]) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &PipelineTrace> =
        traces.iter().map(|t| (t.item_id.as_str(), t)).collect();
    let missing: Vec<String> = items
        .iter()
        .filter(|item| item.gt_mask.is_some() && !by_id.contains_key(item.id.as_str()))
        .map(|item| item.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingTraces(missing));
    }
    let mut acc = EvalAccumulator::new();
    for item in items {
        let Some(gt) = &item.gt_mask else { continue };
        acc.add_score(&score_item(by_id[item.id.as_str()], gt)?)?;
    }
    acc.finalize()
}
