//! JSONL task manifests.
//!
//! One object per line:
//! `{"id": str, "image": path, "task": str, "gt": {"mask_path": path} | {"rle": {...}} | null}`.
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image_ref::ImageRef;
use crate::mask::RleMask;

/// One evaluation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskItem {
    pub id: String,
    pub image: ImageRef,
    pub task: String,
    pub gt_mask: Option<RleMask>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub id: String,
    pub image: PathBuf,
    pub task: String,
    #[serde(default)]
    pub gt: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GroundTruth {
    MaskPath { mask_path: PathBuf },
    Rle { rle: RleMask },
}

/// Reads a single-channel PNG; any nonzero pixel is foreground.
pub fn load_gt_png(path: &Path) -> Result<RleMask, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let luma = img.to_luma8();
    let bits: Vec<bool> = luma.pixels().map(|p| p.0[0] != 0).collect();
    RleMask::encode(&bits, luma.width(), luma.height()).map_err(|e| e.to_string())
}

/// Loads and validates every line, failing on the first bad one.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<TaskItem>, ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| ManifestError::Line {
            path: path.to_path_buf(),
            line: index + 1,
            message,
        };
        let entry: ManifestLine =
            serde_json::from_str(line).map_err(|e| fail(format!("invalid entry: {e}")))?;
        let item = resolve(entry, base).map_err(fail)?;
        if !seen.insert(item.id.clone()) {
            return Err(fail(format!("duplicate id {:?}", item.id)));
        }
        items.push(item);
    }
    Ok(items)
}

fn resolve(entry: ManifestLine, base: &Path) -> Result<TaskItem, String> {
    if entry.id.trim().is_empty() {
        return Err("empty id".into());
    }
    if entry.id.contains(['/', '\\']) || entry.id.starts_with('.') {
        return Err(format!("id {:?} is not usable as a file name", entry.id));
    }
    if entry.task.trim().is_empty() {
        return Err("empty task".into());
    }
    let image = ImageRef::from_path(entry.id.clone(), base.join(&entry.image))
        .map_err(|e| e.to_string())?;
    let gt_mask = match entry.gt {
        None => None,
        Some(GroundTruth::Rle { rle }) => Some(rle),
        Some(GroundTruth::MaskPath { mask_path }) => Some(load_gt_png(&base.join(mask_path))?),
    };
    if let Some(gt) = &gt_mask {
        if (gt.width(), gt.height()) != (image.width, image.height) {
            return Err(format!(
                "ground-truth mask is {}x{}, image is {}x{}",
                gt.width(),
                gt.height(),
                image.width,
                image.height
            ));
        }
    }
    Ok(TaskItem {
        id: entry.id,
        image,
        task: entry.task,
        gt_mask,
    })
}
