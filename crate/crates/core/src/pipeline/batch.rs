//! Bounded-parallel batch runs with per-item trace files as the progress
//! ledger.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Pipeline, PipelineTrace};
use crate::eval::TaskItem;
use crate::image_ref::{ImageRef, ImageSource};

/// A directory of `{item_id}.json` traces with `{item_id}.sim.png` beside
/// them.
#[derive(Debug, Clone)]
pub struct TraceStore {
    dir: PathBuf,
}

impl TraceStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn trace_path(&self, item_id: &str) -> PathBuf {
        self.dir.join(format!("{item_id}.json"))
    }

    pub fn sim_path(&self, item_id: &str) -> PathBuf {
        self.dir.join(format!("{item_id}.sim.png"))
    }

    /// Writes the trace (and its imagined image, if inline) atomically and
    /// returns the trace as persisted, with the image source rewritten to a
    /// path relative to the store.
    pub fn save(&self, trace: &PipelineTrace) -> std::io::Result<PipelineTrace> {
        std::fs::create_dir_all(&self.dir)?;
        let mut stored = trace.clone();
        if let Some(sim) = &mut stored.sim_image {
            if let ImageSource::Bytes(bytes) = &sim.source {
                let name = format!("{}.sim.png", trace.item_id);
                let png = to_png(sim, bytes)?;
                write_atomic(&self.dir.join(&name), &png)?;
                sim.source = ImageSource::Path(PathBuf::from(name));
            }
        }
        let mut json = serde_json::to_vec_pretty(&stored)?;
        json.push(b'\n');
        write_atomic(&self.trace_path(&trace.item_id), &json)?;
        Ok(stored)
    }

    /// Loads one trace. Relative image paths stay relative; use
    /// [`TraceStore::resolve_sim`] to read the imagined image.
    pub fn load(&self, item_id: &str) -> std::io::Result<Option<PipelineTrace>> {
        let path = self.trace_path(item_id);
        match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| invalid(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Every trace in the directory, sorted by item id.
    pub fn load_all(&self) -> std::io::Result<Vec<PipelineTrace>> {
        let mut traces = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(id) = name.strip_suffix(".json") else {
                continue;
            };
            if name.starts_with('.') || id == "config" || id == "report" {
                continue;
            }
            if let Some(trace) = self.load(id)? {
                traces.push(trace);
            }
        }
        traces.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        Ok(traces)
    }

    /// The imagined image with its path resolved against the store.
    pub fn resolve_sim(&self, trace: &PipelineTrace) -> Option<ImageRef> {
        trace
            .sim_image
            .clone()
            .map(|sim| sim.resolved_against(&self.dir))
    }
}

fn to_png(sim: &ImageRef, bytes: &[u8]) -> std::io::Result<Vec<u8>> {
    if bytes.starts_with(b"\x89PNG") {
        return Ok(bytes.to_vec());
    }
    let img = sim.decode().map_err(|e| invalid(e.to_string()))?;
    crate::image_ref::encode_png(&img).map_err(invalid)
}

fn invalid(message: String) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, message)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| invalid(format!("bad path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// One per input item, in input order.
    pub traces: Vec<PipelineTrace>,
    /// Ids executed in this call.
    pub executed: Vec<String>,
    /// Ids taken from previously persisted successful traces.
    pub resumed: Vec<String>,
}

impl BatchOutcome {
    pub fn failed(&self) -> impl Iterator<Item = &PipelineTrace> {
        self.traces.iter().filter(|t| !t.is_ok())
    }
}

/// Runs every item with at most `parallelism` in flight. With a store,
/// items whose persisted trace succeeded under the same mode and task are
/// reused; failed ones are run again. Persistence errors are logged and
/// leave the in-memory trace intact.
pub fn run_batch(
    pipeline: &Pipeline,
    items: &[TaskItem],
    parallelism: usize,
    store: Option<&TraceStore>,
) -> BatchOutcome {
    let parallelism = parallelism.max(1);
    let mut slots: Vec<Option<PipelineTrace>> = vec![None; items.len()];
    let mut resumed = Vec::new();
    if let Some(store) = store {
        for (slot, item) in slots.iter_mut().zip(items) {
            match store.load(&item.id) {
                Ok(Some(trace))
                    if trace.is_ok()
                        && trace.mode == pipeline.config().mode
                        && trace.task == item.task =>
                {
                    resumed.push(item.id.clone());
                    *slot = Some(trace);
                }
                Ok(_) => {}
                Err(e) => tracing::warn!(item = %item.id, "ignoring unreadable trace: {e}"),
            }
        }
    }
    let pending: Vec<usize> = (0..items.len()).filter(|&i| slots[i].is_none()).collect();
    let executed = pending.iter().map(|&i| items[i].id.clone()).collect();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(pending.len()));
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(pending.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&index) = pending.get(k) else { break };
                let item = &items[index];
                let mut trace = pipeline.run_item(item);
                if let Some(store) = store {
                    match store.save(&trace) {
                        Ok(stored) => trace = stored,
                        Err(e) => tracing::error!(item = %item.id, "cannot persist trace: {e}"),
                    }
                }
                tracing::info!(item = %item.id, ok = trace.is_ok(), "item finished");
                results
                    .lock()
                    .expect("no panics hold the lock")
                    .push((index, trace));
            });
        }
    });
    for (index, trace) in results.into_inner().expect("workers joined") {
        slots[index] = Some(trace);
    }
    BatchOutcome {
        traces: slots
            .into_iter()
            .map(|t| t.expect("every item is resumed or executed"))
            .collect(),
        executed,
        resumed,
    }
}
