//! Content-addressed record/replay fixtures.
//!
//! Every backend request is reduced to a canonical JSON value (sorted
//! keys, images replaced by the SHA-256 of their bytes) and hashed into a
//! fixture key. A fixture file `{key}.json` holds
//! `{"request_digest", "capability", "response"}`.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::protocol::{DetectResponse, SegmentResponse, WireMask};
use super::{
    BackendError, Capability, ChatBackend, ChatRequest, DetectBackend, EditBackend, RawDetection,
    SegmentBackend, SegmentPrompt,
};
use crate::image_ref::{from_base64, hex_digest, to_base64, ImageRef};
use crate::mask::RleMask;
use crate::parse::SimPrompt;

/// Re-serializes a value with object keys in sorted order at every level.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let sorted: Map<String, Value> = keys
                .into_iter()
                .map(|k| (k.clone(), canonicalize(&map[k])))
                .collect();
            Value::Object(sorted)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

fn canonical_bytes(request: &Value) -> Vec<u8> {
    serde_json::to_vec(&canonicalize(request)).expect("JSON values serialize")
}

/// Stable content hash of a logical request for one capability.
pub fn fixture_key(capability: Capability, request: &Value) -> String {
    let mut bytes = capability.as_str().as_bytes().to_vec();
    bytes.push(b'\n');
    bytes.extend(canonical_bytes(request));
    hex_digest(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub request_digest: String,
    pub capability: Capability,
    pub response: Value,
}

/// A directory of fixture files.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<Fixture>, BackendError> {
        let path = self.path(key);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| BackendError::Store(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(BackendError::Store(format!("{}: {e}", path.display()))),
        }
    }

    /// Writes a fixture under an exclusive per-key lock, via a temporary
    /// file and rename so readers never see partial content.
    pub fn put(&self, key: &str, fixture: &Fixture) -> Result<(), BackendError> {
        let store_err =
            |e: std::io::Error| BackendError::Store(format!("{}: {e}", self.dir.display()));
        fs::create_dir_all(&self.dir).map_err(store_err)?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.dir.join(format!(".{key}.lock")))
            .map_err(store_err)?;
        lock.lock().map_err(store_err)?;
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        let result = (|| {
            let mut file = File::create(&tmp)?;
            file.write_all(&serde_json::to_vec_pretty(fixture).expect("serializable"))?;
            file.write_all(b"\n")?;
            file.sync_all()?;
            fs::rename(&tmp, self.path(key))
        })();
        lock.unlock().map_err(store_err)?;
        result.map_err(store_err)
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|entries| {
                entries
                    .filter_map(Result::ok)
                    .filter(|e| {
                        let name = e.file_name();
                        let name = name.to_string_lossy();
                        name.ends_with(".json") && !name.starts_with('.')
                    })
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn image_digest(image: &ImageRef) -> Result<String, BackendError> {
    image
        .digest()
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))
}

pub fn chat_request_value(request: &ChatRequest) -> Result<Value, BackendError> {
    let images = request
        .images()
        .iter()
        .map(image_digest)
        .collect::<Result<Vec<_>, _>>()?;
    let params = request.params();
    Ok(json!({
        "images": images,
        "prompt": request.prompt(),
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
    }))
}

pub fn edit_request_value(image: &ImageRef, prompt: &SimPrompt) -> Result<Value, BackendError> {
    Ok(json!({"image": image_digest(image)?, "prompt": prompt.text}))
}

pub fn detect_request_value(
    image: &ImageRef,
    query: &str,
    max_regions: usize,
) -> Result<Value, BackendError> {
    Ok(json!({"image": image_digest(image)?, "query": query, "max_regions": max_regions}))
}

pub fn segment_request_value(
    image: &ImageRef,
    prompts: &[SegmentPrompt],
) -> Result<Value, BackendError> {
    Ok(json!({"image": image_digest(image)?, "prompts": prompts}))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Replay,
    Record,
}

/// Serves recorded responses (replay) or forwards to an inner backend and
/// records what it returns (record). Replay never touches the network.
pub struct FixtureBackend<B> {
    store: FixtureStore,
    inner: Option<B>,
    mode: Mode,
}

impl<B> FixtureBackend<B> {
    pub fn replay(store: FixtureStore) -> Self {
        Self {
            store,
            inner: None,
            mode: Mode::Replay,
        }
    }

    pub fn record(store: FixtureStore, inner: B) -> Self {
        Self {
            store,
            inner: Some(inner),
            mode: Mode::Record,
        }
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }

    fn serve<T>(
        &self,
        capability: Capability,
        request: Value,
        live: impl FnOnce(&B) -> Result<T, BackendError>,
        encode: impl FnOnce(&T) -> Value,
        decode: impl FnOnce(Value) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let key = fixture_key(capability, &request);
        match (self.mode, &self.inner) {
            (Mode::Record, Some(inner)) => {
                let response = live(inner)?;
                let fixture = Fixture {
                    request_digest: hex_digest(&canonical_bytes(&request)),
                    capability,
                    response: encode(&response),
                };
                self.store.put(&key, &fixture)?;
                Ok(response)
            }
            _ => {
                let fixture =
                    self.store
                        .get(&key)?
                        .ok_or_else(|| BackendError::MissingFixture {
                            capability,
                            key: key.clone(),
                        })?;
                if fixture.capability != capability {
                    return Err(BackendError::Store(format!(
                        "fixture {key} was recorded for {}",
                        fixture.capability
                    )));
                }
                decode(fixture.response)
            }
        }
    }
}

fn malformed(e: impl std::fmt::Display) -> BackendError {
    BackendError::MalformedResponse(format!("fixture: {e}"))
}

impl<B: ChatBackend> ChatBackend for FixtureBackend<B> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.serve(
            Capability::Chat,
            chat_request_value(request)?,
            |inner| inner.chat(request),
            |text| Value::String(text.clone()),
            |value| match value {
                Value::String(text) => Ok(text),
                other => Err(malformed(format!("chat response is not a string: {other}"))),
            },
        )
    }
}

impl<B: EditBackend> EditBackend for FixtureBackend<B> {
    fn edit_image(&self, image: &ImageRef, prompt: &SimPrompt) -> Result<ImageRef, BackendError> {
        let id = format!("{}-sim", image.id);
        self.serve(
            Capability::Edit,
            edit_request_value(image, prompt)?,
            |inner| inner.edit_image(image, prompt),
            |edited| {
                let bytes = edited.bytes().unwrap_or_default();
                json!({"image_b64": to_base64(&bytes)})
            },
            |value| {
                let b64 = value
                    .get("image_b64")
                    .and_then(Value::as_str)
                    .ok_or_else(|| malformed("edit response lacks image_b64"))?;
                let bytes = from_base64(b64).map_err(malformed)?;
                ImageRef::from_encoded(id.clone(), bytes).map_err(malformed)
            },
        )
    }
}

impl<B: DetectBackend> DetectBackend for FixtureBackend<B> {
    fn detect(
        &self,
        image: &ImageRef,
        query: &str,
        max_regions: usize,
    ) -> Result<Vec<RawDetection>, BackendError> {
        self.serve(
            Capability::Detect,
            detect_request_value(image, query, max_regions)?,
            |inner| inner.detect(image, query, max_regions),
            |regions| {
                serde_json::to_value(DetectResponse {
                    regions: regions.clone(),
                })
                .expect("serializable")
            },
            |value| {
                serde_json::from_value::<DetectResponse>(value)
                    .map(|r| r.regions)
                    .map_err(malformed)
            },
        )
    }
}

impl<B: SegmentBackend> SegmentBackend for FixtureBackend<B> {
    fn segment(
        &self,
        image: &ImageRef,
        prompts: &[SegmentPrompt],
    ) -> Result<Vec<RleMask>, BackendError> {
        self.serve(
            Capability::Segment,
            segment_request_value(image, prompts)?,
            |inner| inner.segment(image, prompts),
            |masks| {
                let masks = masks
                    .iter()
                    .map(|m| WireMask {
                        width: m.width(),
                        height: m.height(),
                        runs: m.runs().to_vec(),
                        score: 1.0,
                    })
                    .collect();
                serde_json::to_value(SegmentResponse { masks }).expect("serializable")
            },
            |value| {
                serde_json::from_value::<SegmentResponse>(value)
                    .map_err(malformed)?
                    .masks
                    .into_iter()
                    .map(|m| RleMask::new(m.width, m.height, m.runs).map_err(malformed))
                    .collect()
            },
        )
    }
}
