//! Deterministic in-process backends for tests and offline demos.
//!
//! Each scripted backend is driven either by a closure or by a fixed
//! response, and records the requests it received.

use std::collections::VecDeque;
use std::sync::Mutex;

use super::{
    BackendError, ChatBackend, ChatRequest, DetectBackend, EditBackend, RawDetection,
    SegmentBackend, SegmentPrompt,
};
use crate::image_ref::ImageRef;
use crate::mask::RleMask;
use crate::parse::SimPrompt;

type ChatFn = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;
type EditFn = dyn Fn(&ImageRef, &SimPrompt) -> Result<ImageRef, BackendError> + Send + Sync;
type DetectFn =
    dyn Fn(&ImageRef, &str, usize) -> Result<Vec<RawDetection>, BackendError> + Send + Sync;
type SegmentFn =
    dyn Fn(&ImageRef, &[SegmentPrompt]) -> Result<Vec<RleMask>, BackendError> + Send + Sync;

enum ChatScript {
    Queue(Mutex<VecDeque<Result<String, BackendError>>>),
    Func(Box<ChatFn>),
}

/// Chat replies from a queue or a closure.
pub struct ScriptedChat {
    script: ChatScript,
    calls: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    /// Replies in order; an exhausted queue is a malformed response.
    pub fn queue<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::queue_results(replies.into_iter().map(|r| Ok(r.into())))
    }

    pub fn queue_results(replies: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        Self {
            script: ChatScript::Queue(Mutex::new(replies.into_iter().collect())),
            calls: Mutex::default(),
        }
    }

    pub fn from_fn(
        f: impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            script: ChatScript::Func(Box::new(f)),
            calls: Mutex::default(),
        }
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.lock().expect("poisoned").push(request.clone());
        match &self.script {
            ChatScript::Queue(q) => q.lock().expect("poisoned").pop_front().unwrap_or_else(|| {
                Err(BackendError::MalformedResponse(
                    "scripted chat queue exhausted".into(),
                ))
            }),
            ChatScript::Func(f) => f(request),
        }
    }
}

pub struct ScriptedEdit {
    script: Box<EditFn>,
    calls: Mutex<Vec<(String, String)>>,
}

impl ScriptedEdit {
    pub fn from_fn(
        f: impl Fn(&ImageRef, &SimPrompt) -> Result<ImageRef, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            script: Box::new(f),
            calls: Mutex::default(),
        }
    }

    /// Degenerate generator: returns its input unchanged.
    pub fn identity() -> Self {
        Self::from_fn(|img, _| Ok(img.clone()))
    }

    /// Declines every edit.
    pub fn refusing() -> Self {
        Self::from_fn(|_, _| Err(BackendError::ContentRefused("scripted refusal".into())))
    }

    /// `(image id, prompt text)` per call.
    pub fn calls(&self) -> Vec<(String, String)> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl EditBackend for ScriptedEdit {
    fn edit_image(&self, image: &ImageRef, prompt: &SimPrompt) -> Result<ImageRef, BackendError> {
        self.calls
            .lock()
            .expect("poisoned")
            .push((image.id.clone(), prompt.text.clone()));
        (self.script)(image, prompt)
    }
}

pub struct ScriptedDetect {
    script: Box<DetectFn>,
    calls: Mutex<Vec<String>>,
}

impl ScriptedDetect {
    pub fn from_fn(
        f: impl Fn(&ImageRef, &str, usize) -> Result<Vec<RawDetection>, BackendError>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self {
            script: Box::new(f),
            calls: Mutex::default(),
        }
    }

    /// Same detections for every query.
    pub fn fixed(regions: Vec<RawDetection>) -> Self {
        Self::from_fn(move |_, _, _| Ok(regions.clone()))
    }

    /// Queries received, in call order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl DetectBackend for ScriptedDetect {
    fn detect(
        &self,
        image: &ImageRef,
        query: &str,
        max_regions: usize,
    ) -> Result<Vec<RawDetection>, BackendError> {
        self.calls.lock().expect("poisoned").push(query.to_string());
        (self.script)(image, query, max_regions)
    }
}

pub struct ScriptedSegment {
    script: Box<SegmentFn>,
    calls: Mutex<Vec<usize>>,
}

impl ScriptedSegment {
    pub fn from_fn(
        f: impl Fn(&ImageRef, &[SegmentPrompt]) -> Result<Vec<RleMask>, BackendError>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self {
            script: Box::new(f),
            calls: Mutex::default(),
        }
    }

    /// Each mask is its prompt box, rasterized.
    pub fn fill_boxes() -> Self {
        Self::from_fn(|img, prompts| {
            prompts
                .iter()
                .map(|p| {
                    RleMask::from_box(img.width, img.height, &p.bbox)
                        .map_err(|e| BackendError::MalformedResponse(e.to_string()))
                })
                .collect()
        })
    }

    /// Number of prompts per call.
    pub fn calls(&self) -> Vec<usize> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl SegmentBackend for ScriptedSegment {
    fn segment(
        &self,
        image: &ImageRef,
        prompts: &[SegmentPrompt],
    ) -> Result<Vec<RleMask>, BackendError> {
        self.calls.lock().expect("poisoned").push(prompts.len());
        (self.script)(image, prompts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::DecodeParams;

    #[test]
    fn queue_replies_in_order() {
        let chat = ScriptedChat::queue(["A", "B"]);
        let img = ImageRef::from_rgb("i", &image::RgbImage::new(1, 1)).unwrap();
        let req = ChatRequest::new(vec![img], "p", DecodeParams::default()).unwrap();
        assert_eq!(chat.chat(&req).unwrap(), "A");
        assert_eq!(chat.chat(&req).unwrap(), "B");
        assert!(chat.chat(&req).is_err());
        assert_eq!(chat.calls().len(), 3);
    }
}
