//! Wire formats for the detect / segment / edit services and the
//! chat-completions endpoint, plus response validators and the golden
//! request suite used for conformance checks.
//!
//! ```text
//! POST {endpoint}/detect   {"image_b64", "query", "max_regions"}
//!                        -> {"regions": [{"box": [x0,y0,x1,y1], "points": [[x,y],...], "score"}]}
//! POST {endpoint}/segment  {"image_b64", "prompts": [{"box": [...], "points": [[x,y],...]}]}
//!                        -> {"masks": [{"width", "height", "runs": [...], "score"}]}
//! POST {endpoint}/edit     {"image_b64", "prompt"} -> {"image_b64"}
//! ```

use image::imageops::FilterType;
use image::{GenericImageView, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, RawDetection, SegmentPrompt};
use crate::image_ref::{encode_png, to_base64, ImageRef};

/// Long-side limit for images sent over the wire.
pub const DEFAULT_MAX_SIDE: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_b64: String,
    pub query: String,
    pub max_regions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub regions: Vec<RawDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePrompt {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image_b64: String,
    pub prompts: Vec<WirePrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u32>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub masks: Vec<WireMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub image_b64: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub image_b64: String,
}

/// An image encoded for transmission, possibly downscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct WireImage {
    pub b64: String,
    pub mime: &'static str,
    pub sent_width: u32,
    pub sent_height: u32,
    pub width: u32,
    pub height: u32,
}

impl WireImage {
    pub fn downscaled(&self) -> bool {
        (self.sent_width, self.sent_height) != (self.width, self.height)
    }

    /// Factors mapping sent-image coordinates back to the original.
    pub fn scale(&self) -> (f64, f64) {
        (
            f64::from(self.width) / f64::from(self.sent_width),
            f64::from(self.height) / f64::from(self.sent_height),
        )
    }

    /// Factors mapping original coordinates into the sent image.
    pub fn inverse_scale(&self) -> (f64, f64) {
        let (sx, sy) = self.scale();
        (1.0 / sx, 1.0 / sy)
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.mime, self.b64)
    }
}

/// Encodes an image for the wire, downscaling so the long side is at most
/// `max_side`. Small images are sent as their original bytes.
pub fn prepare_image(image: &ImageRef, max_side: u32) -> Result<WireImage, BackendError> {
    let bytes = image
        .bytes()
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
    if image.long_side() <= max_side {
        let mime = match image::guess_format(&bytes) {
            Ok(ImageFormat::Jpeg) => "image/jpeg",
            _ => "image/png",
        };
        return Ok(WireImage {
            b64: to_base64(&bytes),
            mime,
            sent_width: image.width,
            sent_height: image.height,
            width: image.width,
            height: image.height,
        });
    }
    let decoded = image
        .decode()
        .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
    let factor = f64::from(max_side) / f64::from(image.long_side());
    let sent_width = ((f64::from(image.width) * factor).round() as u32).max(1);
    let sent_height = ((f64::from(image.height) * factor).round() as u32).max(1);
    let small = decoded.resize_exact(sent_width, sent_height, FilterType::Triangle);
    let png = encode_png(&small).map_err(BackendError::InvalidRequest)?;
    Ok(WireImage {
        b64: to_base64(&png),
        mime: "image/png",
        sent_width,
        sent_height,
        width: image.width,
        height: image.height,
    })
}

/// Brings an image returned at sent resolution back to the original size.
pub fn restore_image(
    id: &str,
    returned: ImageRef,
    wire: &WireImage,
) -> Result<ImageRef, BackendError> {
    let dims = (returned.width, returned.height);
    if dims == (wire.width, wire.height) {
        return Ok(returned);
    }
    if dims != (wire.sent_width, wire.sent_height) {
        return Err(BackendError::MalformedResponse(format!(
            "edited image is {}x{}, expected {}x{}",
            dims.0, dims.1, wire.width, wire.height
        )));
    }
    let decoded = returned
        .decode()
        .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let full = decoded.resize_exact(wire.width, wire.height, FilterType::Triangle);
    debug_assert_eq!(full.dimensions(), (wire.width, wire.height));
    let rgb: RgbImage = full.to_rgb8();
    ImageRef::from_rgb(id, &rgb).map_err(|e| BackendError::MalformedResponse(e.to_string()))
}

pub fn wire_prompts(prompts: &[SegmentPrompt], wire: &WireImage) -> Vec<WirePrompt> {
    let (sx, sy) = wire.inverse_scale();
    prompts
        .iter()
        .map(|p| WirePrompt {
            bbox: [
                f64::from(p.bbox.x0) * sx,
                f64::from(p.bbox.y0) * sy,
                f64::from(p.bbox.x1) * sx,
                f64::from(p.bbox.y1) * sy,
            ],
            points: p.points.iter().map(|k| [k.x * sx, k.y * sy]).collect(),
        })
        .collect()
}

pub fn rescale_detections(regions: Vec<RawDetection>, wire: &WireImage) -> Vec<RawDetection> {
    let (sx, sy) = wire.scale();
    regions
        .into_iter()
        .map(|r| RawDetection {
            bbox: [
                r.bbox[0] * sx,
                r.bbox[1] * sy,
                r.bbox[2] * sx,
                r.bbox[3] * sy,
            ],
            points: r.points.iter().map(|p| [p[0] * sx, p[1] * sy]).collect(),
            score: r.score,
        })
        .collect()
}

/// Chat-completions request body with base64 data-URL images.
pub fn chat_completion_body(
    model: &str,
    prompt: &str,
    images: &[WireImage],
    temperature: f64,
    max_tokens: u32,
) -> Value {
    let mut content: Vec<Value> = images
        .iter()
        .map(|img| json!({"type": "image_url", "image_url": {"url": img.data_url()}}))
        .collect();
    content.push(json!({"type": "text", "text": prompt}));
    json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "temperature": temperature,
        "max_tokens": max_tokens,
    })
}

/// First choice's message content.
pub fn chat_completion_text(body: &Value) -> Result<String, BackendError> {
    let content = body
        .pointer("/choices/0/message/content")
        .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return content parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(BackendError::MalformedResponse(format!(
            "message content is not text: {other}"
        ))),
    }
}

fn is_number_array(v: &Value, len: usize) -> bool {
    v.as_array()
        .is_some_and(|a| a.len() == len && a.iter().all(Value::is_number))
}

/// Schema and ordering problems in a `/detect` response.
pub fn check_detect_response(body: &Value, max_regions: usize) -> Vec<String> {
    let mut problems = Vec::new();
    let Some(regions) = body.get("regions").and_then(Value::as_array) else {
        return vec!["missing \"regions\" array".into()];
    };
    if regions.len() > max_regions {
        problems.push(format!(
            "{} regions exceed max_regions {max_regions}",
            regions.len()
        ));
    }
    let mut last_score = f64::INFINITY;
    for (i, r) in regions.iter().enumerate() {
        if !r.get("box").is_some_and(|b| is_number_array(b, 4)) {
            problems.push(format!("regions[{i}].box is not [x0,y0,x1,y1]"));
        }
        match r.get("points") {
            None => {}
            Some(Value::Array(points)) if points.iter().all(|p| is_number_array(p, 2)) => {}
            Some(_) => problems.push(format!("regions[{i}].points is not [[x,y],...]")),
        }
        match r.get("score").and_then(Value::as_f64) {
            Some(s) if (0.0..=1.0).contains(&s) => {
                if s > last_score {
                    problems.push(format!("regions[{i}] breaks descending score order"));
                }
                last_score = s;
            }
            Some(s) => problems.push(format!("regions[{i}].score {s} outside [0,1]")),
            None => problems.push(format!("regions[{i}].score missing or not a number")),
        }
    }
    problems
}

/// Schema, count and run-sum problems in a `/segment` response.
pub fn check_segment_response(
    body: &Value,
    prompts: usize,
    width: u32,
    height: u32,
) -> Vec<String> {
    let mut problems = Vec::new();
    let Some(masks) = body.get("masks").and_then(Value::as_array) else {
        return vec!["missing \"masks\" array".into()];
    };
    if masks.len() != prompts {
        problems.push(format!("{} masks for {prompts} prompts", masks.len()));
    }
    for (i, m) in masks.iter().enumerate() {
        let w = m.get("width").and_then(Value::as_u64);
        let h = m.get("height").and_then(Value::as_u64);
        if w != Some(u64::from(width)) || h != Some(u64::from(height)) {
            problems.push(format!(
                "masks[{i}] is {w:?}x{h:?}, image is {width}x{height}"
            ));
        }
        match m.get("runs").and_then(Value::as_array) {
            Some(runs) if runs.iter().all(Value::is_u64) => {
                let sum: u64 = runs.iter().filter_map(Value::as_u64).sum();
                if sum != u64::from(width) * u64::from(height) {
                    problems.push(format!("masks[{i}] run sum {sum} != {}", width * height));
                }
            }
            _ => problems.push(format!("masks[{i}].runs is not a list of counts")),
        }
        if !m.get("score").is_some_and(Value::is_number) {
            problems.push(format!("masks[{i}].score missing or not a number"));
        }
    }
    problems
}

/// Schema and dimension problems in an `/edit` response.
pub fn check_edit_response(body: &Value, width: u32, height: u32) -> Vec<String> {
    let Some(b64) = body.get("image_b64").and_then(Value::as_str) else {
        return vec!["missing \"image_b64\" string".into()];
    };
    let decoded = crate::image_ref::from_base64(b64)
        .map_err(|e| e.to_string())
        .and_then(|bytes| ImageRef::from_encoded("edit", bytes).map_err(|e| e.to_string()));
    match decoded {
        Ok(img) if (img.width, img.height) == (width, height) => vec![],
        Ok(img) => vec![format!(
            "edited image is {}x{}, input is {width}x{height}",
            img.width, img.height
        )],
        Err(e) => vec![format!("image_b64 does not decode: {e}")],
    }
}

/// One request from the golden protocol suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub name: String,
    /// `detect`, `segment` or `edit`.
    pub route: String,
    pub request: Value,
    pub image_width: u32,
    pub image_height: u32,
}

impl GoldenCase {
    /// Validates a server's response body for this case.
    pub fn check(&self, body: &Value) -> Vec<String> {
        match self.route.as_str() {
            "detect" => {
                let max = self.request["max_regions"].as_u64().unwrap_or(1) as usize;
                check_detect_response(body, max)
            }
            "segment" => {
                let prompts = self.request["prompts"].as_array().map_or(0, Vec::len);
                check_segment_response(body, prompts, self.image_width, self.image_height)
            }
            "edit" => check_edit_response(body, self.image_width, self.image_height),
            other => vec![format!("unknown route {other}")],
        }
    }
}

/// The golden request suite, as shipped in `protocol/golden_requests.json`.
pub fn golden_suite() -> Vec<GoldenCase> {
    serde_json::from_str(include_str!("../../protocol/golden_requests.json"))
        .expect("golden suite is valid JSON")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn image(w: u32, h: u32) -> ImageRef {
        ImageRef::from_rgb("img", &RgbImage::from_pixel(w, h, image::Rgb([9, 9, 9]))).unwrap()
    }

    #[test]
    fn small_images_are_sent_verbatim() {
        let img = image(10, 20);
        let wire = prepare_image(&img, 1024).unwrap();
        assert!(!wire.downscaled());
        assert_eq!(wire.b64, to_base64(&img.bytes().unwrap()));
        assert!(wire.data_url().starts_with("data:image/png;base64,"));
    }

    #[test]
    fn large_images_are_downscaled_and_coordinates_restored() {
        let img = image(2048, 1024);
        let wire = prepare_image(&img, 1024).unwrap();
        assert_eq!((wire.sent_width, wire.sent_height), (1024, 512));
        assert_eq!(wire.scale(), (2.0, 2.0));
        let back = rescale_detections(
            vec![RawDetection {
                bbox: [10.0, 20.0, 30.0, 40.0],
                points: vec![[15.0, 25.0]],
                score: 0.5,
            }],
            &wire,
        );
        assert_eq!(back[0].bbox, [20.0, 40.0, 60.0, 80.0]);
        assert_eq!(back[0].points, vec![[30.0, 50.0]]);
        let prompts = wire_prompts(
            &[SegmentPrompt {
                bbox: BBox::new(100, 100, 200, 300, 2048, 1024).unwrap(),
                points: vec![],
            }],
            &wire,
        );
        assert_eq!(prompts[0].bbox, [50.0, 50.0, 100.0, 150.0]);
    }

    #[test]
    fn restore_edited_image_size() {
        let img = image(2048, 1024);
        let wire = prepare_image(&img, 1024).unwrap();
        let restored = restore_image("sim", image(1024, 512), &wire).unwrap();
        assert_eq!((restored.width, restored.height), (2048, 1024));
        assert!(restore_image("sim", image(300, 300), &wire).is_err());
    }

    #[test]
    fn chat_body_shape() {
        let wire = prepare_image(&image(2, 2), 1024).unwrap();
        let body = chat_completion_body("m", "hello", &[wire], 0.0, 1024);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"][0]["type"], "image_url");
        assert_eq!(body["messages"][0]["content"][1]["text"], "hello");
        assert_eq!(body["max_tokens"], 1024);
        let text =
            chat_completion_text(&json!({"choices":[{"message":{"content":"hi"}}]})).unwrap();
        assert_eq!(text, "hi");
        assert!(chat_completion_text(&json!({"choices":[]})).is_err());
    }

    #[test]
    fn validators_flag_protocol_violations() {
        let ok = json!({"regions":[{"box":[0,0,1,1],"points":[[0.5,0.5]],"score":0.9},{"box":[0,0,2,2],"score":0.1}]});
        assert!(check_detect_response(&ok, 5).is_empty());
        let no_score = json!({"regions":[{"box":[0,0,1,1]}]});
        assert_eq!(check_detect_response(&no_score, 5).len(), 1);
        let unordered =
            json!({"regions":[{"box":[0,0,1,1],"score":0.1},{"box":[0,0,1,1],"score":0.9}]});
        assert_eq!(check_detect_response(&unordered, 5).len(), 1);

        let good = json!({"masks":[{"width":2,"height":2,"runs":[1,3],"score":0.5}]});
        assert!(check_segment_response(&good, 1, 2, 2).is_empty());
        let bad_sum = json!({"masks":[{"width":2,"height":2,"runs":[1,2],"score":0.5}]});
        assert_eq!(check_segment_response(&bad_sum, 1, 2, 2).len(), 1);
        let dropped_score = json!({"masks":[{"width":2,"height":2,"runs":[4]}]});
        assert_eq!(check_segment_response(&dropped_score, 1, 2, 2).len(), 1);
        assert_eq!(check_segment_response(&good, 2, 2, 2).len(), 1);
    }

    #[test]
    fn golden_suite_is_well_formed() {
        let suite = golden_suite();
        assert!(suite.len() >= 4);
        for route in ["detect", "segment", "edit"] {
            assert!(suite.iter().any(|c| c.route == route), "no {route} case");
        }
        for case in &suite {
            let b64 = case.request["image_b64"].as_str().unwrap();
            let img =
                ImageRef::from_encoded("g", crate::image_ref::from_base64(b64).unwrap()).unwrap();
            assert_eq!(
                (img.width, img.height),
                (case.image_width, case.image_height)
            );
        }
    }
}
