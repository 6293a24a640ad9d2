//! A 10-item desk-scale dataset with scripted backends whose accuracy per
//! mode is fixed by construction.
//!
//! Each 64x48 image holds one 16x16 object with an 8x8 part in its
//! top-left quadrant; the ground truth is the part. The scripted models
//! behave as follows:
//!
//! | mode         | even items       | odd items        |
//! |--------------|------------------|------------------|
//! | FULL         | part (IoU 1)     | part (IoU 1)     |
//! | NO_DREAMER   | part (IoU 1)     | object (IoU 1/4) |
//! | SPOTTER_ONLY | object (IoU 1/4) | object (IoU 1/4) |
//!
//! except that the detector finds nothing for the last item's raw task.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde_json::json;

use crate::backends::fixtures::{FixtureBackend, FixtureStore};
use crate::backends::scripted::{ScriptedChat, ScriptedDetect, ScriptedEdit, ScriptedSegment};
use crate::backends::{BackendError, Backends, RawDetection, RetryPolicy};
use crate::eval::{load_manifest, TaskItem};
use crate::geometry::BBox;
use crate::image_ref::ImageRef;
use crate::mask::RleMask;
use crate::pipeline::{Mode, Pipeline, PipelineConfig};

pub const WIDTH: u32 = 64;
pub const HEIGHT: u32 = 48;
pub const OBJECT_SIDE: u32 = 16;
pub const PART_SIDE: u32 = 8;

const BACKGROUND: Rgb<u8> = Rgb([200, 200, 190]);
const OBJECT: Rgb<u8> = Rgb([70, 90, 160]);
const PART: Rgb<u8> = Rgb([160, 70, 60]);
const HAND: Rgb<u8> = Rgb([230, 180, 150]);

/// `(task, object, part)` per item.
const ITEMS: [(&str, &str, &str); 10] = [
    ("cut a sheet of paper", "scissors", "handle"),
    ("pour tea into a cup", "kettle", "handle"),
    ("drink some coffee", "mug", "handle"),
    ("open the drawer", "drawer", "knob"),
    ("hammer in a nail", "hammer", "grip"),
    ("write a note", "pen", "barrel"),
    ("slice the bread", "knife", "handle"),
    ("stir the soup", "spoon", "handle"),
    ("open the door", "door", "lever"),
    ("ring the bell", "bell", "button"),
];

/// One dataset entry with its geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticItem {
    pub index: usize,
    pub id: String,
    pub task: &'static str,
    pub object: &'static str,
    pub part: &'static str,
    pub object_box: BBox,
    pub part_box: BBox,
}

impl SyntheticItem {
    pub fn part_phrase(&self) -> String {
        format!("the {} of the {}", self.part, self.object)
    }

    /// What the reasoning model answers without imagination for odd items.
    pub fn wrong_phrase(&self) -> String {
        format!("the body of the {}", self.object)
    }

    pub fn gt_mask(&self) -> RleMask {
        RleMask::from_box(WIDTH, HEIGHT, &self.part_box).expect("part box fits")
    }

    pub fn render(&self) -> RgbImage {
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
        fill(&mut img, &self.object_box, OBJECT);
        fill(&mut img, &self.part_box, PART);
        img
    }

    /// The imagined interaction: a hand over the part.
    pub fn render_sim(&self) -> RgbImage {
        let mut img = self.render();
        fill(&mut img, &self.part_box, HAND);
        img
    }

    fn misled_without_imagination(&self) -> bool {
        self.index % 2 == 1
    }

    fn invisible_to_spotter(&self) -> bool {
        self.index == ITEMS.len() - 1
    }
}

fn fill(img: &mut RgbImage, bbox: &BBox, color: Rgb<u8>) {
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            img.put_pixel(x, y, color);
        }
    }
}

/// The ten items. Objects sit on a 3-column grid.
pub fn items() -> Vec<SyntheticItem> {
    ITEMS
        .iter()
        .enumerate()
        .map(|(index, &(task, object, part))| {
            let i = index as u32;
            let x0 = 2 + (i % 3) * 20 + (i % 2);
            let y0 = 2 + ((i / 3) % 3) * 14 + (i / 9);
            let object_box = BBox::new(x0, y0, x0 + OBJECT_SIDE, y0 + OBJECT_SIDE, WIDTH, HEIGHT)
                .expect("object box fits");
            let part_box = BBox::new(x0, y0, x0 + PART_SIDE, y0 + PART_SIDE, WIDTH, HEIGHT)
                .expect("part box fits");
            SyntheticItem {
                index,
                id: format!("desk-{index:02}"),
                task,
                object,
                part,
                object_box,
                part_box,
            }
        })
        .collect()
}

/// Hand-computed metrics per mode: `(gIoU, cIoU, P@50, P@50:95)`.
pub fn expected_metrics(mode: Mode) -> (f64, f64, f64, f64) {
    match mode {
        Mode::Full => (1.0, 1.0, 1.0, 1.0),
        // 5 exact items, 5 at 64/256.
        Mode::NoDreamer => (0.625, 640.0 / 1600.0, 0.5, 0.5),
        // 9 at 64/256, one miss scored (0, 64).
        Mode::SpotterOnly => (0.225, 576.0 / 2368.0, 0.0, 0.0),
    }
}

fn find_item<'a>(items: &'a [SyntheticItem], text: &str) -> Option<&'a SyntheticItem> {
    items.iter().find(|it| {
        text.contains(&format!("\"{}\"", it.task)) || text.ends_with(&format!("\n{}", it.task))
    })
}

fn thinker_reply(item: &SyntheticItem, phrase: &str) -> String {
    let output = json!({
        "task": item.task,
        "object_name": item.object,
        "object_part": phrase,
    });
    format!(
        "### Thinking\nThe person must hold the {} to {}.\n### Output\n{}",
        item.object, item.task, output
    )
}

/// Chat model: edit instructions for imagination prompts; part answers for
/// reasoning prompts, wrong on odd items when only one image is given.
pub fn scripted_chat() -> ScriptedChat {
    let items = items();
    ScriptedChat::from_fn(move |request| {
        let prompt = request.prompt();
        let item = find_item(&items, prompt)
            .ok_or_else(|| BackendError::InvalidRequest("prompt names no synthetic task".into()))?;
        if prompt.contains("Image-Editing Prompt Writer") {
            return Ok(format!(
                "Edit the input image to show a hand gripping the {} of the {}, keep others unchanged.",
                item.part, item.object
            ));
        }
        let phrase = if request.images().len() == 1 && item.misled_without_imagination() {
            item.wrong_phrase()
        } else {
            item.part_phrase()
        };
        Ok(thinker_reply(item, &phrase))
    })
}

pub fn scripted_edit() -> ScriptedEdit {
    let items = items();
    ScriptedEdit::from_fn(move |image, prompt| {
        let item = items
            .iter()
            .find(|it| it.id == image.id || prompt.text.contains(&it.part_phrase()))
            .ok_or_else(|| BackendError::InvalidRequest("unknown image".into()))?;
        ImageRef::from_rgb(format!("{}-sim", image.id), &item.render_sim())
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))
    })
}

/// Detector: the part for its exact phrase, the whole object for the
/// item's task or the wrong phrase.
pub fn scripted_detect() -> ScriptedDetect {
    let items = items();
    ScriptedDetect::from_fn(move |_, query, _| {
        let as_raw = |b: &BBox| [b.x0, b.y0, b.x1, b.y1].map(f64::from);
        if let Some(item) = items.iter().find(|it| query == it.part_phrase()) {
            return Ok(vec![RawDetection {
                bbox: as_raw(&item.part_box),
                points: Vec::new(),
                score: 0.9,
            }]);
        }
        let item = items
            .iter()
            .find(|it| query == it.task)
            .or_else(|| items.iter().find(|it| query == it.wrong_phrase()));
        Ok(match item {
            Some(item) if query == item.task && item.invisible_to_spotter() => Vec::new(),
            Some(item) => vec![RawDetection {
                bbox: as_raw(&item.object_box),
                points: Vec::new(),
                score: 0.6,
            }],
            None => Vec::new(),
        })
    })
}

/// All four scripted backends without retries.
pub fn scripted_backends() -> Backends {
    Backends::new()
        .with_chat(Arc::new(scripted_chat()), RetryPolicy::none())
        .with_edit(Arc::new(scripted_edit()), RetryPolicy::none())
        .with_detect(Arc::new(scripted_detect()), RetryPolicy::none())
        .with_segment(Arc::new(ScriptedSegment::fill_boxes()), RetryPolicy::none())
}

/// Scripted backends wrapped to record every response into `store`.
pub fn recording_backends(store: &FixtureStore) -> Backends {
    Backends::new()
        .with_chat(
            Arc::new(FixtureBackend::record(store.clone(), scripted_chat())),
            RetryPolicy::none(),
        )
        .with_edit(
            Arc::new(FixtureBackend::record(store.clone(), scripted_edit())),
            RetryPolicy::none(),
        )
        .with_detect(
            Arc::new(FixtureBackend::record(store.clone(), scripted_detect())),
            RetryPolicy::none(),
        )
        .with_segment(
            Arc::new(FixtureBackend::record(
                store.clone(),
                ScriptedSegment::fill_boxes(),
            )),
            RetryPolicy::none(),
        )
}

/// Paths of a written dataset.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub fixtures: PathBuf,
}

/// Writes images, ground truths (even items as PNG masks, odd items as
/// inline RLE), `manifest.jsonl`, and, when `record_modes` is non-empty,
/// replay fixtures for those modes under `fixtures/`.
pub fn write_dataset(root: &Path, record_modes: &[Mode]) -> std::io::Result<SyntheticDataset> {
    let images = root.join("images");
    std::fs::create_dir_all(&images)?;
    let mut manifest = String::new();
    for item in items() {
        let image_rel = format!("images/{}.png", item.id);
        item.render()
            .save(root.join(&image_rel))
            .map_err(std::io::Error::other)?;
        let gt = if item.index % 2 == 0 {
            let mask_rel = format!("images/{}.gt.png", item.id);
            let mut png = GrayImage::new(WIDTH, HEIGHT);
            for y in item.part_box.y0..item.part_box.y1 {
                for x in item.part_box.x0..item.part_box.x1 {
                    png.put_pixel(x, y, Luma([255]));
                }
            }
            png.save(root.join(&mask_rel))
                .map_err(std::io::Error::other)?;
            json!({"mask_path": mask_rel})
        } else {
            json!({"rle": item.gt_mask()})
        };
        let line = json!({"id": item.id, "image": image_rel, "task": item.task, "gt": gt});
        manifest.push_str(&line.to_string());
        manifest.push('\n');
    }
    let manifest_path = root.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest)?;
    let fixtures = root.join("fixtures");
    std::fs::create_dir_all(&fixtures)?;
    if !record_modes.is_empty() {
        let loaded = load_manifest(&manifest_path).map_err(std::io::Error::other)?;
        record_fixtures(&loaded, &FixtureStore::new(&fixtures), record_modes)
            .map_err(std::io::Error::other)?;
    }
    Ok(SyntheticDataset {
        root: root.to_path_buf(),
        manifest: manifest_path,
        fixtures,
    })
}

/// Runs the scripted pipeline over `items` in each mode, recording
/// fixtures. Returns the number of failed items per mode.
pub fn record_fixtures(
    items: &[TaskItem],
    store: &FixtureStore,
    modes: &[Mode],
) -> Result<Vec<(Mode, usize)>, String> {
    let backends = recording_backends(store);
    modes
        .iter()
        .map(|&mode| {
            let pipeline = Pipeline::new(PipelineConfig::new(mode), backends.clone())
                .map_err(|e| e.to_string())?;
            let failed = items
                .iter()
                .filter(|item| !pipeline.run_item(item).is_ok())
                .count();
            Ok((mode, failed))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_is_inside_the_canvas_and_distinct() {
        let all = items();
        assert_eq!(all.len(), 10);
        for it in &all {
            assert!(it.object_box.fits(WIDTH, HEIGHT));
            assert_eq!(it.part_box.area() * 4, it.object_box.area());
        }
        let tasks: std::collections::HashSet<_> = all.iter().map(|i| i.task).collect();
        assert_eq!(tasks.len(), 10);
    }

    #[test]
    fn object_iou_against_part_is_a_quarter() {
        let it = &items()[3];
        let object = RleMask::from_box(WIDTH, HEIGHT, &it.object_box).unwrap();
        assert_eq!(crate::mask::iou(&object, &it.gt_mask()).unwrap(), 0.25);
    }
}
