//! Boxes and keypoints in pixel coordinates (origin top-left).

use serde::{Deserialize, Serialize};

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    /// Checked constructor against image bounds.
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, width: u32, height: u32) -> Option<Self> {
        (x0 < x1 && y0 < y1 && x1 <= width && y1 <= height).then_some(Self { x0, y0, x1, y1 })
    }

    /// Snaps fractional backend coordinates outward to whole pixels and
    /// clips to the image. Returns `None` when nothing of the box remains.
    pub fn from_f64_clamped(coords: [f64; 4], width: u32, height: u32) -> Option<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return None;
        }
        let clip = |v: f64, max: u32| v.clamp(0.0, f64::from(max));
        let x0 = clip(coords[0].min(coords[2]).floor(), width) as u32;
        let y0 = clip(coords[1].min(coords[3]).floor(), height) as u32;
        let x1 = clip(coords[0].max(coords[2]).ceil(), width) as u32;
        let y1 = clip(coords[1].max(coords[3]).ceil(), height) as u32;
        Self::new(x0, y0, x1, y1, width, height)
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn center(&self) -> Keypoint {
        Keypoint::new(
            f64::from(self.x0 + self.x1) / 2.0,
            f64::from(self.y0 + self.y1) / 2.0,
        )
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Maps the box through a uniform scale, rounding outward.
    pub fn scaled(&self, factor: f64, width: u32, height: u32) -> Option<Self> {
        Self::from_f64_clamped(
            [
                f64::from(self.x0) * factor,
                f64::from(self.y0) * factor,
                f64::from(self.x1) * factor,
                f64::from(self.y1) * factor,
            ],
            width,
            height,
        )
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        b.as_array()
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = String;

    fn try_from([x0, y0, x1, y1]: [u32; 4]) -> Result<Self, Self::Error> {
        if x0 < x1 && y0 < y1 {
            Ok(Self { x0, y0, x1, y1 })
        } else {
            Err(format!("degenerate box [{x0}, {y0}, {x1}, {y1}]"))
        }
    }
}

/// A point anchor; coordinates may be fractional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, label: None }
    }

    /// Pulls the point onto the closed extent of `bbox`.
    pub fn clamped_to(&self, bbox: &BBox) -> Self {
        let x = if self.x.is_finite() {
            self.x
        } else {
            bbox.center().x
        };
        let y = if self.y.is_finite() {
            self.y
        } else {
            bbox.center().y
        };
        Self {
            x: x.clamp(f64::from(bbox.x0), f64::from(bbox.x1)),
            y: y.clamp(f64::from(bbox.y0), f64::from(bbox.y1)),
            label: self.label.clone(),
        }
    }

    pub fn inside(&self, bbox: &BBox) -> bool {
        (f64::from(bbox.x0)..=f64::from(bbox.x1)).contains(&self.x)
            && (f64::from(bbox.y0)..=f64::from(bbox.y1)).contains(&self.y)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            x: self.x * factor,
            y: self.y * factor,
            label: self.label.clone(),
        }
    }
}
