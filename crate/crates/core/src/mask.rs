//! Run-length encoded binary masks.
//!
//! Masks are stored row-major, background-first: `runs[0]` counts leading
//! background pixels, `runs[1]` the following foreground pixels, and so on.
//! A mask that starts with foreground carries a single leading zero. The
//! canonical form produced by [`RleMask::encode`] has no other zero runs.
//!
//! Set operations (union, intersection counts, IoU) work directly on the
//! foreground intervals and never materialize a bitmap.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Binary mask of `width x height` pixels in run-length form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRle")]
pub struct RleMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

#[derive(Deserialize)]
struct RawRle {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl TryFrom<RawRle> for RleMask {
    type Error = MaskError;

    fn try_from(raw: RawRle) -> Result<Self, Self::Error> {
        RleMask::new(raw.width, raw.height, raw.runs)
    }
}

impl RleMask {
    /// Validates and wraps raw runs. Non-canonical (but valid) run lists are
    /// accepted as-is; call [`RleMask::canonical`] to normalize.
    pub fn new(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
        let expected = u64::from(width) * u64::from(height);
        if total != expected {
            return Err(MaskError::InvalidMask(format!(
                "run sum {total} does not match {width}x{height} = {expected}"
            )));
        }
        if let Some(pos) = runs.windows(2).position(|w| w[0] == 0 && w[1] == 0) {
            return Err(MaskError::InvalidMask(format!(
                "adjacent zero runs at index {pos}"
            )));
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    /// All-background mask.
    pub fn empty(width: u32, height: u32) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            runs: vec![width * height],
        })
    }

    /// All-foreground mask.
    pub fn full(width: u32, height: u32) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            runs: vec![0, width * height],
        })
    }

    /// Encodes a row-major bitmap.
    pub fn encode(bitmap: &[bool], width: u32, height: u32) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize;
        if bitmap.len() != expected {
            return Err(MaskError::InvalidMask(format!(
                "bitmap has {} pixels, expected {width}x{height} = {expected}",
                bitmap.len()
            )));
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0u32;
        for &bit in bitmap {
            if bit != current {
                runs.push(count);
                count = 0;
                current = bit;
            }
            count += 1;
        }
        runs.push(count);
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    /// Builds a mask from sorted, non-overlapping foreground pixel ranges
    /// (flat row-major indices). Touching ranges are merged.
    pub fn from_intervals<I>(width: u32, height: u32, intervals: I) -> Result<Self, MaskError>
    where
        I: IntoIterator<Item = Range<u32>>,
    {
        check_dims(width, height)?;
        let total = width * height;
        let mut runs = Vec::new();
        let mut cursor = 0u32;
        for range in intervals {
            if range.start < cursor || range.end > total || range.start > range.end {
                return Err(MaskError::InvalidArgument(format!(
                    "interval {range:?} out of order or out of bounds"
                )));
            }
            if range.is_empty() {
                continue;
            }
            if range.start == cursor && !runs.is_empty() {
                // Touches the previous foreground run.
                *runs.last_mut().expect("nonempty") += range.end - range.start;
            } else {
                runs.push(range.start - cursor);
                runs.push(range.end - range.start);
            }
            cursor = range.end;
        }
        if cursor < total || runs.is_empty() {
            runs.push(total - cursor);
        }
        Ok(Self {
            width,
            height,
            runs,
        })
    }

    /// Rasterizes a half-open box into a mask of the given size.
    pub fn from_box(width: u32, height: u32, bbox: &BBox) -> Result<Self, MaskError> {
        if bbox.x1 > width || bbox.y1 > height {
            return Err(MaskError::InvalidArgument(format!(
                "box {bbox:?} exceeds {width}x{height}"
            )));
        }
        let rows = bbox.y0..bbox.y1;
        Self::from_intervals(
            width,
            height,
            rows.map(|y| y * width + bbox.x0..y * width + bbox.x1),
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn same_dims(&self, other: &RleMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.runs
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&r| u64::from(r))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Foreground pixel ranges as flat row-major indices, in order.
    pub fn intervals(&self) -> impl Iterator<Item = Range<u32>> + '_ {
        let mut cursor = 0u32;
        self.runs.chunks(2).filter_map(move |pair| {
            cursor += pair[0];
            let len = pair.get(1).copied().unwrap_or(0);
            let start = cursor;
            cursor += len;
            (len > 0).then_some(start..cursor)
        })
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut bitmap = Vec::with_capacity(self.width as usize * self.height as usize);
        let mut value = false;
        for &run in &self.runs {
            bitmap.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        bitmap
    }

    /// Re-encodes into the canonical run form.
    pub fn canonical(&self) -> Self {
        Self::from_intervals(self.width, self.height, self.intervals())
            .expect("intervals of a valid mask are valid")
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let index = y * self.width + x;
        self.intervals()
            .take_while(|r| r.start <= index)
            .any(|r| r.contains(&index))
    }

    /// Tight bounding box of the foreground, if any.
    pub fn bounding_box(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for range in self.intervals() {
            let (first_row, last_row) = (range.start / self.width, (range.end - 1) / self.width);
            y0 = y0.min(first_row);
            y1 = y1.max(last_row + 1);
            if first_row == last_row {
                x0 = x0.min(range.start % self.width);
                x1 = x1.max((range.end - 1) % self.width + 1);
            } else {
                x0 = 0;
                x1 = self.width;
            }
        }
        (y1 > 0).then_some(BBox { x0, y0, x1, y1 })
    }

    /// Nearest-neighbour resample to a new size.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let source = self.decode();
        let (sw, sh) = (u64::from(self.width), u64::from(self.height));
        let mut bitmap = Vec::with_capacity(width as usize * height as usize);
        for y in 0..u64::from(height) {
            // Sample at pixel centres.
            let sy = ((2 * y + 1) * sh / (2 * u64::from(height))).min(sh - 1);
            for x in 0..u64::from(width) {
                let sx = ((2 * x + 1) * sw / (2 * u64::from(width))).min(sw - 1);
                bitmap.push(source[(sy * sw + sx) as usize]);
            }
        }
        Self::encode(&bitmap, width, height)
    }
}

fn check_dims(width: u32, height: u32) -> Result<(), MaskError> {
    if width == 0 || height == 0 {
        return Err(MaskError::InvalidMask(format!(
            "mask dimensions must be positive, got {width}x{height}"
        )));
    }
    if u64::from(width) * u64::from(height) > u64::from(u32::MAX) {
        return Err(MaskError::InvalidMask(format!(
            "mask {width}x{height} too large"
        )));
    }
    Ok(())
}

fn require_same_dims(a: &RleMask, b: &RleMask) -> Result<(), MaskError> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(MaskError::InvalidMask(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )))
    }
}

/// Pixelwise OR of a non-empty list of masks sharing dimensions.
pub fn mask_union(masks: &[RleMask]) -> Result<RleMask, MaskError> {
    let first = masks
        .first()
        .ok_or_else(|| MaskError::InvalidArgument("union of an empty mask list".into()))?;
    for mask in &masks[1..] {
        require_same_dims(first, mask)?;
    }
    let mut intervals: Vec<Range<u32>> = masks.iter().flat_map(|m| m.intervals()).collect();
    intervals.sort_by_key(|r| r.start);
    let mut merged: Vec<Range<u32>> = Vec::with_capacity(intervals.len());
    for range in intervals {
        match merged.last_mut() {
            Some(last) if range.start <= last.end => last.end = last.end.max(range.end),
            _ => merged.push(range),
        }
    }
    RleMask::from_intervals(first.width, first.height, merged)
}

/// Exact `(intersection, union)` foreground pixel counts.
pub fn intersection_union_counts(a: &RleMask, b: &RleMask) -> Result<(u64, u64), MaskError> {
    require_same_dims(a, b)?;
    let mut left = a.intervals().peekable();
    let mut right = b.intervals().peekable();
    let mut intersection = 0u64;
    while let (Some(l), Some(r)) = (left.peek(), right.peek()) {
        let start = l.start.max(r.start);
        let end = l.end.min(r.end);
        if start < end {
            intersection += u64::from(end - start);
        }
        if l.end <= r.end {
            left.next();
        } else {
            right.next();
        }
    }
    let union = a.area() + b.area() - intersection;
    Ok((intersection, union))
}

/// Intersection over union; two empty masks score 1.0.
pub fn iou(a: &RleMask, b: &RleMask) -> Result<f64, MaskError> {
    let (intersection, union) = intersection_union_counts(a, b)?;
    Ok(ratio(intersection, union))
}

pub(crate) fn ratio(intersection: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}
