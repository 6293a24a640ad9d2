//! Affordance regions: the box, keypoints and mask that answer a task.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, Keypoint};
use crate::mask::{mask_union, MaskError, RleMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceRegion {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub points: Vec<Keypoint>,
    pub mask: RleMask,
    pub score: f64,
}

impl AffordanceRegion {
    /// Builds a region, clamping keypoints into the box and the score into
    /// `[0, 1]`.
    pub fn new(bbox: BBox, points: Vec<Keypoint>, mask: RleMask, score: f64) -> Self {
        let points = points.iter().map(|p| p.clamped_to(&bbox)).collect();
        let score = if score.is_finite() {
            score.clamp(0.0, 1.0)
        } else {
            0.0
        };
        Self {
            bbox,
            points,
            mask,
            score,
        }
    }

    /// Descending score, then larger mask, then box `(y0, x0)`.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| other.mask.area().cmp(&self.mask.area()))
            .then_with(|| (self.bbox.y0, self.bbox.x0).cmp(&(other.bbox.y0, other.bbox.x0)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceResult {
    pub regions: Vec<AffordanceRegion>,
    pub union_mask: RleMask,
}

impl AffordanceResult {
    /// Orders the regions and unions their masks. Every mask must match the
    /// image dimensions.
    pub fn from_regions(
        mut regions: Vec<AffordanceRegion>,
        width: u32,
        height: u32,
    ) -> Result<Self, MaskError> {
        if regions.is_empty() {
            return Err(MaskError::InvalidArgument(
                "an affordance result needs at least one region".into(),
            ));
        }
        if let Some(bad) = regions
            .iter()
            .find(|r| r.mask.width() != width || r.mask.height() != height)
        {
            return Err(MaskError::InvalidMask(format!(
                "region mask is {}x{}, image is {width}x{height}",
                bad.mask.width(),
                bad.mask.height()
            )));
        }
        regions.sort_by(AffordanceRegion::rank);
        let masks: Vec<RleMask> = regions.iter().map(|r| r.mask.clone()).collect();
        let union_mask = mask_union(&masks)?;
        Ok(Self {
            regions,
            union_mask,
        })
    }

    /// Checks the structural invariants; used by tests over pipeline output.
    pub fn validate(&self, width: u32, height: u32) -> Result<(), String> {
        if self.regions.is_empty() {
            return Err("no regions".into());
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.mask.width() != width || r.mask.height() != height {
                return Err(format!("region {i} mask dimensions differ from image"));
            }
            if !r.bbox.fits(width, height) {
                return Err(format!("region {i} box outside image"));
            }
            if let Some(p) = r.points.iter().find(|p| !p.inside(&r.bbox)) {
                return Err(format!("region {i} keypoint {p:?} outside its box"));
            }
            if !(0.0..=1.0).contains(&r.score) {
                return Err(format!("region {i} score {} out of range", r.score));
            }
        }
        if self
            .regions
            .windows(2)
            .any(|w| w[0].rank(&w[1]) == Ordering::Greater)
        {
            return Err("regions not in rank order".into());
        }
        let masks: Vec<RleMask> = self.regions.iter().map(|r| r.mask.clone()).collect();
        let union = mask_union(&masks).map_err(|e| e.to_string())?;
        if union != self.union_mask.canonical() {
            return Err("union_mask is not the OR of region masks".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(bbox: [u32; 4], score: f64) -> AffordanceRegion {
        let b = BBox::try_from(bbox).unwrap();
        AffordanceRegion::new(
            b,
            vec![b.center()],
            RleMask::from_box(8, 8, &b).unwrap(),
            score,
        )
    }

    #[test]
    fn ordering_is_score_then_area_then_position() {
        let result = AffordanceResult::from_regions(
            vec![
                region([0, 4, 2, 6], 0.5),
                region([0, 0, 1, 1], 0.9),
                region([0, 0, 4, 4], 0.5),
                region([3, 0, 5, 2], 0.5),
                region([0, 0, 2, 2], 0.5),
            ],
            8,
            8,
        )
        .unwrap();
        let boxes: Vec<[u32; 4]> = result.regions.iter().map(|r| r.bbox.as_array()).collect();
        assert_eq!(
            boxes,
            vec![
                [0, 0, 1, 1],
                [0, 0, 4, 4],
                [0, 0, 2, 2],
                [3, 0, 5, 2],
                [0, 4, 2, 6]
            ]
        );
        assert_eq!(result.union_mask.area(), 16 + 2 + 4);
        result.validate(8, 8).unwrap();
    }

    #[test]
    fn keypoints_outside_the_box_are_clamped() {
        let b = BBox::try_from([2, 2, 4, 4]).unwrap();
        let r = AffordanceRegion::new(
            b,
            vec![Keypoint::new(9.0, -1.0)],
            RleMask::from_box(8, 8, &b).unwrap(),
            1.7,
        );
        assert_eq!((r.points[0].x, r.points[0].y), (4.0, 2.0));
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn rejects_mismatched_dimensions_and_empty_lists() {
        assert!(AffordanceResult::from_regions(vec![], 8, 8).is_err());
        assert!(AffordanceResult::from_regions(vec![region([0, 0, 1, 1], 1.0)], 4, 4).is_err());
    }
}
