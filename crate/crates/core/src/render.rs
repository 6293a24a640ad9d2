//! Qualitative overlays: mask tint, box outline and keypoint markers.

use image::{imageops, Rgb, RgbImage};

use crate::geometry::{BBox, Keypoint};
use crate::mask::RleMask;
use crate::region::AffordanceResult;

pub const MASK_TINT: Rgb<u8> = Rgb([255, 64, 0]);
/// Tint opacity out of 255.
pub const MASK_ALPHA: u16 = 128;
pub const BOX_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const BOX_THICKNESS: u32 = 2;
pub const POINT_COLOR: Rgb<u8> = Rgb([0, 128, 255]);
/// Half-width of the square keypoint marker.
pub const POINT_RADIUS: u32 = 2;

/// Draws every region of `result` onto a copy of `image`.
pub fn overlay(image: &RgbImage, result: &AffordanceResult) -> RgbImage {
    let mut out = image.clone();
    tint_mask(&mut out, &result.union_mask);
    for region in &result.regions {
        outline_box(&mut out, &region.bbox);
    }
    for region in &result.regions {
        for point in &region.points {
            mark_point(&mut out, point);
        }
    }
    out
}

/// The overlay, with the imagined image resized to the same size on the
/// right when present.
pub fn panel(image: &RgbImage, result: &AffordanceResult, sim: Option<&RgbImage>) -> RgbImage {
    let left = overlay(image, result);
    let Some(sim) = sim else { return left };
    let (w, h) = left.dimensions();
    let right = if sim.dimensions() == (w, h) {
        sim.clone()
    } else {
        imageops::resize(sim, w, h, imageops::FilterType::Nearest)
    };
    let mut out = RgbImage::new(w * 2, h);
    imageops::replace(&mut out, &left, 0, 0);
    imageops::replace(&mut out, &right, i64::from(w), 0);
    out
}

/// Alpha-blends the tint over foreground pixels with integer rounding.
/// A mask of different size is ignored.
pub fn tint_mask(img: &mut RgbImage, mask: &RleMask) {
    if (mask.width(), mask.height()) != img.dimensions() {
        return;
    }
    let width = mask.width();
    for run in mask.intervals() {
        for idx in run {
            let px = img.get_pixel_mut(idx % width, idx / width);
            for (c, t) in px.0.iter_mut().zip(MASK_TINT.0) {
                let blended = u16::from(*c) * (255 - MASK_ALPHA) + u16::from(t) * MASK_ALPHA;
                *c = ((blended + 127) / 255) as u8;
            }
        }
    }
}

pub fn outline_box(img: &mut RgbImage, bbox: &BBox) {
    let (w, h) = img.dimensions();
    let x1 = bbox.x1.min(w);
    let y1 = bbox.y1.min(h);
    for y in bbox.y0..y1 {
        for x in bbox.x0..x1 {
            let edge = x < bbox.x0 + BOX_THICKNESS
                || y < bbox.y0 + BOX_THICKNESS
                || x + BOX_THICKNESS >= x1
                || y + BOX_THICKNESS >= y1;
            if edge {
                img.put_pixel(x, y, BOX_COLOR);
            }
        }
    }
}

pub fn mark_point(img: &mut RgbImage, point: &Keypoint) {
    let (w, h) = img.dimensions();
    if !(point.x.is_finite() && point.y.is_finite()) {
        return;
    }
    let cx = point.x.floor().clamp(0.0, f64::from(w.saturating_sub(1))) as u32;
    let cy = point.y.floor().clamp(0.0, f64::from(h.saturating_sub(1))) as u32;
    for y in cy.saturating_sub(POINT_RADIUS)..=(cy + POINT_RADIUS).min(h - 1) {
        for x in cx.saturating_sub(POINT_RADIUS)..=(cx + POINT_RADIUS).min(w - 1) {
            img.put_pixel(x, y, POINT_COLOR);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::AffordanceRegion;

    fn result(mask: RleMask, bbox: BBox) -> AffordanceResult {
        let region = AffordanceRegion::new(bbox, vec![bbox.center()], mask, 0.9);
        AffordanceResult::from_regions(vec![region], 20, 10).unwrap()
    }

    #[test]
    fn tint_blends_with_fixed_alpha() {
        let mut img = RgbImage::from_pixel(20, 10, Rgb([0, 0, 0]));
        let bbox = BBox::new(2, 2, 6, 6, 20, 10).unwrap();
        tint_mask(&mut img, &RleMask::from_box(20, 10, &bbox).unwrap());
        // 255 * 128 / 255 = 128; 64 * 128 / 255 = 32.12 -> 32
        assert_eq!(img.get_pixel(3, 3), &Rgb([128, 32, 0]));
        assert_eq!(img.get_pixel(0, 0), &Rgb([0, 0, 0]));
    }

    #[test]
    fn empty_mask_draws_box_and_point_only() {
        let img = RgbImage::from_pixel(20, 10, Rgb([10, 10, 10]));
        let bbox = BBox::new(4, 1, 16, 9, 20, 10).unwrap();
        let out = overlay(&img, &result(RleMask::empty(20, 10).unwrap(), bbox));
        assert_eq!(out.dimensions(), (20, 10));
        assert_eq!(out.get_pixel(4, 1), &BOX_COLOR);
        assert_eq!(out.get_pixel(10, 5), &POINT_COLOR);
        assert_eq!(out.get_pixel(7, 3), &Rgb([10, 10, 10]));
        assert_eq!(out.get_pixel(0, 0), &Rgb([10, 10, 10]));
    }

    #[test]
    fn sim_image_doubles_the_width() {
        let img = RgbImage::new(20, 10);
        let sim = RgbImage::from_pixel(40, 20, Rgb([1, 2, 3]));
        let bbox = BBox::new(0, 0, 5, 5, 20, 10).unwrap();
        let out = panel(
            &img,
            &result(RleMask::from_box(20, 10, &bbox).unwrap(), bbox),
            Some(&sim),
        );
        assert_eq!(out.dimensions(), (40, 10));
        assert_eq!(out.get_pixel(30, 5), &Rgb([1, 2, 3]));
    }
}
