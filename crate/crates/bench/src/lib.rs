//! Deterministic workloads shared by the benchmarks.

use afford_core::geometry::BBox;
use afford_core::RleMask;

/// A pseudo-random bitmap from a xorshift stream; `density` is the
/// foreground probability out of 256.
pub fn bitmap(width: u32, height: u32, seed: u64, density: u8) -> Vec<bool> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..width * height)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state & 0xFF) < u64::from(density)
        })
        .collect()
}

/// Blobby masks: a few overlapping boxes, typical of segmenter output.
pub fn box_mask(width: u32, height: u32, seed: u32) -> RleMask {
    let boxes: Vec<RleMask> = (0..3)
        .map(|k| {
            let s = seed.wrapping_mul(2654435761).wrapping_add(k * 40503);
            let x0 = s % (width / 2);
            let y0 = (s >> 8) % (height / 2);
            let bbox = BBox::new(x0, y0, x0 + width / 3, y0 + height / 3, width, height)
                .expect("box fits");
            RleMask::from_box(width, height, &bbox).expect("box fits")
        })
        .collect();
    afford_core::mask_union(&boxes).expect("same dims")
}

pub fn mask_pairs(n: u32, width: u32, height: u32) -> Vec<(RleMask, RleMask)> {
    (0..n)
        .map(|i| {
            (
                box_mask(width, height, i),
                box_mask(width, height, i + 7919),
            )
        })
        .collect()
}
