//! Block-matching motion fields and per-video motion statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{GrayImage, VideoTensor};

/// Per-block displacement `(dx, dy)` from one frame to the next, row-major over blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MotionField {
    pub blocks_y: usize,
    pub blocks_x: usize,
    pub vectors: Vec<(i32, i32)>,
}

impl MotionField {
    pub fn mean_magnitude(&self) -> f64 {
        let total: f64 = self
            .vectors
            .iter()
            .map(|&(dx, dy)| ((dx * dx + dy * dy) as f64).sqrt())
            .sum();
        total / self.vectors.len().max(1) as f64
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|&v| v == (0, 0))
    }
}

/// Candidate displacements ordered by magnitude, then row-major (`dy`, then `dx`).
fn candidates(radius: i32) -> Vec<(i32, i32)> {
    let mut c: Vec<(i32, i32)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .collect();
    c.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    c
}

/// For each `block × block` tile of `a` (edge tiles truncated), the displacement
/// within `radius` whose sum of absolute differences against `b` is smallest.
/// Indexing into `b` wraps around the frame border.
pub fn block_motion_field(
    a: &GrayImage,
    b: &GrayImage,
    block: usize,
    radius: usize,
) -> Result<MotionField> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::invalid(format!(
            "frames differ in size: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    if block == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    let (h, w) = (a.height, a.width);
    let (by, bx) = (h.div_ceil(block), w.div_ceil(block));
    let cands = candidates(radius as i32);
    let mut vectors = Vec::with_capacity(by * bx);
    for yb in 0..by {
        for xb in 0..bx {
            let (y0, y1) = (yb * block, ((yb + 1) * block).min(h));
            let (x0, x1) = (xb * block, ((xb + 1) * block).min(w));
            let mut best = (f64::INFINITY, (0, 0));
            for &(dx, dy) in &cands {
                let mut sad = 0.0;
                for y in y0..y1 {
                    let ty = (y as i64 + dy as i64).rem_euclid(h as i64) as usize;
                    for x in x0..x1 {
                        let tx = (x as i64 + dx as i64).rem_euclid(w as i64) as usize;
                        sad += (b.data[ty * w + tx] - a.data[y * w + x]).abs();
                    }
                }
                if sad < best.0 {
                    best = (sad, (dx, dy));
                }
            }
            vectors.push(best.1);
        }
    }
    Ok(MotionField {
        blocks_y: by,
        blocks_x: bx,
        vectors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionStats {
    /// Mean vector magnitude for each consecutive frame pair; the PCA descriptor.
    pub pair_magnitudes: Vec<f64>,
    pub mean_magnitude: f64,
    /// Population variance of `pair_magnitudes`.
    pub magnitude_variance: f64,
}

pub fn motion_stats(video: &VideoTensor, block: usize, radius: usize) -> Result<MotionStats> {
    if video.frames() < 2 {
        return Err(Error::invalid("motion statistics need at least two frames"));
    }
    let frames: Vec<GrayImage> = (0..video.frames()).map(|t| video.luma_image(t)).collect();
    let pair_magnitudes = frames
        .windows(2)
        .map(|p| block_motion_field(&p[0], &p[1], block, radius).map(|f| f.mean_magnitude()))
        .collect::<Result<Vec<_>>>()?;
    let n = pair_magnitudes.len() as f64;
    let mean_magnitude = pair_magnitudes.iter().sum::<f64>() / n;
    let magnitude_variance = pair_magnitudes
        .iter()
        .map(|m| (m - mean_magnitude).powi(2))
        .sum::<f64>()
        / n;
    Ok(MotionStats {
        pair_magnitudes,
        mean_magnitude,
        magnitude_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(h, w, (0..h * w).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    fn shift(img: &GrayImage, dx: i64, dy: i64) -> GrayImage {
        let (h, w) = (img.height as i64, img.width as i64);
        let data = (0..h * w)
            .map(|k| {
                let (y, x) = (k / w, k % w);
                img.data[((y - dy).rem_euclid(h) * w + (x - dx).rem_euclid(w)) as usize]
            })
            .collect();
        GrayImage::new(img.height, img.width, data).unwrap()
    }

    /// Exhaustive oracle without the ordered candidate list: scan and keep the best by (SAD, |v|², dy, dx).
    fn oracle_block(
        a: &GrayImage,
        b: &GrayImage,
        y0: usize,
        x0: usize,
        block: usize,
        radius: i64,
    ) -> (i32, i32) {
        let (h, w) = (a.height as i64, a.width as i64);
        let mut best: Option<(f64, i64, i64, i64)> = None;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let mut sad = 0.0;
                for y in y0 as i64..(y0 + block).min(a.height) as i64 {
                    for x in x0 as i64..(x0 + block).min(a.width) as i64 {
                        let t = ((y + dy).rem_euclid(h) * w + (x + dx).rem_euclid(w)) as usize;
                        sad += (b.data[t] - a.data[(y * w + x) as usize]).abs();
                    }
                }
                let key = (sad, dx * dx + dy * dy, dy, dx);
                if best.is_none_or(|b| key.partial_cmp(&b) == Some(std::cmp::Ordering::Less)) {
                    best = Some(key);
                }
            }
        }
        let b = best.unwrap();
        (b.3 as i32, b.2 as i32)
    }

    #[test]
    fn identical_and_uniform_frames_give_zero_motion() {
        let a = textured(16, 16, 1);
        assert!(block_motion_field(&a, &a, 4, 2).unwrap().is_zero());
        let u = GrayImage::filled(16, 16, 0.4);
        assert!(block_motion_field(&u, &u, 4, 3).unwrap().is_zero());
    }

    #[test]
    fn circular_shift_is_recovered() {
        let a = textured(16, 16, 2);
        let b = shift(&a, 2, 0);
        let f = block_motion_field(&a, &b, 4, 2).unwrap();
        assert!(f.vectors.iter().all(|&v| v == (2, 0)), "{:?}", f.vectors);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let a = textured(10, 12, 3);
        let b = shift(&textured(10, 12, 3), 1, -1);
        let b = GrayImage {
            data: b
                .data
                .iter()
                .zip(&textured(10, 12, 9).data)
                .map(|(x, n)| x * 0.9 + n * 0.1)
                .collect(),
            ..b
        };
        let f = block_motion_field(&a, &b, 4, 2).unwrap();
        for yb in 0..f.blocks_y {
            for xb in 0..f.blocks_x {
                assert_eq!(
                    f.vectors[yb * f.blocks_x + xb],
                    oracle_block(&a, &b, yb * 4, xb * 4, 4, 2)
                );
            }
        }
    }

    #[test]
    fn static_video_has_no_motion() {
        let img = textured(8, 8, 4);
        let v = VideoTensor::from_frames(&[img.clone(), img.clone(), img]).unwrap();
        let s = motion_stats(&v, 4, 2).unwrap();
        assert_eq!(s.mean_magnitude, 0.0);
        assert_eq!(s.magnitude_variance, 0.0);
    }

    proptest! {
        #[test]
        fn field_is_equivariant_to_common_shift(seed in any::<u64>(), sx in -5i64..5, sy in -5i64..5) {
            let a = textured(12, 12, seed);
            let b = shift(&a, 1, 2);
            let f1 = block_motion_field(&a, &b, 4, 2).unwrap();
            let f2 = block_motion_field(&shift(&a, sx * 4, sy * 4), &shift(&b, sx * 4, sy * 4), 4, 2).unwrap();
            let mut v1 = f1.vectors.clone();
            let mut v2 = f2.vectors.clone();
            v1.sort();
            v2.sort();
            prop_assert_eq!(v1, v2);
        }
    }
}
