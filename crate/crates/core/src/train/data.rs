//! Synthetic segmentation images: a background, a rectangle and a disc.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::LabelMap;
use crate::tensor::{Shape4, Tensor};

pub const TOY_CLASSES: usize = 3;

/// Batch of images `(n, 3, h, w)` with matching labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: LabelMap,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.n
    }

    pub fn is_empty(&self) -> bool {
        self.labels.n == 0
    }

    /// Nearest-neighbour resize of images and labels together.
    pub fn resized(&self, h: usize, w: usize) -> Result<Dataset> {
        Ok(Dataset {
            images: self.images.resize_nearest(h, w)?,
            labels: self.labels.resize_nearest(h, w)?,
        })
    }
}

const BASE: [[f32; 3]; TOY_CLASSES] = [[0.2, 0.3, 0.8], [0.9, 0.2, 0.1], [0.2, 0.85, 0.25]];

/// `count` images of `size x size`. Class 0 background, 1 rectangle, 2 disc (drawn on top).
pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Result<Dataset> {
    if count == 0 || size < 16 {
        return Err(Error::Usage(format!("need at least one image of at least 16 px (got {count} x {size})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let mut labels = Vec::with_capacity(count * size * size);
    let mut pixels = vec![0f32; count * 3 * size * size];
    for n in 0..count {
        let rw = rng.gen_range(0.25..0.5) * s;
        let rh = rng.gen_range(0.25..0.5) * s;
        let rx = rng.gen_range(0.0..s - rw);
        let ry = rng.gen_range(0.0..s - rh);
        let r = rng.gen_range(0.12..0.22) * s;
        let cx = rng.gen_range(r..s - r);
        let cy = rng.gen_range(r..s - r);
        let tint: Vec<[f32; 3]> = BASE
            .iter()
            .map(|c| c.map(|v| (v + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0)))
            .collect();
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
                let mut class = 0usize;
                if fx >= rx && fx < rx + rw && fy >= ry && fy < ry + rh {
                    class = 1;
                }
                if (fx - cx).powi(2) + (fy - cy).powi(2) <= r * r {
                    class = 2;
                }
                labels.push(class as u32);
                for ch in 0..3 {
                    let noise: f32 = rng.gen_range(-0.05..0.05);
                    pixels[((n * 3 + ch) * size + y) * size + x] = tint[class][ch] + noise - 0.5;
                }
            }
        }
    }
    Ok(Dataset {
        images: Tensor::from_vec(Shape4::new(count, 3, size, size)?, pixels)?,
        labels: LabelMap::new(count, size, size, labels)?,
    })
}
