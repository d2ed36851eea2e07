use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::tensor::Tensor;

/// Random horizontal flip plus integer translation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Largest shift per axis in pixels.
    pub max_shift: usize,
    pub hflip: bool,
}

impl AugmentPolicy {
    pub const NONE: Self = Self { max_shift: 0, hflip: false };

    pub fn is_identity(&self) -> bool {
        self.max_shift == 0 && !self.hflip
    }
}

pub fn flip_horizontal(pixels: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);
    let src = pixels.data();
    Tensor::from_fn(vec![c, h, w], |idx| {
        let col = idx % w;
        src[idx - col + (w - 1 - col)]
    })
}

/// Moves content by `(dx, dy)`: `out[y][x] = in[y − dy][x − dx]`, vacated pixels 0.0.
pub fn translate(pixels: &Tensor<f32>, dx: i64, dy: i64) -> Tensor<f32> {
    let (c, h, w) = (pixels.shape()[0], pixels.shape()[1], pixels.shape()[2]);
    let src = pixels.data();
    Tensor::from_fn(vec![c, h, w], |idx| {
        let x = (idx % w) as i64 - dx;
        let y = ((idx / w) % h) as i64 - dy;
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            src[(idx / (h * w)) * h * w + y as usize * w + x as usize]
        }
    })
}

/// Draws a flip (probability 1/2, when enabled) and then a shift in
/// `[-max_shift, max_shift]²`. The label is untouched.
pub fn augment<R: Rng + ?Sized>(img: &LabeledImage, policy: &AugmentPolicy, rng: &mut R) -> LabeledImage {
    let mut pixels = if policy.hflip && rng.random_bool(0.5) {
        flip_horizontal(&img.pixels)
    } else {
        img.pixels.clone()
    };
    if policy.max_shift > 0 {
        let s = policy.max_shift as i64;
        let dx = rng.random_range(-s..=s);
        let dy = rng.random_range(-s..=s);
        if dx != 0 || dy != 0 {
            pixels = translate(&pixels, dx, dy);
        }
    }
    LabeledImage {
        pixels,
        label: img.label,
    }
}
