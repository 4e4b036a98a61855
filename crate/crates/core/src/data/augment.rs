use rand::Rng;

use super::SegSample;
use crate::seed::{self, Stream};
use crate::tensor::Tensor;

/// Range of each colour-jitter scale factor.
pub const JITTER_RANGE: (f32, f32) = (0.8, 1.2);

/// One concrete augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        flip: false,
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
    };

    pub const FLIP: Self = Self {
        flip: true,
        ..Self::IDENTITY
    };

    /// Flip with probability 0.5, jitter scales uniform in [`JITTER_RANGE`].
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let (lo, hi) = JITTER_RANGE;
        Self {
            flip: rng.gen_bool(0.5),
            brightness: rng.gen_range(lo..=hi),
            contrast: rng.gen_range(lo..=hi),
            saturation: rng.gen_range(lo..=hi),
        }
    }

    /// Flip acts jointly on image and mask; the jitter touches the image
    /// only and clamps it back into `[0, 1]`.
    pub fn apply(&self, s: &SegSample) -> SegSample {
        let (h, w) = s.size();
        let (mut image, mut mask) = (s.image.clone(), s.mask.clone());
        if self.flip {
            image = flip_rows(&image, h, w, 3);
            mask = flip_rows(&mask, h, w, 1);
        }
        self.jitter(image.data_mut());
        SegSample {
            id: s.id.clone(),
            image,
            mask,
        }
    }

    fn jitter(&self, px: &mut [f32]) {
        // a factor of exactly 1 skips its step so the identity is bit-exact
        if self.brightness != 1.0 {
            for v in px.iter_mut() {
                *v = (*v * self.brightness).clamp(0.0, 1.0);
            }
        }
        if self.contrast != 1.0 {
            let mean = px.chunks(3).map(luma).sum::<f32>() / (px.len() / 3).max(1) as f32;
            for v in px.iter_mut() {
                *v = ((*v - mean) * self.contrast + mean).clamp(0.0, 1.0);
            }
        }
        if self.saturation != 1.0 {
            for p in px.chunks_mut(3) {
                let g = luma(p);
                for v in p {
                    *v = ((*v - g) * self.saturation + g).clamp(0.0, 1.0);
                }
            }
        }
    }
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Mirrors each row (horizontal flip) of an `[h, w, c]` buffer.
fn flip_rows(t: &Tensor<f32>, h: usize, w: usize, c: usize) -> Tensor<f32> {
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let o = (y * w + x) * c;
            out.extend_from_slice(&src[o..o + c]);
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same length")
}

/// Random flip and colour jitter drawn from item `index` of the augment
/// stream of `seed`.
pub fn augment(s: &SegSample, seed: u64, index: u64) -> SegSample {
    let mut rng = seed::rng(seed, Stream::Augment, index);
    Augmentation::sample(&mut rng).apply(s)
}
