//! Crack datasets: the synthetic generator, PNG folder I/O, augmentation
//! and seeded splitting/shuffling.
//!
//! Images are channel-last `[S, S, 3]` in `[0, 1]`; masks are `[S, S]`
//! with values exactly 0 or 1.

mod augment;
mod folder;
mod synth;

use rand::seq::SliceRandom;

use crate::error::{contract_err, dim_err, Result};
use crate::seed::{self, Stream};
use crate::tensor::Tensor;

pub use augment::{augment, Augmentation, JITTER_RANGE};
pub use folder::{
    load_folder, load_image, load_root, save_image_png, save_mask_png, write_dataset, IMAGES_DIR,
    MASKS_DIR,
};
pub use synth::{generate_synthetic, render, Stroke, SynthConfig, SynthImage, GEN_CONFIG_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl SegSample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let s = Self {
            id: id.into(),
            image,
            mask,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn size(&self) -> (usize, usize) {
        (self.mask.shape()[0], self.mask.shape()[1])
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = match self.mask.shape() {
            [h, w] => (*h, *w),
            s => return Err(dim_err!("mask must be [H, W], got {s:?}")),
        };
        if self.image.shape() != [h, w, 3] {
            return Err(dim_err!(
                "image {:?} does not match mask {h}x{w}",
                self.image.shape()
            ));
        }
        if self.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(contract_err!("mask of `{}` is not binary", self.id));
        }
        Ok(())
    }
}

/// Seeded permutation of `0..n`.
pub fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed, Stream::Shuffle, epoch));
    idx
}

/// Seeded partition into parts of the given sizes; the sizes must add up
/// to the sample count.
pub fn split<S: Clone>(items: &[S], sizes: &[usize], seed: u64) -> Result<Vec<Vec<S>>> {
    let total: usize = sizes.iter().sum();
    if total != items.len() {
        return Err(contract_err!(
            "split sizes {sizes:?} add up to {total}, not {}",
            items.len()
        ));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut seed::rng(seed, Stream::Split, 0));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut rest = &idx[..];
    for &n in sizes {
        let (head, tail) = rest.split_at(n);
        let mut head = head.to_vec();
        head.sort_unstable();
        parts.push(head.into_iter().map(|i| items[i].clone()).collect());
        rest = tail;
    }
    Ok(parts)
}

/// Holds out `round(fraction · n)` samples (at least one when `n > 1`
/// and `fraction > 0`) for validation.
pub fn holdout<S: Clone>(items: &[S], fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(contract_err!(
            "validation fraction {fraction} outside [0, 1)"
        ));
    }
    let n = items.len();
    let mut v = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n > 1 {
        v = v.max(1);
    }
    v = v.min(n.saturating_sub(1));
    let mut parts = split(items, &[n - v, v], seed)?;
    let val = parts.pop().expect("two parts");
    let train = parts.pop().expect("two parts");
    Ok((train, val))
}
