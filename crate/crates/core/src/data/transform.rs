use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Sample;
use crate::autodiff::resize_bilinear;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub sample: Sample,
    /// The image had a single intensity and was mapped to zeros.
    pub constant_image: bool,
}

/// Nearest-neighbour source index for output pixel `i`.
fn nearest(i: usize, input: usize, output: usize) -> usize {
    (((i as f64 + 0.5) * input as f64 / output as f64).floor() as usize).min(input - 1)
}

/// Resizes to `size`×`size` (bilinear image, nearest label), then maps
/// per-image min-max to [-1, 1].
pub fn preprocess(sample: &Sample, size: usize) -> Result<Preprocessed> {
    let (c, h, w) = (sample.channels(), sample.height(), sample.width());
    if size == 0 || h == 0 || w == 0 {
        return Err(Error::Data(format!("sample {}: cannot resize {h}x{w} to {size}x{size}", sample.id)));
    }
    let image = if (h, w) == (size, size) {
        sample.image.clone()
    } else {
        let x = sample.image.clone().reshape(vec![1, c, h, w])?;
        resize_bilinear(&x, size, size)?.reshape(vec![c, size, size])?
    };
    let label = if (h, w) == (size, size) {
        sample.label.clone()
    } else {
        let rows: Vec<usize> = (0..size).map(|i| nearest(i, h, size)).collect();
        let cols: Vec<usize> = (0..size).map(|j| nearest(j, w, size)).collect();
        rows.iter().flat_map(|&r| cols.iter().map(move |&c| sample.label[r * w + c])).collect()
    };
    let (lo, hi) = image.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let constant_image = hi <= lo;
    let image = if constant_image {
        Tensor::zeros(image.shape().to_vec())
    } else {
        image.map(|v| ((v - lo) / (hi - lo) - 0.5) / 0.5)
    };
    Ok(Preprocessed { sample: Sample { image, label, ..sample.clone() }, constant_image })
}

/// A flip/rotation drawn for one (seed, id, epoch).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentOp {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
}

impl AugmentOp {
    pub const IDENTITY: AugmentOp = AugmentOp { flip_h: false, flip_v: false, quarter_turns: 0 };

    pub fn draw(seed: u64, id: &str, epoch: u64) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(epoch.to_le_bytes());
        h.update(id.as_bytes());
        let b = h.finalize()[0];
        Self { flip_h: b & 1 == 1, flip_v: b & 2 == 2, quarter_turns: (b >> 2) & 3 }
    }

    /// Output shape and source pixel of every output pixel for an h×w input.
    fn map(&self, h: usize, w: usize) -> (usize, usize, Vec<usize>) {
        let (mut h, mut w) = (h, w);
        let mut src: Vec<usize> = (0..h * w).collect();
        if self.flip_h {
            src = (0..h * w).map(|i| src[(i / w) * w + w - 1 - i % w]).collect();
        }
        if self.flip_v {
            src = (0..h * w).map(|i| src[(h - 1 - i / w) * w + i % w]).collect();
        }
        for _ in 0..self.quarter_turns {
            // out (r, c) of shape (w, h) takes in (c, w - 1 - r)
            src = (0..h * w).map(|i| src[(i % h) * w + w - 1 - i / h]).collect();
            (h, w) = (w, h);
        }
        (h, w, src)
    }
}

/// Applies the same flip/rotation to image and label.
pub fn augment(sample: &Sample, op: AugmentOp) -> Sample {
    if op == AugmentOp::IDENTITY {
        return sample.clone();
    }
    let (c, h, w) = (sample.channels(), sample.height(), sample.width());
    let (oh, ow, src) = op.map(h, w);
    let plane = h * w;
    let data = sample.image.data();
    let image: Vec<f64> = (0..c).flat_map(|ch| src.iter().map(move |&s| data[ch * plane + s])).collect();
    let label = src.iter().map(|&s| sample.label[s]).collect();
    Sample { image: Tensor::new(vec![c, oh, ow], image).expect("permutation keeps size"), label, ..sample.clone() }
}
