use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{default_class_names, Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_IMAGE_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    pub num_classes: usize,
    pub image_size: usize,
    #[serde(default = "one")]
    pub channels: usize,
    /// Inclusive range of ellipses drawn per foreground class.
    pub shapes_per_class: (usize, usize),
    pub noise_sigma: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    /// The eight-sample, four-class fixture the overfit smoke test trains on.
    pub fn smoke() -> Self {
        Self { num_samples: 8, num_classes: 4, image_size: 64, channels: 1, shapes_per_class: (1, 2), noise_sigma: 0.05, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.num_classes) {
            return Err(Error::Config(format!("num_classes: {} outside 2..=256", self.num_classes)));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::Config(format!("image_size: {} too small to place shapes (minimum {MIN_IMAGE_SIZE})", self.image_size)));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels: must be positive".into()));
        }
        let (lo, hi) = self.shapes_per_class;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("shapes_per_class: ({lo}, {hi}) must satisfy 1 <= min <= max")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma: {} must be finite and non-negative", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Mean intensity of class `c`, evenly spaced in (0, 1).
pub fn class_intensity(c: usize, num_classes: usize) -> f64 {
    (c as f64 + 0.5) / num_classes as f64
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, size: f64, scale: f64) -> Self {
        let (rmin, rmax) = (size * 0.08 * scale, size * 0.22 * scale);
        let ry = rng.gen_range(rmin..rmax);
        let rx = rng.gen_range(rmin..rmax);
        let margin = ry.max(rx);
        let cy = rng.gen_range(margin..size - margin);
        let cx = rng.gen_range(margin..size - margin);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        Self { cy, cx, ry, rx, cos: theta.cos(), sin: theta.sin() }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        let (dy, dx) = (r as f64 + 0.5 - self.cy, c as f64 + 0.5 - self.cx);
        let u = (dx * self.cos + dy * self.sin) / self.rx;
        let v = (-dx * self.sin + dy * self.cos) / self.ry;
        u * u + v * v <= 1.0
    }
}

/// Ellipses per foreground class, painted in class order so later classes win
/// overlaps. Intensities are quantized to 16 bits so PNG export is lossless.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.image_size;
    let k = spec.num_classes;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("sigma is finite");
    let width = spec.num_samples.max(1).to_string().len().max(3);
    let samples = (0..spec.num_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let mut label = vec![0u8; n * n];
            for c in 1..k {
                // later classes are drawn smaller so earlier ones stay visible
                let scale = 1.0 - 0.5 * (c - 1) as f64 / (k - 1) as f64;
                let count = rng.gen_range(spec.shapes_per_class.0..=spec.shapes_per_class.1);
                for _ in 0..count {
                    let e = Ellipse::random(&mut rng, n as f64, scale);
                    for (p, l) in label.iter_mut().enumerate() {
                        if e.contains(p / n, p % n) {
                            *l = c as u8;
                        }
                    }
                }
            }
            let mut pixels = Vec::with_capacity(spec.channels * n * n);
            for _ in 0..spec.channels {
                for &l in &label {
                    let mut v = class_intensity(l as usize, k);
                    if spec.noise_sigma > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    pixels.push(quantize(v));
                }
            }
            Sample {
                id: format!("case{i:0width$}"),
                image: Tensor::new(vec![spec.channels, n, n], pixels).expect("length matches"),
                label,
                spacing: None,
            }
        })
        .collect();
    Dataset::new(k, default_class_names(k), samples)
}

/// Clamps to [0, 1] and rounds to the nearest multiple of 1/65535.
pub fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}
