//! Datasets: synthetic generation, PNG folders, preprocessing and augmentation.

mod folder;
mod synthetic;
mod transform;

pub use folder::{load_folder, save_folder, MANIFEST_FILE};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use transform::{augment, preprocess, AugmentOp, Preprocessed};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Spacing;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One image with its label map. `image` is (C, H, W); `label` is H·W values.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f64>,
    pub label: Vec<u8>,
    pub spacing: Option<Spacing>,
}

impl Sample {
    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.image.rank() != 3 {
            return Err(Error::Data(format!("sample {}: image rank {} (expected C, H, W)", self.id, self.image.rank())));
        }
        if self.label.len() != self.height() * self.width() {
            return Err(Error::Data(format!(
                "sample {}: label has {} values for a {}x{} image",
                self.id,
                self.label.len(),
                self.height(),
                self.width()
            )));
        }
        if let Some(v) = self.label.iter().find(|&&v| v as usize >= num_classes) {
            return Err(Error::Data(format!("sample {}: label value {v} not below {num_classes} classes", self.id)));
        }
        Ok(())
    }

    /// Foreground classes that occur in the label.
    pub fn present_classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        self.label.iter().for_each(|&v| seen[v as usize] = true);
        (1..256).filter(|&c| seen[c]).map(|c| c as u8).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(num_classes: usize, class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        if class_names.len() != num_classes {
            return Err(Error::Data(format!("{} class names for {num_classes} classes", class_names.len())));
        }
        for s in &samples {
            s.validate(num_classes)?;
        }
        Ok(Self { num_classes, class_names, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Samples whose id is in `ids`, in dataset order.
    pub fn subset(&self, ids: &[String]) -> Dataset {
        let samples = self.samples.iter().filter(|s| ids.contains(&s.id)).cloned().collect();
        Dataset { num_classes: self.num_classes, class_names: self.class_names.clone(), samples }
    }

    /// Stacks samples into a (B, C, H, W) image batch and a flat label map.
    pub fn batch<T: Scalar>(samples: &[&Sample]) -> Result<(Tensor<T>, Vec<u8>)> {
        let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let dims = first.image.shape().to_vec();
        let mut images = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len() * first.label.len());
        for s in samples {
            if s.image.shape() != dims.as_slice() {
                return Err(Error::Data(format!("sample {} has shape {:?}, batch expects {dims:?}", s.id, s.image.shape())));
            }
            let mut shape = vec![1];
            shape.extend_from_slice(&dims);
            images.push(s.image.cast::<T>().reshape(shape)?);
            labels.extend_from_slice(&s.label);
        }
        Ok((Tensor::stack_batch(&images)?, labels))
    }
}

pub fn default_class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| if c == 0 { "background".to_string() } else { format!("class{c}") }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded split with `round(train_fraction · n)` training ids; both halves sorted.
pub fn split_ids(ids: &[String], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside [0, 1]")));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n_train = (train_fraction * sorted.len() as f64).round() as usize;
    let mut test = sorted.split_off(n_train);
    sorted.sort();
    test.sort();
    Ok(Split { seed, train: sorted, test })
}

/// Written beside generated or exported data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub ids: Vec<String>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub spacing: Option<Spacing>,
    /// Foreground classes present in each sample, parallel to `ids`.
    pub present_classes: Vec<Vec<u8>>,
    pub generator: Option<SyntheticSpec>,
    pub split: Option<Split>,
}

impl DatasetManifest {
    pub fn describe(ds: &Dataset, generator: Option<SyntheticSpec>, split: Option<Split>) -> Self {
        Self {
            ids: ds.ids(),
            num_classes: ds.num_classes,
            class_names: ds.class_names.clone(),
            spacing: ds.samples.first().and_then(|s| s.spacing),
            present_classes: ds.samples.iter().map(Sample::present_classes).collect(),
            generator,
            split,
        }
    }
}
