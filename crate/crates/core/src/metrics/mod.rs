//! Segmentation metrics: pixel ratios, overlap, Hausdorff distance and
//! per-class reports.

mod hausdorff;
mod report;

pub use hausdorff::{boundary_points, hausdorff, hausdorff_with, HdFlag, HdResult, HdStatistic, Spacing};
pub use report::{per_class_report, ClassMetrics, MetricsReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-d mask of zeros and ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("mask", format!("{} values for {height}x{width}", data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width) as u8).collect();
        Self { height, width, data }
    }

    /// One-vs-rest mask of `class` in a label map.
    pub fn from_labels(labels: &[u8], height: usize, width: usize, class: u8) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape("mask", format!("{} labels for {height}x{width}", labels.len())));
        }
        Ok(Self { height, width, data: labels.iter().map(|&l| (l == class) as u8).collect() })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn complement(&self) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| 1 - v).collect() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::shape(
            "confusion_counts",
            format!("pred {}x{} vs gt {}x{}", pred.height, pred.width, gt.height, gt.width),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `num / den`, or 1.0 with the vacuous flag set when `den` is zero.
fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub specificity: f64,
    pub accuracy_vacuous: bool,
    pub precision_vacuous: bool,
    pub specificity_vacuous: bool,
}

/// Accuracy, precision and specificity. A zero denominator yields 1.0, flagged.
pub fn pixel_metrics(c: &ConfusionCounts) -> PixelMetrics {
    let (accuracy, accuracy_vacuous) = ratio(c.tp + c.tn, c.total());
    let (precision, precision_vacuous) = ratio(c.tp, c.tp + c.fp);
    let (specificity, specificity_vacuous) = ratio(c.tn, c.tn + c.fp);
    PixelMetrics { accuracy, precision, specificity, accuracy_vacuous, precision_vacuous, specificity_vacuous }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub iou: f64,
    pub dice: f64,
    /// Both masks empty; iou and dice are 1.0 by convention.
    pub vacuous: bool,
}

pub fn overlap_metrics(c: &ConfusionCounts) -> OverlapMetrics {
    let (iou, vacuous) = ratio(c.tp, c.tp + c.fp + c.fn_);
    let (dice, _) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    OverlapMetrics { iou, dice, vacuous }
}
