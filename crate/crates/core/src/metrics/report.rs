use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::hausdorff::{hausdorff, HdFlag, Spacing};
use super::{confusion_counts, overlap_metrics, pixel_metrics, BinaryMask};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub name: String,
    pub dice: f64,
    pub iou: f64,
    pub hd: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub specificity: f64,
    /// Cases whose ground truth contains the class; only these enter the means.
    pub cases_present: usize,
    /// Some value above was set by an empty-mask convention.
    pub vacuous: bool,
    pub hd_flag: HdFlag,
}

/// Per-class and mean metrics over one or more cases. Background (class 0) is
/// not reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub mean_hd: f64,
    pub mean_accuracy: f64,
    pub mean_precision: f64,
    pub mean_specificity: f64,
    pub case_count: usize,
    /// "px" for unit spacing, otherwise "mm".
    pub hd_unit: String,
}

fn class_name(names: Option<&[String]>, c: usize) -> String {
    names.and_then(|n| n.get(c).cloned()).unwrap_or_else(|| format!("class{c}"))
}

/// Metrics of one case, one-vs-rest for every foreground class.
pub fn per_class_report(
    pred: &[u8],
    gt: &[u8],
    height: usize,
    width: usize,
    num_classes: usize,
    spacing: Spacing,
    names: Option<&[String]>,
) -> Result<MetricsReport> {
    if pred.len() != height * width || gt.len() != height * width {
        return Err(Error::shape("per_class_report", format!("label maps of {} and {} for {height}x{width}", pred.len(), gt.len())));
    }
    if let Some(v) = pred.iter().chain(gt).find(|&&v| v as usize >= num_classes) {
        return Err(Error::Data(format!("label {v} outside 0..{num_classes}")));
    }
    let classes = (1..num_classes)
        .map(|c| {
            let p = BinaryMask::from_labels(pred, height, width, c as u8)?;
            let g = BinaryMask::from_labels(gt, height, width, c as u8)?;
            let counts = confusion_counts(&p, &g)?;
            let px = pixel_metrics(&counts);
            let ov = overlap_metrics(&counts);
            let hd = hausdorff(&p, &g, spacing)?;
            Ok(ClassMetrics {
                class: c,
                name: class_name(names, c),
                dice: ov.dice,
                iou: ov.iou,
                hd: hd.distance,
                accuracy: px.accuracy,
                precision: px.precision,
                specificity: px.specificity,
                cases_present: usize::from(!g.is_empty()),
                vacuous: ov.vacuous || px.precision_vacuous || px.specificity_vacuous || hd.flag != HdFlag::Normal,
                hd_flag: hd.flag,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_classes(classes, 1, if spacing.is_unit() { "px" } else { "mm" }))
}

impl MetricsReport {
    fn from_classes(classes: Vec<ClassMetrics>, case_count: usize, hd_unit: &str) -> Self {
        let present: Vec<&ClassMetrics> = classes.iter().filter(|c| c.cases_present > 0).collect();
        // with no foreground anywhere every class is vacuous; average them all
        let pool: Vec<&ClassMetrics> = if present.is_empty() { classes.iter().collect() } else { present };
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if pool.is_empty() {
                1.0
            } else {
                pool.iter().map(|c| f(c)).sum::<f64>() / pool.len() as f64
            }
        };
        Self {
            mean_dice: mean(|c| c.dice),
            mean_iou: mean(|c| c.iou),
            mean_hd: if pool.is_empty() { 0.0 } else { mean(|c| c.hd) },
            mean_accuracy: mean(|c| c.accuracy),
            mean_precision: mean(|c| c.precision),
            mean_specificity: mean(|c| c.specificity),
            case_count,
            hd_unit: hd_unit.to_string(),
            classes,
        }
    }

    /// Combines per-case reports in the given order. Each class is averaged
    /// over the cases whose ground truth contains it.
    pub fn aggregate(cases: &[MetricsReport]) -> Result<MetricsReport> {
        let first = cases.first().ok_or_else(|| Error::Data("no cases to aggregate".into()))?;
        let k = first.classes.len();
        if cases.iter().any(|r| r.classes.len() != k) {
            return Err(Error::Data("cases report different class counts".into()));
        }
        let classes = (0..k)
            .map(|i| {
                let all: Vec<&ClassMetrics> = cases.iter().map(|r| &r.classes[i]).collect();
                let present: Vec<&ClassMetrics> = all.iter().copied().filter(|c| c.cases_present > 0).collect();
                let pool = if present.is_empty() { &all } else { &present };
                let avg = |f: fn(&ClassMetrics) -> f64| pool.iter().map(|c| f(c)).sum::<f64>() / pool.len() as f64;
                let flag = if pool.iter().any(|c| c.hd_flag == HdFlag::OneEmpty) {
                    HdFlag::OneEmpty
                } else if pool.iter().all(|c| c.hd_flag == HdFlag::BothEmpty) {
                    HdFlag::BothEmpty
                } else {
                    HdFlag::Normal
                };
                ClassMetrics {
                    class: all[0].class,
                    name: all[0].name.clone(),
                    dice: avg(|c| c.dice),
                    iou: avg(|c| c.iou),
                    hd: avg(|c| c.hd),
                    accuracy: avg(|c| c.accuracy),
                    precision: avg(|c| c.precision),
                    specificity: avg(|c| c.specificity),
                    cases_present: present.len(),
                    vacuous: pool.iter().any(|c| c.vacuous),
                    hd_flag: flag,
                }
            })
            .collect();
        Ok(MetricsReport::from_classes(classes, cases.len(), &first.hd_unit))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One-row table: mean DSC, mean HD, then the DSC of every class.
    pub fn to_markdown(&self) -> String {
        let mut head = format!("| Cases | DSC (%) ↑ | HD ({}) ↓ |", self.hd_unit);
        let mut rule = "|---:|---:|---:|".to_string();
        let mut row = format!("| {} | {:.2} | {:.2} |", self.case_count, 100.0 * self.mean_dice, self.mean_hd);
        for c in &self.classes {
            let _ = write!(head, " {} |", c.name);
            rule.push_str("---:|");
            let mark = if c.cases_present == 0 { "*" } else { "" };
            let _ = write!(row, " {:.2}{mark} |", 100.0 * c.dice);
        }
        format!("{head}\n{rule}\n{row}\n")
    }
}
