//! Confusion-matrix accumulation and mean intersection-over-union.
//!
//! Background participates as class 0, so a `C`-class problem evaluates
//! over `C + 1` classes. Ground-truth pixels marked ignore contribute
//! nothing; predictions must be complete (no ignore labels). Classes absent
//! from both prediction and ground truth have an undefined IoU and are
//! excluded from the mean, matching the usual VOC protocol.

use serde::Serialize;
use std::collections::BTreeMap;

use crate::grid::{LabelMap, IGNORE_LABEL};
use crate::{Error, Result};

/// Square count matrix indexed `[ground truth][prediction]` over the
/// background class plus `C` foreground classes. Workers accumulate private
/// matrices and merge by addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    foreground_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(foreground_classes: usize) -> Self {
        let side = foreground_classes + 1;
        Self {
            foreground_classes,
            counts: vec![0; side * side],
        }
    }

    pub fn foreground_classes(&self) -> usize {
        self.foreground_classes
    }

    fn side(&self) -> usize {
        self.foreground_classes + 1
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.side() + pred]
    }

    /// Number of non-ignored pixels tallied so far.
    pub fn evaluated_pixels(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tallies one image pair. The inputs are fully validated before any
    /// count changes, so a failed call leaves the matrix untouched.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.height() != gt.height() || pred.width() != gt.width() {
            return Err(Error::invalid(format!(
                "prediction {}x{} does not match ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let side = self.side();
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if p == IGNORE_LABEL {
                return Err(Error::invalid(
                    "prediction contains the ignore label 255; predictions must be complete",
                ));
            }
            if p as usize >= side {
                return Err(Error::invalid(format!(
                    "prediction label {p} outside 0..={}",
                    side - 1
                )));
            }
            if g != IGNORE_LABEL && g as usize >= side {
                return Err(Error::invalid(format!(
                    "ground-truth label {g} outside 0..={}",
                    side - 1
                )));
            }
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g != IGNORE_LABEL {
                self.counts[g as usize * side + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.foreground_classes, other.foreground_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Per-class IoU (None where the class appears in neither map) and their
/// unweighted mean over the defined classes.
#[derive(Debug, Clone, PartialEq)]
pub struct MiouResult {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Computes IoU per class as `diag / (row + col - diag)` and averages over
/// the classes with a nonzero denominator. Errors with
/// [`Error::UndefinedMetric`] when every class is undefined (e.g. all
/// pixels ignored).
pub fn miou(cm: &ConfusionMatrix) -> Result<MiouResult> {
    let side = cm.side();
    let mut per_class = Vec::with_capacity(side);
    let mut sum = 0.0;
    let mut defined = 0usize;
    for c in 0..side {
        let diag = cm.count(c, c);
        let row: u64 = (0..side).map(|j| cm.count(c, j)).sum();
        let col: u64 = (0..side).map(|i| cm.count(i, c)).sum();
        let denom = row + col - diag;
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = diag as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            defined += 1;
        }
    }
    if defined == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(MiouResult {
        per_class,
        mean: sum / defined as f64,
    })
}

/// The JSON metric report emitted by the evaluation command.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub per_class: BTreeMap<String, f64>,
    pub miou: f64,
    pub evaluated_pixels: u64,
}

impl MetricReport {
    pub fn from_matrix(cm: &ConfusionMatrix) -> Result<Self> {
        let result = miou(cm)?;
        let per_class = result
            .per_class
            .iter()
            .enumerate()
            .filter_map(|(c, iou)| iou.map(|v| (c.to_string(), v)))
            .collect();
        Ok(Self {
            per_class,
            miou: result.mean,
            evaluated_pixels: cm.evaluated_pixels(),
        })
    }
}
