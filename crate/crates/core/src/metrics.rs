//! Confusion-matrix segmentation metrics: overall pixel accuracy, mean IoU
//! and frequency-weighted IoU.
//!
//! With `n[g][p]` the count of ground-truth class `g` predicted as `p` and
//! `t[g] = Σ_p n[g][p]`:
//!
//! * `acc   = Σ n[i][i] / Σ t[i]`
//! * `IoU_i = n[i][i] / (t[i] + Σ_j n[j][i] − n[i][i])`
//! * `mIoU  = mean of IoU_i over classes with a non-zero denominator`
//! * `fwIoU = Σ (t[i] / Σ t) · IoU_i` over the same classes
//!
//! Classes that appear in neither ground truth nor prediction have no IoU
//! and are left out of the mean rather than counted as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    ignore_id: Option<usize>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize, ignore_id: Option<usize>) -> Self {
        ConfusionMatrix {
            k,
            ignore_id,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn ignore_id(&self) -> Option<usize> {
        self.ignore_id
    }

    /// `counts[gt][pred]`.
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction/ground-truth pair. Nothing is counted if any
    /// id is out of range.
    pub fn accumulate(&mut self, pred: &[usize], gt: &[usize]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::invalid(format!("pred has {} pixels, gt {}", pred.len(), gt.len())));
        }
        if let Some(&p) = pred.iter().find(|&&p| p >= self.k) {
            return Err(Error::invalid(format!("predicted class {p} outside 0..{}", self.k)));
        }
        if let Some(&g) = gt.iter().find(|&&g| g >= self.k && Some(g) != self.ignore_id) {
            return Err(Error::invalid(format!("ground-truth class {g} outside 0..{}", self.k)));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if Some(g) != self.ignore_id {
                self.counts[g * self.k + p] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::invalid(format!("cannot merge {}-class and {}-class matrices", self.k, other.k)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Builds one matrix per `(pred, gt)` pair and merges them.
    pub fn from_pairs(exec: Exec, k: usize, ignore_id: Option<usize>, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<Self> {
        let parts = par::map(exec, pairs, |(p, g)| {
            let mut cm = ConfusionMatrix::new(k, ignore_id);
            cm.accumulate(p, g).map(|_| cm)
        });
        let mut total = ConfusionMatrix::new(k, ignore_id);
        for part in parts {
            total.merge(&part?)?;
        }
        Ok(total)
    }

    fn gt_count(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    fn pred_count(&self, i: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, i)).sum()
    }

    fn require_pixels(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::UndefinedMetric("confusion matrix is empty".into())),
            n => Ok(n),
        }
    }

    pub fn acc(&self) -> Result<f64> {
        let total = self.require_pixels()?;
        let diag: u64 = (0..self.k).map(|i| self.get(i, i)).sum();
        Ok(diag as f64 / total as f64)
    }

    /// IoU per class; `None` where the class is absent from both maps.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|i| {
                let tp = self.get(i, i);
                let denom = self.gt_count(i) + self.pred_count(i) - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    pub fn miou(&self) -> Result<f64> {
        self.require_pixels()?;
        let defined: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }

    pub fn fwiou(&self) -> Result<f64> {
        let total = self.require_pixels()? as f64;
        Ok(self
            .per_class_iou()
            .into_iter()
            .enumerate()
            .filter_map(|(i, iou)| iou.map(|v| self.gt_count(i) as f64 / total * v))
            .sum())
    }

    pub fn report(&self) -> Result<MetricsReport> {
        Ok(MetricsReport {
            acc: self.acc()?,
            miou: self.miou()?,
            fwiou: self.fwiou()?,
            per_class: self
                .per_class_iou()
                .into_iter()
                .enumerate()
                .map(|(class, iou)| ClassIou { class, iou })
                .collect(),
            pixel_count: self.total(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: usize,
    pub iou: Option<f64>,
}

/// JSON-serializable metric summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub miou: f64,
    pub fwiou: f64,
    pub per_class: Vec<ClassIou>,
    pub pixel_count: u64,
}

/// Nearest-neighbour resize of a label map, used when predictions and
/// ground truth differ in resolution.
pub fn resize_labels_nearest(labels: &[usize], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64).floor() as usize;
        for x in 0..out_w {
            let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64).floor() as usize;
            out.push(labels[sy.min(h - 1) * w + sx.min(w - 1)]);
        }
    }
    out
}
