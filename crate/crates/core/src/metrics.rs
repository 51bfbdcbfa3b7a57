//! Confusion matrices, per-class IoU and protocol-aware mIoU reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClassId, ClassMapping, IGNORE};

/// Counts with rows = truth and columns = prediction. Column `C` collects
/// unpredicted (255) points; it only adds to the truth class's false negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        Self { class_names, counts: vec![0; c * (c + 1)] }
    }

    pub fn for_mapping(mapping: &ClassMapping) -> Self {
        Self::new(mapping.class_names.clone())
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    fn idx(&self, truth: usize, pred: usize) -> usize {
        truth * (self.classes() + 1) + pred
    }

    /// Count for truth `t` and prediction `p`; `p == classes()` is the unpredicted column.
    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[self.idx(truth, pred)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, truth: ClassId, pred: ClassId) -> Result<()> {
        if truth == IGNORE {
            return Ok(());
        }
        let c = self.classes();
        let t = truth as usize;
        if t >= c {
            return Err(Error::Invalid(format!("truth class {truth} out of range for {c} classes")));
        }
        let p = if pred == IGNORE {
            c
        } else if (pred as usize) < c {
            pred as usize
        } else {
            return Err(Error::Invalid(format!("predicted class {pred} out of range for {c} classes")));
        };
        let i = self.idx(t, p);
        self.counts[i] += 1;
        Ok(())
    }

    pub fn accumulate(&mut self, truth: &[ClassId], pred: &[ClassId]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("{} truth labels vs {} predictions", truth.len(), pred.len())));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            self.add(t, p)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_names != self.class_names {
            return Err(Error::Shape("confusion matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.count(class, class)
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.classes()).filter(|&t| t != class).map(|t| self.count(t, class)).sum()
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..=self.classes()).filter(|&p| p != class).map(|p| self.count(class, p)).sum()
    }

    /// `TP / (TP + FP + FN)`, `None` when the class never occurs in truth or prediction.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let tp = self.true_positives(class);
        let denom = tp + self.false_positives(class) + self.false_negatives(class);
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Mean IoU over present classes that the protocol does not exclude.
    pub fn miou(&self, protocol: &ClassMapping) -> Option<f64> {
        let ious: Vec<f64> = (0..self.classes())
            .filter(|&c| !protocol.excluded_from_miou.contains(&(c as ClassId)))
            .filter_map(|c| self.iou(c))
            .collect();
        (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// Fraction of labeled points whose prediction equals the truth.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        let hits: u64 = (0..self.classes()).map(|c| self.true_positives(c)).sum();
        (total > 0).then(|| hits as f64 / total as f64)
    }

    pub fn report(&self, protocol: &ClassMapping) -> MetricsReport {
        let classes = (0..self.classes())
            .map(|c| ClassIou {
                class_id: c as ClassId,
                name: self.class_names[c].clone(),
                iou: self.iou(c),
                excluded_from_miou: protocol.excluded_from_miou.contains(&(c as ClassId)),
                true_positives: self.true_positives(c),
                false_positives: self.false_positives(c),
                false_negatives: self.false_negatives(c),
            })
            .collect();
        MetricsReport {
            protocol: protocol.name.clone(),
            miou: self.miou(protocol),
            accuracy: self.accuracy(),
            points: self.total(),
            classes,
        }
    }
}

/// Mean of a list of IoU values, ignoring missing entries.
pub fn mean_iou(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Protocol mIoU from per-class values indexed by class id: excluded and
/// missing classes are left out of the mean.
pub fn protocol_miou(ious: &[Option<f64>], protocol: &ClassMapping) -> Option<f64> {
    let included: Vec<Option<f64>> = ious
        .iter()
        .enumerate()
        .filter(|(c, _)| !protocol.excluded_from_miou.contains(&(*c as ClassId)))
        .map(|(_, v)| *v)
        .collect();
    mean_iou(&included)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class_id: ClassId,
    pub name: String,
    pub iou: Option<f64>,
    pub excluded_from_miou: bool,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub miou: Option<f64>,
    pub accuracy: Option<f64>,
    pub points: u64,
    pub classes: Vec<ClassIou>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One header row of class names and one row of IoU percentages.
    /// Excluded classes carry a `*`; absent classes print `-`.
    pub fn to_table(&self, row_label: &str) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut header = vec![String::new()];
        let mut row = vec![row_label.to_string()];
        for c in &self.classes {
            header.push(if c.excluded_from_miou { format!("{}*", c.name) } else { c.name.clone() });
            row.push(pct(c.iou));
        }
        header.push("mIoU".into());
        row.push(pct(self.miou));
        let widths: Vec<usize> = header.iter().zip(&row).map(|(a, b)| a.len().max(b.len())).collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        format!("{}\n{}\n", line(&header), line(&row))
    }
}
