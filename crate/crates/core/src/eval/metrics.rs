use crate::autodiff::Tensor;
use crate::data::DomainDataset;
use crate::error::{Error, Result};

/// Anything that maps feature rows to class logits.
pub trait Classify {
    fn logits(&self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Discriminators sampled this epoch (heads for multi-head, 0 for source-only).
    pub k: usize,
    pub classification_loss: f64,
    pub domain_loss: Option<f64>,
    pub domain_loss_per_discriminator: Vec<f64>,
    pub source_accuracy: f64,
    pub target_accuracy: Option<f64>,
    pub mean_disc_source: Option<f64>,
    pub mean_disc_target: Option<f64>,
}

impl MetricsRecord {
    /// `|mean D(source) - mean D(target)|`, when a discriminator exists.
    pub fn confusion_gap(&self) -> Option<f64> {
        Some((self.mean_disc_source? - self.mean_disc_target?).abs())
    }
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor<f64>) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy_of_predictions(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Usage("accuracy of an empty dataset".into()));
    }
    if pred.len() != labels.len() {
        return Err(Error::dim("accuracy", &[pred.len()], &[labels.len()]));
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of rows of `ds` whose argmax logit equals the label.
pub fn accuracy<M: Classify + ?Sized>(model: &M, ds: &DomainDataset) -> Result<f64> {
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Usage(format!("dataset {:?} has no labels", ds.name)))?;
    if ds.is_empty() {
        return Err(Error::Usage("accuracy of an empty dataset".into()));
    }
    let logits = model.logits(&ds.features)?;
    accuracy_of_predictions(&argmax_rows(&logits), labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionPoint {
    pub epoch: usize,
    pub gap: Option<f64>,
    pub domain_loss: Option<f64>,
}

/// Discriminator confusion per epoch, for plotting.
pub fn confusion_curve(metrics: &[MetricsRecord]) -> Vec<ConfusionPoint> {
    metrics
        .iter()
        .map(|m| ConfusionPoint {
            epoch: m.epoch,
            gap: m.confusion_gap(),
            domain_loss: m.domain_loss,
        })
        .collect()
}
