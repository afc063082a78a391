//! Confusion counts and the five overlap metrics, per image and averaged
//! over a split.
//!
//! When a metric's denominator is zero its numerator is zero too, meaning
//! both masks are empty for the pixels that term looks at; the metric is
//! then defined as 1.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::LoadedSplit;
use crate::error::{Error, Result};
use crate::model::Generator;
use crate::postprocess::PostprocessConfig;
use crate::tensor::{ImageBatch, MaskBatch, MaskKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub dice: f64,
    pub jaccard: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub n_images: usize,
}

fn binary(v: f32, index: usize) -> Result<bool> {
    match v {
        0.0 => Ok(false),
        1.0 => Ok(true),
        value => Err(Error::NonBinary { index, value }),
    }
}

/// Counts over two equally long binary planes.
pub fn confusion_plane(pred: &[f32], gt: &[f32]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels but ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        match (binary(p, i)?, binary(g, i)?) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Per-image counts for two hard mask batches.
pub fn confusion(pred: &MaskBatch, gt: &MaskBatch) -> Result<Vec<ConfusionCounts>> {
    if pred.tensor().shape() != gt.tensor().shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.tensor().shape(),
            gt.tensor().shape()
        )));
    }
    if pred.kind() != MaskKind::Hard || gt.kind() != MaskKind::Hard {
        return Err(Error::Shape("confusion counts need hard masks".into()));
    }
    (0..pred.batch_size())
        .map(|n| confusion_plane(pred.tensor().sample(n), gt.tensor().sample(n)))
        .collect()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> MetricsReport {
    MetricsReport {
        accuracy: ratio(c.tp + c.tn, c.total()),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        n_images: 1,
    }
}

/// Unweighted mean over per-image reports.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Data("cannot aggregate zero reports".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        accuracy: mean(|r| r.accuracy),
        dice: mean(|r| r.dice),
        jaccard: mean(|r| r.jaccard),
        sensitivity: mean(|r| r.sensitivity),
        specificity: mean(|r| r.specificity),
        n_images: reports.iter().map(|r| r.n_images).sum(),
    })
}

/// Anything mapping an image batch to a soft mask batch.
pub trait Segmenter {
    fn segment(&self, images: &ImageBatch) -> Result<MaskBatch>;
}

impl Segmenter for Generator {
    fn segment(&self, images: &ImageBatch) -> Result<MaskBatch> {
        self.forward_eval(images)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_image: Vec<(String, MetricsReport)>,
    pub aggregate: MetricsReport,
}

/// Segments every image, post-processes, and scores against the ground truth.
pub fn evaluate_split(
    model: &dyn Segmenter,
    split: &LoadedSplit,
    post: &PostprocessConfig,
    batch_size: usize,
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    if let Some(i) = split.masks.iter().position(Option::is_none) {
        return Err(Error::Data(format!("test sample `{}` has no ground-truth mask", split.ids[i])));
    }
    let mut per_image = Vec::with_capacity(split.len());
    for chunk in (0..split.len()).collect::<Vec<_>>().chunks(batch_size.max(1)) {
        let batch = split.batch(chunk)?;
        let pred = post.apply(&model.segment(&batch.images)?)?;
        for (id, c) in batch.ids.into_iter().zip(confusion(&pred, &batch.masks)?) {
            per_image.push((id, metrics_from_counts(&c)));
        }
    }
    let reports: Vec<MetricsReport> = per_image.iter().map(|(_, r)| *r).collect();
    Ok(Evaluation {
        aggregate: aggregate(&reports)?,
        per_image,
    })
}

impl Evaluation {
    /// Per-image rows then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,accuracy,dice,jaccard,sensitivity,specificity\n");
        let rows = self.per_image.iter().map(|(id, r)| (id.as_str(), r));
        for (id, r) in rows.chain(std::iter::once(("mean", &self.aggregate))) {
            let _ = writeln!(
                out,
                "{id},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.accuracy, r.dice, r.jaccard, r.sensitivity, r.specificity
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Aligned console table of the aggregate.
    pub fn table(&self) -> String {
        let a = &self.aggregate;
        format!(
            "images  accuracy  dice      jaccard   sensitivity  specificity\n{:<7} {:<9.4} {:<9.4} {:<9.4} {:<12.4} {:.4}\n(per-image mean)",
            a.n_images, a.accuracy, a.dice, a.jaccard, a.sensitivity, a.specificity
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_counts() {
        let c = ConfusionCounts {
            tp: 50,
            fp: 10,
            fn_: 10,
            tn: 65_466,
        };
        let r = metrics_from_counts(&c);
        assert!((r.dice - 100.0 / 120.0).abs() < 1e-12);
        assert!((r.jaccard - 50.0 / 70.0).abs() < 1e-12);
        assert!((r.dice - 2.0 * r.jaccard / (1.0 + r.jaccard)).abs() < 1e-12);
    }

    #[test]
    fn empty_versus_empty_is_perfect() {
        let r = metrics_from_counts(&ConfusionCounts {
            tn: 65_536,
            ..Default::default()
        });
        for v in [r.accuracy, r.dice, r.jaccard, r.sensitivity, r.specificity] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn non_binary_input_is_rejected() {
        assert!(matches!(
            confusion_plane(&[0.0, 0.5], &[0.0, 1.0]),
            Err(Error::NonBinary { index: 1, .. })
        ));
    }
}
