//! Pixel-level confusion matrices and IoU / precision / recall reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::classifier::{classify_batch, render};
use crate::error::{Error, Result};
use crate::label::{ClassId, LabelMap};
use crate::mask_agg::AggregatedMask;
use crate::prototype_bank::{PrototypeBank, RegionEmbedding};

/// Square count matrix, rows are ground truth and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// `n_classes` includes background.
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        let mut cm = ConfusionMatrix::new(n);
        for (g, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::dims(
                    format!("{n} columns"),
                    format!("{} columns", row.len()),
                ));
            }
            cm.counts[g * n..(g + 1) * n].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image. Ground-truth pixels equal to the ignore label are skipped.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        pred.check_shape(gt.height(), gt.width())?;
        let n = self.n_classes;
        // validate first so a failed call leaves the matrix untouched
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            if g == ClassId::IGNORE.0 {
                continue;
            }
            if g as usize >= n || p as usize >= n {
                return Err(Error::InvalidClass(
                    g.max(p) as u32,
                    "class id outside the confusion matrix",
                ));
            }
        }
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            if g != ClassId::IGNORE.0 {
                self.counts[g as usize * n + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::dims(
                format!("{} classes", self.n_classes),
                format!("{} classes", other.n_classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Only classes with at least one GT or predicted pixel appear here.
    pub per_class: BTreeMap<ClassId, ClassMetrics>,
    pub miou: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub include_bg: bool,
}

impl EvalReport {
    pub fn evaluated_classes(&self) -> Vec<ClassId> {
        self.per_class.keys().copied().collect()
    }

    pub fn iou(&self, class: ClassId) -> Option<f64> {
        self.per_class.get(&class).map(|m| m.iou)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class IoU, precision and recall with unweighted class means.
///
/// A class with no GT and no predicted pixels is left out of the means.
pub fn compute_report(cm: &ConfusionMatrix, include_bg: bool) -> Result<EvalReport> {
    if cm.total() == 0 {
        return Err(Error::Empty("confusion matrix has no counts".into()));
    }
    let n = cm.n_classes;
    let mut per_class = BTreeMap::new();
    for c in 0..n {
        if c == 0 && !include_bg {
            continue;
        }
        let tp = cm.get(c, c);
        let row: u64 = (0..n).map(|p| cm.get(c, p)).sum();
        let col: u64 = (0..n).map(|g| cm.get(g, c)).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        if tp + fp + fn_ == 0 {
            continue;
        }
        per_class.insert(
            ClassId(c as u16),
            ClassMetrics {
                iou: ratio(tp, tp + fp + fn_),
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
            },
        );
    }
    if per_class.is_empty() {
        return Err(Error::Empty(
            "no class has ground-truth or predicted pixels".into(),
        ));
    }
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.values().map(f).sum::<f64>() / k;
    Ok(EvalReport {
        miou: mean(|m| m.iou),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        per_class,
        include_bg,
    })
}

/// Renders a report as a human table followed by tab-separated records:
/// `class_id  iou  precision  recall` per class, then a `mean` summary line.
pub fn format_report(report: &EvalReport, names: &BTreeMap<ClassId, String>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5}  {:<16} {:>8} {:>9} {:>8}",
        "class", "name", "IoU", "precision", "recall"
    );
    for (c, m) in &report.per_class {
        let name = names.get(c).map(String::as_str).unwrap_or("");
        let _ = writeln!(
            out,
            "{:>5}  {:<16} {:>8.4} {:>9.4} {:>8.4}",
            c.0, name, m.iou, m.precision, m.recall
        );
    }
    let _ = writeln!(
        out,
        "{:>5}  {:<16} {:>8.4} {:>9.4} {:>8.4}",
        "", "mean", report.miou, report.macro_precision, report.macro_recall
    );
    out.push('\n');
    for (c, m) in &report.per_class {
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.4}",
            c.0, m.iou, m.precision, m.recall
        );
    }
    let _ = writeln!(
        out,
        "mean\t{:.4}\t{:.4}\t{:.4}",
        report.miou, report.macro_precision, report.macro_recall
    );
    out
}

/// One image's segments with their embeddings and ground truth.
#[derive(Debug, Clone)]
pub struct SegmentSample {
    pub segments: AggregatedMask,
    pub gt: LabelMap,
    pub embeddings: Vec<RegionEmbedding>,
}

/// Classifies a segment source through the prototype bank and scores the
/// rendered maps against ground truth.
pub fn segment_quality(
    samples: &[SegmentSample],
    bank: &PrototypeBank,
    tau_sim: f64,
    n_classes: usize,
    include_bg: bool,
) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(n_classes);
    for s in samples {
        if let Some(e) = s
            .embeddings
            .iter()
            .find(|e| e.image_id != s.segments.image_id)
        {
            return Err(Error::InvalidParameter(format!(
                "embedding for image {:?} paired with segments of {:?}",
                e.image_id, s.segments.image_id
            )));
        }
        let preds = classify_batch(&s.embeddings, bank, tau_sim)?;
        let map = render(&s.segments, &preds)?;
        cm.accumulate(&map.labels, &s.gt)?;
    }
    compute_report(&cm, include_bg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[u16]) -> LabelMap {
        LabelMap::from_vec(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt = map(2, 2, &[0, 1, 2, 2]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&gt, &gt).unwrap();
        assert_eq!(cm.get(0, 0) + cm.get(1, 1) + cm.get(2, 2), 4);
        let r = compute_report(&cm, true).unwrap();
        assert_eq!((r.miou, r.macro_precision, r.macro_recall), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_disagreement() {
        let gt = map(2, 2, &[0, 1, 1, 1]);
        let pred = map(2, 2, &[0, 1, 0, 1]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        assert_eq!(cm.get(1, 0), 1);
        assert_eq!(cm.get(0, 1), 0);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn hand_matrix() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]]).unwrap();
        let r = compute_report(&cm, true).unwrap();
        assert_eq!(r.iou(ClassId(0)), Some(8.0 / 11.0));
        assert_eq!(r.iou(ClassId(1)), Some(9.0 / 12.0));
        assert_eq!(r.miou, (8.0 / 11.0 + 9.0 / 12.0) / 2.0);
        let p = &r.per_class[&ClassId(0)];
        assert_eq!((p.precision, p.recall), (8.0 / 9.0, 8.0 / 10.0));
    }

    #[test]
    fn all_background_prediction_scores_zero() {
        let gt = map(1, 3, &[1, 1, 1]);
        let pred = map(1, 3, &[0, 0, 0]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        let r = compute_report(&cm, false).unwrap();
        assert_eq!(r.iou(ClassId(1)), Some(0.0));
        assert_eq!(r.evaluated_classes(), vec![ClassId(1)]);
    }

    #[test]
    fn ignore_pixels_are_not_counted() {
        let gt = map(1, 4, &[255, 1, 255, 0]);
        let pred = map(1, 4, &[1, 1, 0, 0]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn out_of_range_class_is_rejected_atomically() {
        let gt = map(1, 2, &[0, 3]);
        let pred = map(1, 2, &[0, 0]);
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&pred, &gt).is_err());
        assert_eq!(cm.total(), 0);
        assert!(cm.accumulate(&map(1, 3, &[0, 0, 0]), &pred).is_err());
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(compute_report(&ConfusionMatrix::new(3), true).is_err());
    }

    #[test]
    fn three_class_fixture() {
        // rows gt, cols pred
        let cm =
            ConfusionMatrix::from_rows(&[vec![5, 1, 0], vec![2, 6, 2], vec![0, 0, 0]]).unwrap();
        let r = compute_report(&cm, true).unwrap();
        // class 2: tp 0, fp 2, fn 0 -> included with iou 0, precision 0, recall 0
        assert_eq!(r.per_class.len(), 3);
        let c0 = r.per_class[&ClassId(0)];
        assert_eq!(
            (c0.iou, c0.precision, c0.recall),
            (5.0 / 8.0, 5.0 / 7.0, 5.0 / 6.0)
        );
        let c1 = r.per_class[&ClassId(1)];
        assert_eq!(
            (c1.iou, c1.precision, c1.recall),
            (6.0 / 11.0, 6.0 / 7.0, 6.0 / 10.0)
        );
        let c2 = r.per_class[&ClassId(2)];
        assert_eq!((c2.iou, c2.precision, c2.recall), (0.0, 0.0, 0.0));
        assert_eq!(r.miou, (5.0 / 8.0 + 6.0 / 11.0 + 0.0) / 3.0);

        let no_bg = compute_report(&cm, false).unwrap();
        assert_eq!(no_bg.evaluated_classes(), vec![ClassId(1), ClassId(2)]);
    }

    #[test]
    fn report_lines_use_four_decimals() {
        let cm = ConfusionMatrix::from_rows(&[vec![8, 2], vec![1, 9]]).unwrap();
        let text = format_report(&compute_report(&cm, true).unwrap(), &BTreeMap::new());
        assert!(text.contains("0\t0.7273\t0.8889\t0.8000\n"));
        assert!(text.contains("1\t0.7500\t0.8182\t0.9000\n"));
        assert!(text.ends_with("mean\t0.7386\t0.8535\t0.8500\n"));
    }
}
