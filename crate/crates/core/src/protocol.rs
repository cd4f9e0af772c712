//! Class-incremental protocol: `init-inc` splits, region supervision, step
//! by step registration with bank snapshots, and backward-transfer tables.

use std::collections::{BTreeMap, BTreeSet};

use crate::classifier::{classify_batch, render, Prediction, DEFAULT_TAU_SIM};
use crate::error::{Error, Result};
use crate::eval::{compute_report, ConfusionMatrix, EvalReport, SegmentSample};
use crate::formats;
use crate::label::{ClassId, LabelMap};
use crate::mask_agg::AggregatedMask;
use crate::prototype_bank::{PrototypeBank, RegionEmbedding, RegistrationParams};

pub const DEFAULT_THETA_OVERLAP: f64 = 0.5;

/// Ordered, disjoint class subsets `C_0 .. C_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskProtocol {
    pub class_order: Vec<ClassId>,
    pub init: usize,
    pub inc: usize,
    pub steps: Vec<Vec<ClassId>>,
}

impl TaskProtocol {
    /// Parses `"<init>-<inc>"` over classes `1..=n_classes`.
    pub fn parse(split: &str, n_classes: usize) -> Result<Self> {
        if n_classes >= ClassId::IGNORE.index() {
            return Err(Error::InvalidParameter(format!(
                "at most {} foreground classes supported",
                ClassId::IGNORE.index() - 1
            )));
        }
        let order = (1..=n_classes as u16).map(ClassId).collect::<Vec<_>>();
        Self::with_order(split, order)
    }

    /// Parses `"<init>-<inc>"` over an explicit class order.
    pub fn with_order(split: &str, class_order: Vec<ClassId>) -> Result<Self> {
        let malformed =
            || Error::InvalidParameter(format!("malformed split {split:?}, expected <init>-<inc>"));
        let (a, b) = split.trim().split_once('-').ok_or_else(malformed)?;
        let init: usize = a.parse().map_err(|_| malformed())?;
        let inc: usize = b.parse().map_err(|_| malformed())?;
        if init == 0 || inc == 0 {
            return Err(malformed());
        }
        if init > class_order.len() {
            return Err(Error::InvalidParameter(format!(
                "split {split:?} needs {init} initial classes but only {} exist",
                class_order.len()
            )));
        }
        let unique: BTreeSet<_> = class_order.iter().collect();
        if unique.len() != class_order.len() {
            return Err(Error::InvalidParameter(
                "class order contains duplicates".into(),
            ));
        }
        if let Some(c) = class_order.iter().find(|c| !c.is_foreground()) {
            return Err(Error::InvalidClass(
                c.0 as u32,
                "protocol classes must be foreground",
            ));
        }
        let mut steps = vec![class_order[..init].to_vec()];
        steps.extend(class_order[init..].chunks(inc).map(<[ClassId]>::to_vec));
        Ok(TaskProtocol {
            class_order,
            init,
            inc,
            steps,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Classes seen up to and including `step`.
    pub fn seen_through(&self, step: usize) -> BTreeSet<ClassId> {
        self.steps[..=step].iter().flatten().copied().collect()
    }

    /// Confusion-matrix width: largest class id plus background.
    pub fn n_classes(&self) -> usize {
        self.class_order
            .iter()
            .map(|c| c.index())
            .max()
            .unwrap_or(0)
            + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabel {
    pub image_id: String,
    pub region_id: u16,
    /// `None` when no foreground class covers enough of the region.
    pub gt_class: Option<ClassId>,
    /// Fraction of the region's labelled pixels taken by the best foreground class.
    pub overlap_fraction: f64,
}

/// Majority-overlap supervision for each region of an aggregated mask.
///
/// Ignore-label pixels are left out of the denominator. Ties between
/// foreground classes go to the lower id.
pub fn label_regions(
    agg: &AggregatedMask,
    gt: &LabelMap,
    theta_overlap: f64,
) -> Result<Vec<RegionLabel>> {
    gt.check_shape(agg.labels.height(), agg.labels.width())?;
    let k = agg.region_count();
    let mut hist: Vec<BTreeMap<u16, u64>> = vec![BTreeMap::new(); k + 1];
    let mut present = vec![false; k + 1];
    for (&r, &g) in agg.labels.as_slice().iter().zip(gt.as_slice()) {
        if r == 0 {
            continue;
        }
        present[r as usize] = true;
        if g != ClassId::IGNORE.0 {
            *hist[r as usize].entry(g).or_default() += 1;
        }
    }
    Ok((1..=k)
        .filter(|&r| present[r])
        .map(|r| {
            let h = &hist[r];
            let labelled: u64 = h.values().sum();
            let best = h.iter().filter(|(&c, _)| c != ClassId::BACKGROUND.0).fold(
                None,
                |acc: Option<(u16, u64)>, (&c, &n)| match acc {
                    Some((_, m)) if m >= n => acc,
                    _ => Some((c, n)),
                },
            );
            let (class, frac) = match best {
                Some((c, n)) if labelled > 0 => (Some(ClassId(c)), n as f64 / labelled as f64),
                _ => (None, 0.0),
            };
            RegionLabel {
                image_id: agg.image_id.clone(),
                region_id: r as u16,
                gt_class: class.filter(|_| frac >= theta_overlap),
                overlap_fraction: frac,
            }
        })
        .collect())
}

/// Copies labels onto matching embeddings; embeddings without a label get `None`.
pub fn attach_labels(embeddings: &mut [RegionEmbedding], labels: &[RegionLabel]) {
    let index: BTreeMap<(&str, u32), Option<ClassId>> = labels
        .iter()
        .map(|l| ((l.image_id.as_str(), l.region_id as u32), l.gt_class))
        .collect();
    for e in embeddings {
        e.gt_class = index
            .get(&(e.image_id.as_str(), e.region_id))
            .copied()
            .flatten();
    }
}

/// Ground truth as seen after `step`: unseen classes become background.
pub fn remap_unseen(gt: &LabelMap, seen: &BTreeSet<ClassId>) -> LabelMap {
    let mut out = gt.clone();
    for v in out.as_mut_slice() {
        let c = ClassId(*v);
        if c.is_foreground() && !seen.contains(&c) {
            *v = ClassId::BACKGROUND.0;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub tau_sim: f64,
    pub registration: RegistrationParams,
    pub include_bg: bool,
    pub class_names: BTreeMap<ClassId, String>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            tau_sim: DEFAULT_TAU_SIM,
            registration: RegistrationParams::default(),
            include_bg: true,
            class_names: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepEvaluation {
    pub report: EvalReport,
    /// Predictions per evaluation image, in input order.
    pub predictions: Vec<Vec<Prediction>>,
}

#[derive(Debug, Clone)]
pub struct StepSnapshot {
    pub step: usize,
    /// Classes introduced at this step.
    pub classes: Vec<ClassId>,
    pub bank: PrototypeBank,
    /// Serialized bank, for byte-exact comparisons across steps.
    pub bank_bytes: Vec<u8>,
    /// Training embeddings consumed at this step.
    pub embeddings_used: usize,
    pub evaluation: Option<StepEvaluation>,
}

/// Runs every step of `protocol`.
///
/// At step `t` only embeddings whose class is in `C_t` are read. When
/// `eval` is given, the bank is scored after each step on ground truth
/// restricted to the classes seen so far.
pub fn run_protocol(
    protocol: &TaskProtocol,
    train: &[RegionEmbedding],
    eval: Option<&[SegmentSample]>,
    config: &ProtocolConfig,
) -> Result<Vec<StepSnapshot>> {
    let dim = train
        .first()
        .map(RegionEmbedding::dim)
        .ok_or_else(|| Error::Empty("no training embeddings".into()))?;
    let mut bank = PrototypeBank::new(dim);
    let mut snapshots = Vec::with_capacity(protocol.n_steps());

    for (t, classes) in protocol.steps.iter().enumerate() {
        let mut by_class: BTreeMap<ClassId, Vec<RegionEmbedding>> = BTreeMap::new();
        for e in train {
            if let Some(c) = e.gt_class.filter(|c| classes.contains(c)) {
                by_class.entry(c).or_default().push(e.clone());
            }
        }
        let missing: Vec<u16> = classes
            .iter()
            .filter(|c| !by_class.contains_key(c))
            .map(|c| c.0)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingClassData(missing));
        }
        let used = by_class.values().map(Vec::len).sum();
        for (class, embeddings) in &by_class {
            let name = config.class_names.get(class).cloned().unwrap_or_default();
            bank.register_class(*class, name, embeddings, &config.registration, t as u32)?;
        }

        let evaluation = match eval {
            Some(samples) => Some(evaluate_step(protocol, t, &bank, samples, config)?),
            None => None,
        };
        snapshots.push(StepSnapshot {
            step: t,
            classes: classes.clone(),
            bank_bytes: formats::encode_bank(&bank),
            bank: bank.clone(),
            embeddings_used: used,
            evaluation,
        });
    }
    Ok(snapshots)
}

fn evaluate_step(
    protocol: &TaskProtocol,
    step: usize,
    bank: &PrototypeBank,
    samples: &[SegmentSample],
    config: &ProtocolConfig,
) -> Result<StepEvaluation> {
    let seen = protocol.seen_through(step);
    let mut cm = ConfusionMatrix::new(protocol.n_classes());
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let preds = classify_batch(&s.embeddings, bank, config.tau_sim)?;
        let map = render(&s.segments, &preds)?;
        cm.accumulate(&map.labels, &remap_unseen(&s.gt, &seen))?;
        predictions.push(preds);
    }
    Ok(StepEvaluation {
        report: compute_report(&cm, config.include_bg)?,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferEntry {
    pub class: ClassId,
    pub introduced_at: usize,
    pub iou_at_introduction: f64,
    pub iou_now: f64,
    pub delta: f64,
}

impl TransferEntry {
    pub fn is_positive(&self) -> bool {
        self.delta > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTransferReport {
    pub step: usize,
    pub entries: Vec<TransferEntry>,
}

impl BackwardTransferReport {
    pub fn positive(&self) -> impl Iterator<Item = &TransferEntry> {
        self.entries.iter().filter(|e| e.is_positive())
    }

    pub fn to_text(&self, names: &BTreeMap<ClassId, String>) -> String {
        let mut out = format!("# backward transfer at step {}\n", self.step);
        out.push_str("class\tname\tintroduced\tiou_then\tiou_now\tdelta\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.4}\t{:.4}\t{:+.4}{}\n",
                e.class,
                names.get(&e.class).map(String::as_str).unwrap_or(""),
                e.introduced_at,
                e.iou_at_introduction,
                e.iou_now,
                e.delta,
                if e.is_positive() { "\t*" } else { "" }
            ));
        }
        out
    }
}

fn report_of(s: &StepSnapshot) -> Result<&EvalReport> {
    s.evaluation
        .as_ref()
        .map(|e| &e.report)
        .ok_or_else(|| Error::InvalidParameter(format!("step {} has no evaluation", s.step)))
}

/// IoU change of every class learned before the final step, measured from
/// the step that introduced it to the final step.
pub fn backward_transfer_report(snapshots: &[StepSnapshot]) -> Result<BackwardTransferReport> {
    if snapshots.len() < 2 {
        return Err(Error::InvalidParameter(
            "backward transfer needs at least two snapshots".into(),
        ));
    }
    let last = snapshots.last().expect("len >= 2");
    let now = report_of(last)?;
    let mut entries = Vec::new();
    for snap in &snapshots[..snapshots.len() - 1] {
        let then = report_of(snap)?;
        for &class in &snap.classes {
            let (Some(a), Some(b)) = (then.iou(class), now.iou(class)) else {
                return Err(Error::MismatchedClasses(format!(
                    "class {class} lacks an IoU at step {} or step {}",
                    snap.step, last.step
                )));
            };
            entries.push(TransferEntry {
                class,
                introduced_at: snap.step,
                iou_at_introduction: a,
                iou_now: b,
                delta: b - a,
            });
        }
    }
    Ok(BackwardTransferReport {
        step: last.step,
        entries,
    })
}
