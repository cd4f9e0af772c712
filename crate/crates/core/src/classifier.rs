//! Thresholded nearest-prototype classification of region embeddings.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::label::{ClassId, LabelMap};
use crate::mask_agg::AggregatedMask;
use crate::prototype_bank::{PrototypeBank, RegionEmbedding};
use crate::vector::{self, to_f64};

pub const DEFAULT_TAU_SIM: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub region_id: u32,
    /// `ClassId::BACKGROUND` when no prototype reached the threshold.
    pub predicted_class: ClassId,
    /// Highest cosine similarity over every stored (sub-)prototype.
    pub best_similarity: f64,
    /// Best-scoring class other than the top one, ignoring the threshold.
    pub runner_up_class: Option<ClassId>,
}

impl Prediction {
    pub fn is_background(&self) -> bool {
        self.predicted_class.is_background()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedLabelMap {
    pub image_id: String,
    pub labels: LabelMap,
}

/// Assigns `z` to the class of its most similar prototype, or to background
/// when that similarity is below `tau_sim`. Ties go to the lowest class id.
pub fn classify(z: &RegionEmbedding, bank: &PrototypeBank, tau_sim: f64) -> Result<Prediction> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if z.dim() != bank.dim() {
        return Err(Error::dims(
            format!("dim {}", bank.dim()),
            format!("dim {}", z.dim()),
        ));
    }
    let q = vector::l2_normalize(&z.to_f64())?;

    let mut best: Option<(ClassId, f64)> = None;
    let mut second: Option<(ClassId, f64)> = None;
    for class in bank.classes() {
        let mut class_best = f64::NEG_INFINITY;
        for p in &class.prototypes {
            debug_assert!((vector::norm(&to_f64(p)) - 1.0).abs() < 1e-5);
            let s = p.iter().zip(&q).map(|(&a, b)| a as f64 * b).sum::<f64>();
            if s > class_best {
                class_best = s;
            }
        }
        let entry = (class.class_id, class_best);
        match best {
            Some((_, b)) if class_best <= b => {
                if second.is_none_or(|(_, s)| class_best > s) {
                    second = Some(entry);
                }
            }
            _ => {
                second = best;
                best = Some(entry);
            }
        }
    }

    let (top, sim) = best.expect("non-empty bank");
    Ok(Prediction {
        image_id: z.image_id.clone(),
        region_id: z.region_id,
        predicted_class: if sim >= tau_sim {
            top
        } else {
            ClassId::BACKGROUND
        },
        best_similarity: sim,
        runner_up_class: second.map(|(c, _)| c),
    })
}

/// Classifies every embedding in order.
pub fn classify_batch(
    embeddings: &[RegionEmbedding],
    bank: &PrototypeBank,
    tau_sim: f64,
) -> Result<Vec<Prediction>> {
    embeddings
        .iter()
        .enumerate()
        .map(|(index, z)| {
            classify(z, bank, tau_sim).map_err(|e| Error::Record {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Paints each predicted region with its class; everything else is background.
pub fn render(agg: &AggregatedMask, preds: &[Prediction]) -> Result<PredictedLabelMap> {
    let k = agg.region_count();
    let mut class_of = vec![ClassId::BACKGROUND.0; k + 1];
    let mut seen = HashSet::new();
    for p in preds {
        if p.image_id != agg.image_id {
            return Err(Error::InvalidParameter(format!(
                "prediction for image {:?} rendered onto {:?}",
                p.image_id, agg.image_id
            )));
        }
        if p.region_id == 0 || p.region_id as usize > k {
            return Err(Error::InvalidParameter(format!(
                "{}: region {} not in aggregated mask with {k} regions",
                agg.image_id, p.region_id
            )));
        }
        if !seen.insert(p.region_id) {
            return Err(Error::InvalidParameter(format!(
                "{}: duplicate prediction for region {}",
                agg.image_id, p.region_id
            )));
        }
        class_of[p.region_id as usize] = p.predicted_class.0;
    }
    let (h, w) = agg.labels.shape();
    let data = agg
        .labels
        .as_slice()
        .iter()
        .map(|&r| class_of[r as usize])
        .collect();
    Ok(PredictedLabelMap {
        image_id: agg.image_id.clone(),
        labels: LabelMap::from_vec(h, w, data)?,
    })
}

/// A region whose predicted class differs between two runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionChange {
    pub image_id: String,
    pub region_id: u32,
    pub before: ClassId,
    pub after: ClassId,
    pub similarity_before: f64,
    pub similarity_after: f64,
}

/// Pairs predictions by `(image_id, region_id)` and lists those that changed.
pub fn prediction_changes(before: &[Prediction], after: &[Prediction]) -> Vec<PredictionChange> {
    let index: std::collections::HashMap<(&str, u32), &Prediction> = before
        .iter()
        .map(|p| ((p.image_id.as_str(), p.region_id), p))
        .collect();
    after
        .iter()
        .filter_map(|a| {
            let b = index.get(&(a.image_id.as_str(), a.region_id))?;
            (b.predicted_class != a.predicted_class).then(|| PredictionChange {
                image_id: a.image_id.clone(),
                region_id: a.region_id,
                before: b.predicted_class,
                after: a.predicted_class,
                similarity_before: b.best_similarity,
                similarity_after: a.best_similarity,
            })
        })
        .collect()
}
