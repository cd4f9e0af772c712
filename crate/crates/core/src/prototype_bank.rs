//! Incrementally grown bank of class prototypes in a frozen embedding space.
//!
//! Classes are only ever added. Once a class is registered its vectors are
//! never touched again, which is what makes earlier classes immune to
//! anything learned later.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansConfig};
use crate::label::ClassId;
use crate::vector::{self, to_f32, to_f64};

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.4;
pub const DEFAULT_SUBCLUSTERS: usize = 5;

/// Embedding of one region, as produced by the frozen backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionEmbedding {
    pub image_id: String,
    pub region_id: u32,
    pub vector: Vec<f32>,
    /// `None` when the region has no ground-truth class.
    pub gt_class: Option<ClassId>,
}

impl RegionEmbedding {
    pub fn new(image_id: impl Into<String>, region_id: u32, vector: Vec<f32>) -> Self {
        RegionEmbedding {
            image_id: image_id.into(),
            region_id,
            vector,
            gt_class: None,
        }
    }

    pub fn with_class(mut self, class: ClassId) -> Self {
        self.gt_class = Some(class);
        self
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        to_f64(&self.vector)
    }
}

fn check_same_dim(embeddings: &[RegionEmbedding]) -> Result<usize> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Empty("no embeddings".into()))?;
    let dim = first.dim();
    for (i, e) in embeddings.iter().enumerate() {
        if e.dim() != dim {
            return Err(Error::Record {
                index: i,
                source: Box::new(Error::dims(
                    format!("dim {dim}"),
                    format!("dim {}", e.dim()),
                )),
            });
        }
    }
    Ok(dim)
}

fn normalized(embeddings: &[RegionEmbedding]) -> Result<Vec<Vec<f64>>> {
    check_same_dim(embeddings)?;
    embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            vector::l2_normalize(&e.to_f64()).map_err(|err| Error::Record {
                index: i,
                source: Box::new(err),
            })
        })
        .collect()
}

/// Normalized mean of the embeddings.
pub fn compute_prototype(embeddings: &[RegionEmbedding]) -> Result<Vec<f64>> {
    check_same_dim(embeddings)?;
    let classes: Vec<_> = embeddings.iter().map(|e| e.gt_class).collect();
    if classes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidParameter(
            "prototype embeddings span several classes".into(),
        ));
    }
    let vecs: Vec<Vec<f64>> = embeddings.iter().map(|e| e.to_f64()).collect();
    prototype_of(&vecs)
}

pub fn prototype_of(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = vector::mean(vectors)?;
    vector::l2_normalize(&m)
        .map_err(|_| Error::Degenerate("class embeddings average to the zero vector".into()))
}

/// Mean cosine distance of the embeddings to their (un-normalized) mean.
pub fn variance_score(embeddings: &[RegionEmbedding]) -> Result<f64> {
    check_same_dim(embeddings)?;
    let vecs: Vec<Vec<f64>> = embeddings.iter().map(|e| e.to_f64()).collect();
    variance_of(&vecs)
}

pub fn variance_of(vectors: &[Vec<f64>]) -> Result<f64> {
    let mu = vector::mean(vectors)?;
    if vector::norm(&mu) == 0.0 {
        return Err(Error::Degenerate("class mean is the zero vector".into()));
    }
    let mut total = 0.0;
    for v in vectors {
        total += 1.0 - vector::cosine(v, &mu)?;
    }
    Ok(total / vectors.len() as f64)
}

/// k-means sub-prototypes on the unit-normalized embeddings, each centroid
/// re-normalized. Returns `min(k, N)` vectors.
pub fn kmeans_subcluster(
    embeddings: &[RegionEmbedding],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let points = normalized(embeddings)?;
    subcluster_of(&points, k, seed)
}

fn subcluster_of(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let fit = kmeans::fit(points, &KMeansConfig::new(k, seed))?;
    fit.centroids
        .iter()
        .map(|c| {
            vector::l2_normalize(c)
                .map_err(|_| Error::Degenerate("sub-cluster centroid is the zero vector".into()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationParams {
    /// Classes scoring strictly above this are split into sub-prototypes.
    pub variance_threshold: f64,
    /// Sub-prototype count for high-variance classes.
    pub k: usize,
    pub seed: u64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            k: DEFAULT_SUBCLUSTERS,
            seed: 0,
        }
    }
}

impl RegistrationParams {
    /// Disables sub-clustering: every class gets a single prototype.
    pub fn single_prototype() -> Self {
        RegistrationParams {
            variance_threshold: f64::INFINITY,
            ..Default::default()
        }
    }

    /// k-means seed for one class. Independent of registration order.
    pub fn class_seed(&self, class: ClassId) -> u64 {
        // splitmix64 finalizer over (seed, class)
        let mut z = self
            .seed
            .wrapping_add((class.0 as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    pub class_id: ClassId,
    pub class_name: String,
    /// One unit vector, or `min(k, N)` sub-prototypes.
    pub prototypes: Vec<Vec<f32>>,
    pub registered_at_step: u32,
    pub variance_score: f32,
}

impl ClassPrototypes {
    /// True when every stored vector and the name/score match bit for bit.
    /// Ignores the registration step.
    pub fn same_content(&self, other: &ClassPrototypes) -> bool {
        self.class_id == other.class_id
            && self.class_name == other.class_name
            && self.variance_score.to_bits() == other.variance_score.to_bits()
            && self.prototypes.len() == other.prototypes.len()
            && self
                .prototypes
                .iter()
                .zip(&other.prototypes)
                .all(|(a, b)| bits_eq(a, b))
    }
}

fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeBank {
    dim: usize,
    classes: BTreeMap<ClassId, ClassPrototypes>,
}

impl PrototypeBank {
    pub fn new(dim: usize) -> Self {
        PrototypeBank {
            dim,
            classes: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.classes.contains_key(&class)
    }

    pub fn get(&self, class: ClassId) -> Option<&ClassPrototypes> {
        self.classes.get(&class)
    }

    /// Registered classes in ascending id order.
    pub fn classes(&self) -> impl Iterator<Item = &ClassPrototypes> {
        self.classes.values()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.keys().copied().collect()
    }

    pub fn last_step(&self) -> Option<u32> {
        self.classes.values().map(|c| c.registered_at_step).max()
    }

    /// `(step, classes registered at that step)` in step order.
    pub fn step_log(&self) -> Vec<(u32, Vec<ClassId>)> {
        let mut log: BTreeMap<u32, Vec<ClassId>> = BTreeMap::new();
        for c in self.classes.values() {
            log.entry(c.registered_at_step)
                .or_default()
                .push(c.class_id);
        }
        log.into_iter().collect()
    }

    /// Equality of everything except registration steps.
    pub fn same_prototypes(&self, other: &PrototypeBank) -> bool {
        self.dim == other.dim
            && self.classes.len() == other.classes.len()
            && self
                .classes
                .values()
                .zip(other.classes.values())
                .all(|(a, b)| a.same_content(b))
    }

    /// Adds a new class built from its region embeddings.
    ///
    /// Embeddings are normalized and put in a canonical order first, so the
    /// stored vectors depend only on the multiset of inputs and the seed.
    pub fn register_class(
        &mut self,
        class_id: ClassId,
        class_name: impl Into<String>,
        embeddings: &[RegionEmbedding],
        params: &RegistrationParams,
        step: u32,
    ) -> Result<&ClassPrototypes> {
        if !class_id.is_foreground() {
            return Err(Error::InvalidClass(
                class_id.0 as u32,
                "background and ignore ids cannot own prototypes",
            ));
        }
        if self.contains(class_id) {
            return Err(Error::DuplicateClass(class_id.0));
        }
        if let Some(last) = self.last_step() {
            if step < last {
                return Err(Error::InvalidParameter(format!(
                    "step {step} precedes already registered step {last}"
                )));
            }
        }
        if params.k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        let dim = check_same_dim(embeddings)?;
        if dim != self.dim {
            return Err(Error::dims(
                format!("dim {}", self.dim),
                format!("dim {dim}"),
            ));
        }

        let mut points = normalized(embeddings)?;
        points.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        let score = variance_of(&points)?;
        let vectors = if score > params.variance_threshold {
            subcluster_of(&points, params.k, params.class_seed(class_id))?
        } else {
            vec![prototype_of(&points)?]
        };

        let entry = ClassPrototypes {
            class_id,
            class_name: class_name.into(),
            prototypes: vectors.iter().map(|v| to_f32(v)).collect(),
            registered_at_step: step,
            variance_score: score as f32,
        };
        Ok(self.classes.entry(class_id).or_insert(entry))
    }

    /// Inserts a fully formed entry, e.g. when decoding a bank file.
    pub(crate) fn insert_raw(&mut self, entry: ClassPrototypes) -> Result<()> {
        if self.contains(entry.class_id) {
            return Err(Error::DuplicateClass(entry.class_id.0));
        }
        if let Some(v) = entry.prototypes.iter().find(|v| v.len() != self.dim) {
            return Err(Error::dims(
                format!("dim {}", self.dim),
                format!("dim {}", v.len()),
            ));
        }
        self.classes.insert(entry.class_id, entry);
        Ok(())
    }
}
