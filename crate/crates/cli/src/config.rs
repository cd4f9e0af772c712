//! `key = value` pipeline configuration for the `protocol` subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use protoseg_core::classifier::DEFAULT_TAU_SIM;
use protoseg_core::mask_agg::{AggregateOptions, DEFAULT_TAU_AREA};
use protoseg_core::protocol::DEFAULT_THETA_OVERLAP;
use protoseg_core::prototype_bank::{DEFAULT_SUBCLUSTERS, DEFAULT_VARIANCE_THRESHOLD};
use protoseg_core::{ClassId, RegistrationParams};

/// Where an image's regions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentSource {
    /// Raw `.smsk` proposals, aggregated on load.
    Masks(PathBuf),
    /// Pre-aggregated `.sagg` region maps.
    Aggregated(PathBuf),
}

/// One image set: segments, `<stem>.semb` embeddings and `<stem>.sagg` ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub segments: SegmentSource,
    pub embeddings: PathBuf,
    pub gt: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub split: String,
    pub class_order: Vec<ClassId>,
    pub class_names: BTreeMap<ClassId, String>,
    pub tau_area: f64,
    pub min_pixels: u64,
    pub tau_sim: f64,
    pub variance_threshold: f64,
    pub k: usize,
    pub seed: u64,
    pub theta_overlap: f64,
    pub include_bg: bool,
    pub train: DataPaths,
    /// Evaluation images; the training images are scored when absent.
    pub eval: Option<DataPaths>,
}

const KEYS: &[&str] = &[
    "split",
    "n_classes",
    "class_order",
    "class_names",
    "tau_area",
    "min_pixels",
    "tau_sim",
    "variance_threshold",
    "k",
    "seed",
    "theta_overlap",
    "include_bg",
    "masks_dir",
    "agg_dir",
    "embeddings_dir",
    "gt_dir",
    "eval_masks_dir",
    "eval_agg_dir",
    "eval_embeddings_dir",
    "eval_gt_dir",
];

struct Entries {
    values: BTreeMap<String, (usize, String)>,
    base: PathBuf,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => v
                .parse()
                .map_err(|e| anyhow!("line {line}: invalid value {v:?} for {key}: {e}")),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|(_, v)| self.base.join(v))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let cfg =
            Self::parse(&text, &base).with_context(|| format!("in config {}", path.display()))?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected `key = value`"))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                bail!(
                    "line {line_no}: unknown key {key:?} (known keys: {})",
                    KEYS.join(", ")
                );
            }
            if values
                .insert(key.to_string(), (line_no, value.trim().to_string()))
                .is_some()
            {
                bail!("line {line_no}: duplicate key {key:?}");
            }
        }
        let e = Entries {
            values,
            base: base.to_path_buf(),
        };

        let split = e
            .raw("split")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| anyhow!("missing required key `split` (e.g. split = 15-5)"))?;
        let class_order = class_order(&e)?;
        let class_names = match e.raw("class_names") {
            None => BTreeMap::new(),
            Some((line, v)) => {
                let names: Vec<&str> = v.split(',').map(str::trim).collect();
                if names.len() != class_order.len() {
                    bail!(
                        "line {line}: {} class names given for {} classes",
                        names.len(),
                        class_order.len()
                    );
                }
                class_order
                    .iter()
                    .zip(names)
                    .map(|(c, n)| (*c, n.to_string()))
                    .collect()
            }
        };

        let train = data_paths(&e, "")?
            .ok_or_else(|| anyhow!("missing `gt_dir`: ground truth is needed to label regions"))?;
        let eval = data_paths(&e, "eval_")?;

        let cfg = PipelineConfig {
            split,
            class_order,
            class_names,
            tau_area: e.parse("tau_area", DEFAULT_TAU_AREA)?,
            min_pixels: e.parse("min_pixels", 1)?,
            tau_sim: e.parse("tau_sim", DEFAULT_TAU_SIM)?,
            variance_threshold: e.parse("variance_threshold", DEFAULT_VARIANCE_THRESHOLD)?,
            k: e.parse("k", DEFAULT_SUBCLUSTERS)?,
            seed: e.parse("seed", 0)?,
            theta_overlap: e.parse("theta_overlap", DEFAULT_THETA_OVERLAP)?,
            include_bg: e.parse("include_bg", true)?,
            train,
            eval,
        };
        cfg.check_ranges()?;
        Ok(cfg)
    }

    fn check_ranges(&self) -> Result<()> {
        if !(self.tau_area > 0.0 && self.tau_area <= 1.0) {
            bail!("tau_area must lie in (0, 1], got {}", self.tau_area);
        }
        if self.min_pixels == 0 {
            bail!("min_pixels must be at least 1");
        }
        if !(-1.0..=1.0).contains(&self.tau_sim) {
            bail!("tau_sim must lie in [-1, 1], got {}", self.tau_sim);
        }
        if self.variance_threshold.is_nan() || self.variance_threshold < 0.0 {
            bail!(
                "variance_threshold must be >= 0, got {}",
                self.variance_threshold
            );
        }
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if !(self.theta_overlap > 0.0 && self.theta_overlap <= 1.0) {
            bail!(
                "theta_overlap must lie in (0, 1], got {}",
                self.theta_overlap
            );
        }
        Ok(())
    }

    fn check_paths(&self) -> Result<()> {
        for set in std::iter::once(&self.train).chain(&self.eval) {
            let seg = match &set.segments {
                SegmentSource::Masks(p) | SegmentSource::Aggregated(p) => p,
            };
            for dir in [seg, &set.embeddings, &set.gt] {
                if !dir.is_dir() {
                    bail!("directory {} does not exist", dir.display());
                }
            }
        }
        Ok(())
    }

    pub fn aggregate_options(&self) -> AggregateOptions {
        AggregateOptions {
            tau_area: self.tau_area,
            min_pixels: self.min_pixels,
        }
    }

    pub fn registration(&self) -> RegistrationParams {
        RegistrationParams {
            variance_threshold: self.variance_threshold,
            k: self.k,
            seed: self.seed,
        }
    }
}

fn class_order(e: &Entries) -> Result<Vec<ClassId>> {
    match (e.raw("n_classes"), e.raw("class_order")) {
        (Some(_), Some((line, _))) => {
            bail!("line {line}: give either n_classes or class_order, not both")
        }
        (None, None) => bail!("missing `n_classes` or `class_order`"),
        (Some(_), None) => {
            let n: u16 = e.parse("n_classes", 0)?;
            if n == 0 || n >= ClassId::IGNORE.0 {
                bail!("n_classes must lie in 1..=254, got {n}");
            }
            Ok((1..=n).map(ClassId).collect())
        }
        (None, Some((line, v))) => {
            let mut seen = BTreeSet::new();
            v.split(',')
                .map(|s| {
                    let id: u16 = s
                        .trim()
                        .parse()
                        .map_err(|_| anyhow!("line {line}: bad class id {:?}", s.trim()))?;
                    let c = ClassId(id);
                    if !c.is_foreground() {
                        bail!("line {line}: class id {id} is reserved");
                    }
                    if !seen.insert(c) {
                        bail!("line {line}: class id {id} listed twice");
                    }
                    Ok(c)
                })
                .collect()
        }
    }
}

fn data_paths(e: &Entries, prefix: &str) -> Result<Option<DataPaths>> {
    let key = |k: &str| format!("{prefix}{k}");
    let masks = e.path(&key("masks_dir"));
    let agg = e.path(&key("agg_dir"));
    let embeddings = e.path(&key("embeddings_dir"));
    let gt = e.path(&key("gt_dir"));
    if masks.is_none() && agg.is_none() && embeddings.is_none() && gt.is_none() {
        return Ok(None);
    }
    let segments = match (masks, agg) {
        (Some(m), None) => SegmentSource::Masks(m),
        (None, Some(a)) => SegmentSource::Aggregated(a),
        (Some(_), Some(_)) => bail!(
            "give either {} or {}, not both",
            key("masks_dir"),
            key("agg_dir")
        ),
        (None, None) => bail!("missing {} or {}", key("masks_dir"), key("agg_dir")),
    };
    let embeddings = embeddings.ok_or_else(|| anyhow!("missing {}", key("embeddings_dir")))?;
    let gt = gt.ok_or_else(|| anyhow!("missing {}", key("gt_dir")))?;
    Ok(Some(DataPaths {
        segments,
        embeddings,
        gt,
    }))
}
