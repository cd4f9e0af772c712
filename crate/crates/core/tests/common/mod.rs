//! Reference implementations and synthetic fixtures for integration tests.
//!
//! The oracles here are written as literal loops and deliberately avoid the
//! library's own helpers.

#![allow(dead_code)]

use protoseg_core::classifier::Prediction;
use protoseg_core::eval::SegmentSample;
use protoseg_core::mask_agg::BBox;
use protoseg_core::protocol::{attach_labels, label_regions};
use protoseg_core::{
    aggregate, AggregatedMask, ClassId, LabelMap, PrototypeBank, RawMask, RawMaskSet,
    RegionEmbedding,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- masks

/// Filter, stable descending sort, pixel-wise first-come labelling.
pub fn naive_aggregate(set: &RawMaskSet, tau_area: f64) -> Vec<u16> {
    let hw = set.height * set.width;
    let limit = tau_area * hw as f64;
    let mut kept: Vec<(usize, &RawMask)> = Vec::new();
    for (i, m) in set.masks.iter().enumerate() {
        if (m.area as f64) < limit {
            kept.push((i, m));
        }
    }
    // insertion sort: descending area, input index ascending on ties
    for i in 1..kept.len() {
        let mut j = i;
        while j > 0 {
            let (ia, a) = kept[j - 1];
            let (ib, b) = kept[j];
            let swap = b.area > a.area || (b.area == a.area && ib < ia);
            if !swap {
                break;
            }
            kept.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut agg = vec![0u16; hw];
    let mut c = 1u16;
    for (_, m) in kept {
        let mut any = false;
        for y in 0..set.height {
            for x in 0..set.width {
                let p = y * set.width + x;
                if m.pixels[p] && agg[p] == 0 {
                    agg[p] = c;
                    any = true;
                }
            }
        }
        if any {
            c += 1;
        }
    }
    agg
}

/// Random mask set with areas spread across the whole range, including
/// masks close to `0.9 * H * W`.
pub fn random_mask_set(rng: &mut impl Rng, max_side: usize, max_masks: usize) -> RawMaskSet {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let n = rng.random_range(0..=max_masks);
    let masks = (0..n)
        .map(|_| {
            let density: f64 = match rng.random_range(0..4) {
                0 => rng.random_range(0.0..0.2),
                1 => rng.random_range(0.8..1.0),
                2 => rng.random_range(0.85..0.95),
                _ => 2.0, // rectangle
            };
            let px: Vec<bool> = if density > 1.0 {
                let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
                let (r1, c1) = (rng.random_range(r0..h), rng.random_range(c0..w));
                (0..h * w)
                    .map(|p| {
                        let (r, c) = (p / w, p % w);
                        r >= r0 && r <= r1 && c >= c0 && c <= c1
                    })
                    .collect()
            } else {
                (0..h * w).map(|_| rng.random_bool(density)).collect()
            };
            RawMask::from_pixels(px)
        })
        .collect();
    RawMaskSet::new("rand", h, w).with_masks(masks)
}

pub fn random_label_map(rng: &mut impl Rng, max_side: usize, max_label: u16) -> LabelMap {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let data = (0..h * w)
        .map(|_| rng.random_range(0..=max_label))
        .collect();
    LabelMap::from_vec(h, w, data).unwrap()
}

/// Random aggregated mask with contiguous labels.
pub fn random_aggregated(rng: &mut impl Rng, max_side: usize, max_masks: usize) -> AggregatedMask {
    let set = random_mask_set(rng, max_side, max_masks);
    aggregate(&set, 0.9).unwrap()
}

/// Full-grid scan for the box of `label`.
pub fn brute_bbox(map: &LabelMap, label: u16) -> Option<(BBox, u64)> {
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    for r in 0..map.height() {
        for c in 0..map.width() {
            if map.get(r, c) == label {
                rows.push(r);
                cols.push(c);
            }
        }
    }
    if rows.is_empty() {
        return None;
    }
    Some((
        BBox {
            row_min: *rows.iter().min().unwrap(),
            col_min: *cols.iter().min().unwrap(),
            row_max: *rows.iter().max().unwrap(),
            col_max: *cols.iter().max().unwrap(),
        },
        rows.len() as u64,
    ))
}

// ---------------------------------------------------------------- vectors

pub fn random_vec(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

pub fn random_unit_f64(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = random_vec(rng, dim).iter().map(|&x| x as f64).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Sum, divide, normalize.
pub fn naive_prototype(vs: &[Vec<f64>]) -> Vec<f64> {
    let d = vs[0].len();
    let mut sum = vec![0.0; d];
    for v in vs {
        for i in 0..d {
            sum[i] += v[i];
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / vs.len() as f64).collect();
    let n = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    mean.iter().map(|x| x / n).collect()
}

/// Average of `1 - cos(x_i, mean)`, evaluated term by term.
pub fn naive_variance(vs: &[Vec<f64>]) -> f64 {
    let d = vs[0].len();
    let mut mu = vec![0.0; d];
    for v in vs {
        for i in 0..d {
            mu[i] += v[i] / vs.len() as f64;
        }
    }
    let mu_norm = mu.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut total = 0.0;
    for v in vs {
        let dot: f64 = (0..d).map(|i| v[i] * mu[i]).sum();
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        total += 1.0 - dot / (vn * mu_norm);
    }
    total / vs.len() as f64
}

/// Scores every prototype of every class, then picks the maximum, preferring
/// lower class ids and lower prototype indices on ties.
pub fn exhaustive_classify(z: &[f32], bank: &PrototypeBank, tau_sim: f64) -> (ClassId, f64) {
    let zf: Vec<f64> = z.iter().map(|&x| x as f64).collect();
    let norm = zf.iter().map(|x| x * x).sum::<f64>().sqrt();
    let q: Vec<f64> = zf.iter().map(|x| x / norm).collect();
    let mut scores: Vec<(ClassId, usize, f64)> = Vec::new();
    for class in bank.classes() {
        for (j, p) in class.prototypes.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..q.len() {
                s += p[i] as f64 * q[i];
            }
            scores.push((class.class_id, j, s));
        }
    }
    let mut best = scores[0];
    for &s in &scores[1..] {
        if s.2 > best.2 || (s.2 == best.2 && (s.0, s.1) < (best.0, best.1)) {
            best = s;
        }
    }
    let class = if best.2 >= tau_sim {
        best.0
    } else {
        ClassId::BACKGROUND
    };
    (class, best.2)
}

/// Pixel loop painting predictions onto the region map.
pub fn naive_paint(agg: &AggregatedMask, preds: &[Prediction]) -> Vec<u16> {
    let mut out = vec![0u16; agg.labels.as_slice().len()];
    for (i, &r) in agg.labels.as_slice().iter().enumerate() {
        for p in preds {
            if r != 0 && p.region_id == r as u32 {
                out[i] = p.predicted_class.0;
            }
        }
    }
    out
}

// ---------------------------------------------------------------- datasets

pub struct SyntheticDataset {
    pub train: Vec<RegionEmbedding>,
    pub eval: Vec<SegmentSample>,
    pub n_classes: usize,
}

/// Images tiled into rectangular regions, each region carrying one class
/// (or background) and an embedding drawn near that class's modes. Even
/// classes have two distant modes so sub-clustering kicks in.
pub fn synthetic_dataset(n_classes: u16, dim: usize, images: usize, seed: u64) -> SyntheticDataset {
    let mut rng = rng(seed);
    let modes: Vec<Vec<Vec<f64>>> = (0..=n_classes)
        .map(|c| {
            let n_modes = if c % 2 == 0 { 2 } else { 1 };
            (0..n_modes)
                .map(|_| random_unit_f64(&mut rng, dim))
                .collect()
        })
        .collect();
    let make = |rng: &mut ChaCha8Rng, prefix: &str, img: usize| {
        let (h, w) = (12, 12);
        let mut regions = LabelMap::zeros(h, w);
        let mut gt = LabelMap::zeros(h, w);
        let mut embeddings = Vec::new();
        let mut next = 1u16;
        for br in 0..3 {
            for bc in 0..3 {
                if rng.random_bool(0.15) {
                    continue;
                }
                let class: u16 = if rng.random_bool(0.15) {
                    0
                } else {
                    rng.random_range(1..=n_classes)
                };
                for r in br * 4..br * 4 + 4 {
                    for c in bc * 4..bc * 4 + 4 {
                        regions.set(r, c, next);
                        gt.set(r, c, class);
                    }
                }
                // one ignore pixel on the region border
                gt.set(br * 4, bc * 4, 255);
                let modes = &modes[class as usize];
                let mode = &modes[rng.random_range(0..modes.len())];
                let v: Vec<f32> = mode
                    .iter()
                    .map(|x| (x + 0.25 * rng.random_range(-1.0..1.0)) as f32)
                    .collect();
                embeddings.push(RegionEmbedding::new(
                    format!("{prefix}{img}"),
                    next as u32,
                    v,
                ));
                next += 1;
            }
        }
        SegmentSample {
            segments: AggregatedMask {
                image_id: format!("{prefix}{img}"),
                labels: regions,
            },
            gt,
            embeddings,
        }
    };
    let train_samples: Vec<SegmentSample> =
        (0..images).map(|i| make(&mut rng, "train", i)).collect();
    let eval: Vec<SegmentSample> = (0..images / 2).map(|i| make(&mut rng, "val", i)).collect();

    let mut train = Vec::new();
    for s in &train_samples {
        let labels = label_regions(&s.segments, &s.gt, 0.5).unwrap();
        let mut embs = s.embeddings.clone();
        attach_labels(&mut embs, &labels);
        train.extend(embs);
    }
    // every class must have data
    for c in 1..=n_classes {
        assert!(
            train.iter().any(|e| e.gt_class == Some(ClassId(c))),
            "synthetic dataset lacks class {c}; change the seed"
        );
    }
    SyntheticDataset {
        train,
        eval,
        n_classes: n_classes as usize,
    }
}
