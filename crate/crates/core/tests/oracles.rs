//! Randomized comparisons against the reference implementations in `common`.

mod common;

use common::*;
use protoseg_core::classifier::{classify, classify_batch, render, Prediction};
use protoseg_core::kmeans::{self, KMeansConfig};
use protoseg_core::mask_agg::{crop_rois, extract_regions, sort_by_area};
use protoseg_core::protocol::label_regions;
use protoseg_core::prototype_bank::{self, compute_prototype, variance_score};
use protoseg_core::vector::l2_normalize;
use protoseg_core::{
    aggregate, ClassId, LabelMap, PrototypeBank, RawMaskSet, RegionEmbedding, RegistrationParams,
    RgbImage,
};
use rand::Rng;

#[test]
fn aggregate_matches_naive_reference() {
    let mut rng = rng(1);
    for case in 0..1000 {
        let set = random_mask_set(&mut rng, 32, 10);
        let agg = aggregate(&set, 0.9).unwrap();
        assert_eq!(
            agg.labels.as_slice(),
            naive_aggregate(&set, 0.9).as_slice(),
            "case {case}"
        );
    }
}

#[test]
fn sort_matches_reference_sort() {
    let mut rng = rng(2);
    for _ in 0..1000 {
        let set = random_mask_set(&mut rng, 8, 10);
        let sorted = sort_by_area(&set);
        // reference: selection of the max remaining area, earliest index first
        let mut remaining: Vec<usize> = (0..set.masks.len()).collect();
        let mut expect = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                if set.masks[remaining[i]].area > set.masks[remaining[best]].area {
                    best = i;
                }
            }
            expect.push(set.masks[remaining.remove(best)].clone());
        }
        assert_eq!(sorted.masks, expect);
    }
}

#[test]
fn nested_mask_fixture() {
    // A: 3x4 block (12 px) containing B: 2x2 (4 px)
    let (h, w) = (6, 6);
    let a: Vec<bool> = (0..h * w).map(|p| p / w < 3 && p % w < 4).collect();
    let b: Vec<bool> = (0..h * w)
        .map(|p| (1..3).contains(&(p / w)) && (1..3).contains(&(p % w)))
        .collect();
    let set = RawMaskSet::new("n", h, w).with_masks(vec![
        protoseg_core::RawMask::from_pixels(b),
        protoseg_core::RawMask::from_pixels(a),
    ]);
    let agg = aggregate(&set, 0.9).unwrap();
    assert_eq!(agg.labels.as_slice(), naive_aggregate(&set, 0.9).as_slice());
    assert_eq!(agg.region_count(), 1);
    assert_eq!(extract_regions(&agg)[0].pixel_count, 12);
}

#[test]
fn bboxes_match_full_scan() {
    let mut rng = rng(3);
    for _ in 0..500 {
        let map = random_label_map(&mut rng, 16, 6);
        // compact labels so they are contiguous
        let mut present: Vec<u16> = map.as_slice().iter().copied().filter(|&l| l > 0).collect();
        present.sort();
        present.dedup();
        let data = map
            .as_slice()
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    present.iter().position(|&p| p == l).unwrap() as u16 + 1
                }
            })
            .collect();
        let map = LabelMap::from_vec(map.height(), map.width(), data).unwrap();
        let agg = protoseg_core::AggregatedMask {
            image_id: "r".into(),
            labels: map.clone(),
        };
        let regions = extract_regions(&agg);
        assert_eq!(regions.len(), present.len());
        for (i, p) in regions.iter().enumerate() {
            assert_eq!(p.region_id, i as u16 + 1);
            let (bbox, n) = brute_bbox(&map, p.region_id).unwrap();
            assert_eq!((p.bbox, p.pixel_count), (bbox, n));
        }
    }
}

#[test]
fn roi_pixels_match_label_map() {
    let mut rng = rng(4);
    for _ in 0..200 {
        let agg = random_aggregated(&mut rng, 16, 6);
        let (h, w) = agg.labels.shape();
        let raw: Vec<u8> = (0..h * w * 3).map(|_| rng.random_range(1..=255)).collect();
        let img = RgbImage::from_vec(h, w, raw).unwrap();
        for roi in crop_rois(&img, &agg).unwrap() {
            for r in 0..roi.bbox.height() {
                for c in 0..roi.bbox.width() {
                    let (gr, gc) = (r + roi.bbox.row_min, c + roi.bbox.col_min);
                    let expect = if agg.labels.get(gr, gc) == roi.region_id {
                        img.pixel(gr, gc)
                    } else {
                        [0, 0, 0]
                    };
                    assert_eq!(roi.pixels.pixel(r, c), expect);
                }
            }
        }
    }
}

#[test]
fn normalize_is_idempotent() {
    let mut rng = rng(5);
    for _ in 0..500 {
        let dim = rng.random_range(1..40);
        let v: Vec<f64> = random_vec(&mut rng, dim)
            .iter()
            .map(|&x| x as f64 * 10.0)
            .collect();
        let once = l2_normalize(&v).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn prototype_matches_sum_divide_normalize() {
    let mut rng = rng(6);
    for _ in 0..100 {
        let dim = rng.random_range(2..32);
        let vs: Vec<Vec<f64>> = (0..50).map(|_| random_unit_f64(&mut rng, dim)).collect();
        let embs: Vec<RegionEmbedding> = vs
            .iter()
            .map(|v| RegionEmbedding::new("i", 0, v.iter().map(|&x| x as f32).collect()))
            .collect();
        let exact: Vec<Vec<f64>> = embs.iter().map(RegionEmbedding::to_f64).collect();
        let got = compute_prototype(&embs).unwrap();
        for (a, b) in got.iter().zip(naive_prototype(&exact)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn variance_matches_straight_line_formula() {
    let mut rng = rng(7);
    for _ in 0..100 {
        let dim = rng.random_range(2..32);
        let embs: Vec<RegionEmbedding> = (0..50)
            .map(|_| RegionEmbedding::new("i", 0, random_vec(&mut rng, dim)))
            .collect();
        let exact: Vec<Vec<f64>> = embs.iter().map(RegionEmbedding::to_f64).collect();
        let got = variance_score(&embs).unwrap();
        assert!((got - naive_variance(&exact)).abs() < 1e-9);
        assert!((0.0..=2.0).contains(&got));
    }
}

/// Optimal 2-partition SSE by enumerating all assignments.
fn best_two_partition(points: &[Vec<f64>]) -> (f64, u32) {
    let n = points.len();
    let sse_of = |members: &[&Vec<f64>]| {
        if members.is_empty() {
            return 0.0;
        }
        let d = members[0].len();
        let c: Vec<f64> = (0..d)
            .map(|i| members.iter().map(|m| m[i]).sum::<f64>() / members.len() as f64)
            .collect();
        members
            .iter()
            .map(|m| (0..d).map(|i| (m[i] - c[i]).powi(2)).sum::<f64>())
            .sum::<f64>()
    };
    let mut best = (f64::INFINITY, 0);
    for mask in 1..(1u32 << n) - 1 {
        let a: Vec<&Vec<f64>> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| &points[i])
            .collect();
        let b: Vec<&Vec<f64>> = (0..n)
            .filter(|i| mask & (1 << i) == 0)
            .map(|i| &points[i])
            .collect();
        let s = sse_of(&a) + sse_of(&b);
        if s < best.0 {
            best = (s, mask);
        }
    }
    best
}

#[test]
fn kmeans_separates_antipodal_blobs() {
    let pts: Vec<Vec<f64>> = vec![
        vec![1.0, 0.02],
        vec![0.99, -0.03],
        vec![1.0, 0.0],
        vec![-1.0, 0.01],
        vec![-0.98, -0.02],
        vec![-1.0, 0.03],
    ];
    let (opt, mask) = best_two_partition(&pts);
    assert!(mask == 0b000111 || mask == 0b111000);
    let single = {
        let c = [
            pts.iter().map(|p| p[0]).sum::<f64>() / 6.0,
            pts.iter().map(|p| p[1]).sum::<f64>() / 6.0,
        ];
        pts.iter()
            .map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
            .sum::<f64>()
    };
    for seed in 0..10 {
        let fit = kmeans::fit(&pts, &KMeansConfig::new(2, seed)).unwrap();
        assert_eq!(fit.assignments[0], fit.assignments[1]);
        assert_eq!(fit.assignments[0], fit.assignments[2]);
        assert_eq!(fit.assignments[3], fit.assignments[4]);
        assert_ne!(fit.assignments[0], fit.assignments[3]);
        assert!((fit.sse() - opt).abs() < 1e-12);
        assert!(fit.sse() < single);
    }
    let embs: Vec<RegionEmbedding> = pts
        .iter()
        .map(|p| RegionEmbedding::new("i", 0, p.iter().map(|&x| x as f32).collect()))
        .collect();
    let subs = prototype_bank::kmeans_subcluster(&embs, 2, 3).unwrap();
    assert_eq!(subs.len(), 2);
    assert!(subs.iter().any(|s| s[0] > 0.99) && subs.iter().any(|s| s[0] < -0.99));
}

#[test]
fn kmeans_is_deterministic_per_seed() {
    let mut rng = rng(8);
    let pts: Vec<Vec<f64>> = (0..60).map(|_| random_unit_f64(&mut rng, 8)).collect();
    let a = kmeans::fit(&pts, &KMeansConfig::new(5, 42)).unwrap();
    let b = kmeans::fit(&pts, &KMeansConfig::new(5, 42)).unwrap();
    let bits = |f: &kmeans::KMeansFit| {
        f.centroids
            .iter()
            .flat_map(|c| c.iter().map(|x| x.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

/// Points jittered around `(0.45, ±sqrt(1 - 0.45^2), 0)`. The exact blob
/// centres give a variance of `1 - cos(half angle) = 1 - 0.45 = 0.55`.
pub fn two_blob_fixture(per_blob: usize) -> Vec<RegionEmbedding> {
    let s = (1.0f64 - 0.45 * 0.45).sqrt();
    let mut out = Vec::new();
    for i in 0..per_blob {
        let j = (i as f64 + 1.0) * 1e-3;
        for sign in [1.0, -1.0] {
            out.push(RegionEmbedding::new(
                "blob",
                out.len() as u32,
                vec![0.45f32, (sign * s) as f32, j as f32],
            ));
        }
    }
    out
}

#[test]
fn two_blob_class_is_subclustered() {
    let embs = two_blob_fixture(4);
    let exact: Vec<Vec<f64>> = embs.iter().map(RegionEmbedding::to_f64).collect();
    let score = variance_score(&embs).unwrap();
    assert!((score - naive_variance(&exact)).abs() < 1e-9);
    assert!((score - 0.55).abs() < 1e-3, "{score}");

    let mut bank = PrototypeBank::new(3);
    let c = bank
        .register_class(
            ClassId(1),
            "blobs",
            &embs,
            &RegistrationParams::default(),
            0,
        )
        .unwrap();
    assert_eq!(c.prototypes.len(), 5);
    for p in &c.prototypes {
        let n: f64 = p.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
}

fn random_bank(rng: &mut impl Rng, dim: usize, n_classes: u16) -> PrototypeBank {
    let mut bank = PrototypeBank::new(dim);
    for c in 1..=n_classes {
        let n = rng.random_range(1..=8);
        let embs: Vec<RegionEmbedding> = (0..n)
            .map(|i| RegionEmbedding::new("t", i, random_vec(rng, dim)))
            .collect();
        let params = RegistrationParams {
            variance_threshold: if rng.random_bool(0.5) {
                0.0
            } else {
                f64::INFINITY
            },
            k: rng.random_range(1..=5),
            seed: rng.random(),
        };
        // rare zero-mean draws are skipped
        let _ = bank.register_class(ClassId(c), "", &embs, &params, 0);
    }
    bank
}

#[test]
fn classify_matches_exhaustive_search() {
    let mut rng = rng(9);
    let mut checked = 0;
    while checked < 1000 {
        let dim = rng.random_range(1..=64);
        let n_classes = rng.random_range(1..=10);
        let bank = random_bank(&mut rng, dim, n_classes);
        if bank.is_empty() {
            continue;
        }
        let z = RegionEmbedding::new("q", 0, random_vec(&mut rng, dim));
        let tau = rng.random_range(-0.2..0.9);
        let p = classify(&z, &bank, tau).unwrap();
        let (class, sim) = exhaustive_classify(&z.vector, &bank, tau);
        assert_eq!((p.predicted_class, p.best_similarity), (class, sim));
        checked += 1;
    }
}

#[test]
fn batch_equals_elementwise() {
    let mut rng = rng(10);
    let bank = random_bank(&mut rng, 16, 6);
    let zs: Vec<RegionEmbedding> = (0..100)
        .map(|i| RegionEmbedding::new("q", i, random_vec(&mut rng, 16)))
        .collect();
    let batch = classify_batch(&zs, &bank, 0.3).unwrap();
    for (z, p) in zs.iter().zip(&batch) {
        assert_eq!(&classify(z, &bank, 0.3).unwrap(), p);
    }
}

#[test]
fn render_matches_paint_loop() {
    let mut rng = rng(11);
    for _ in 0..300 {
        let agg = random_aggregated(&mut rng, 16, 8);
        let mut preds = Vec::new();
        for r in 1..=agg.region_count() as u32 {
            if rng.random_bool(0.7) {
                preds.push(Prediction {
                    image_id: agg.image_id.clone(),
                    region_id: r,
                    predicted_class: ClassId(rng.random_range(0..21)),
                    best_similarity: 0.0,
                    runner_up_class: None,
                });
            }
        }
        let map = render(&agg, &preds).unwrap();
        assert_eq!(map.labels.as_slice(), naive_paint(&agg, &preds).as_slice());
    }
}

#[test]
fn region_labels_match_histogram() {
    let mut rng = rng(12);
    for _ in 0..300 {
        let agg = random_aggregated(&mut rng, 16, 8);
        let (h, w) = agg.labels.shape();
        let gt_data: Vec<u16> = (0..h * w)
            .map(|_| match rng.random_range(0..10) {
                0 => 255,
                1..=2 => 0,
                _ => rng.random_range(1..4),
            })
            .collect();
        let gt = LabelMap::from_vec(h, w, gt_data).unwrap();
        let theta = rng.random_range(0.2..0.8);
        let labels = label_regions(&agg, &gt, theta).unwrap();
        assert_eq!(labels.len(), agg.region_count());
        for l in labels {
            let mut hist = [0u64; 256];
            let mut total = 0u64;
            for i in 0..h * w {
                if agg.labels.as_slice()[i] == l.region_id && gt.as_slice()[i] != 255 {
                    hist[gt.as_slice()[i] as usize] += 1;
                    total += 1;
                }
            }
            let mut best = (0usize, 0u64);
            for (c, &n) in hist.iter().enumerate().skip(1) {
                if n > best.1 {
                    best = (c, n);
                }
            }
            let frac = if total == 0 {
                0.0
            } else {
                best.1 as f64 / total as f64
            };
            let expect = if best.1 > 0 && frac >= theta {
                Some(ClassId(best.0 as u16))
            } else {
                None
            };
            assert_eq!(l.gt_class, expect);
            assert_eq!(l.overlap_fraction, frac);
        }
    }
}
