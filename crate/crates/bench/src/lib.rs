//! Synthetic inputs for the criterion benches.

use protoseg_core::{
    ClassId, PrototypeBank, RawMask, RawMaskSet, RegionEmbedding, RegistrationParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random rectangles on an `h x w` frame, like a fragmented generator output.
pub fn random_masks(h: usize, w: usize, n: usize, seed: u64) -> RawMaskSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masks = (0..n)
        .map(|_| {
            let r0 = rng.random_range(0..h);
            let c0 = rng.random_range(0..w);
            let r1 = rng.random_range(r0..h);
            let c1 = rng.random_range(c0..w);
            let mut px = vec![false; h * w];
            for r in r0..=r1 {
                px[r * w + c0..=r * w + c1]
                    .iter_mut()
                    .for_each(|p| *p = true);
            }
            RawMask::from_pixels(px)
        })
        .collect();
    RawMaskSet::new("bench", h, w).with_masks(masks)
}

pub fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// `n_per_class` noisy embeddings around one random direction per class.
pub fn clustered_embeddings(
    classes: u16,
    n_per_class: usize,
    dim: usize,
    seed: u64,
) -> Vec<RegionEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 1..=classes {
        let center = random_unit(dim, &mut rng);
        for i in 0..n_per_class {
            let v: Vec<f32> = center
                .iter()
                .map(|x| x + 0.3 * rng.random_range(-1.0f32..1.0))
                .collect();
            out.push(
                RegionEmbedding::new(format!("img{c}"), i as u32 + 1, v).with_class(ClassId(c)),
            );
        }
    }
    out
}

pub fn bank_from(
    embeddings: &[RegionEmbedding],
    dim: usize,
    params: &RegistrationParams,
) -> PrototypeBank {
    let mut bank = PrototypeBank::new(dim);
    let mut classes: Vec<ClassId> = embeddings.iter().filter_map(|e| e.gt_class).collect();
    classes.sort();
    classes.dedup();
    for c in classes {
        let members: Vec<_> = embeddings
            .iter()
            .filter(|e| e.gt_class == Some(c))
            .cloned()
            .collect();
        bank.register_class(c, "", &members, params, 0)
            .expect("synthetic class registers");
    }
    bank
}
