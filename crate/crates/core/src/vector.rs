//! Dense `f64` vector helpers shared by the prototype and classifier code.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Degenerate(format!(
            "cannot normalize vector with norm {n}"
        )));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity, clamped to `[-1, 1]`.
///
/// Uses `sqrt(|a|^2 |b|^2)` so that `cosine(x, x)` is exactly `1`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Arithmetic mean of equal-length vectors.
///
/// Accumulates offsets from the first vector, which makes the mean of
/// identical vectors exactly equal to that vector.
pub fn mean<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Empty("mean of no vectors".into()))?
        .as_ref();
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::dims(
                format!("dim {dim}"),
                format!("dim {}", v.len()),
            ));
        }
        for ((a, x), x0) in acc.iter_mut().zip(v).zip(first) {
            *a += x - x0;
        }
    }
    let n = vectors.len() as f64;
    Ok(first.iter().zip(&acc).map(|(x0, a)| x0 + a / n).collect())
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}
