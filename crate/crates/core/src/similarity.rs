//! Cosine similarity between embeddings. Larger means more alike; a pair is
//! judged kin when its score reaches the decision threshold.

use rayon::prelude::*;

use crate::embedding_store::{DatasetIndex, EmbeddingMatrix};
use crate::pair_sampler::PairSet;
use crate::{Error, Result};

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn l2_norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn l2_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(x);
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let (nx, ny) = (l2_norm(x), l2_norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(x, y) / (nx * ny))
}

/// Cosine score for every pair, in pair order.
pub fn score_pairs(pairs: &PairSet, index: &DatasetIndex, matrix: &EmbeddingMatrix) -> Result<Vec<f64>> {
    pairs
        .pairs
        .par_iter()
        .map(|p| {
            let a = matrix.row_f64(index.row_of(&p.image_a)?)?;
            let b = matrix.row_f64(index.row_of(&p.image_b)?)?;
            cosine_similarity(&a, &b)
        })
        .collect()
}
