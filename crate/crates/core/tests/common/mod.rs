#![allow(dead_code)]

use kcl_core::{
    normalize, validate_run, ClassWeights, FeatureMatrix, LabelMatrix, RunBundle, SimilarityMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> FeatureMatrix {
    let data: Vec<f64> = (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect();
    normalize(&FeatureMatrix::new(rows, dim, data).unwrap()).unwrap()
}

pub fn labels(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> LabelMatrix {
    LabelMatrix::new((0..rows).map(|_| rng.random_range(0..classes)).collect(), classes).unwrap()
}

/// Random logits; when `quantized`, values are snapped to a coarse grid so
/// ties are common.
pub fn logits(rng: &mut ChaCha8Rng, rows: usize, classes: usize, quantized: bool) -> SimilarityMatrix {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            (0..classes)
                .map(|_| {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    if quantized {
                        (v * 4.0).round() / 4.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    SimilarityMatrix::from_rows(&data).unwrap()
}

/// Random bundle with a few-shot cache of `shots` per class.
pub fn bundle(rng: &mut ChaCha8Rng, n: usize, classes: usize, dim: usize, shots: usize) -> RunBundle {
    let test = unit_rows(rng, n, dim);
    let weights = ClassWeights::new(unit_rows(rng, classes, dim)).unwrap();
    let cache = unit_rows(rng, classes * shots, dim);
    let cache_labels =
        LabelMatrix::new((0..classes * shots).map(|m| m % classes).collect(), classes).unwrap();
    validate_run(test, weights, Some(cache), Some(cache_labels)).unwrap()
}

pub fn bits_eq(a: &SimilarityMatrix, b: &SimilarityMatrix) -> bool {
    a.rows() == b.rows()
        && a.classes() == b.classes()
        && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}
