//! Seeded synthetic benchmark with biased few shots.
//!
//! Class means are orthogonal directions (random ones when there are more
//! classes than dimensions) scaled by `center_separation`. Test and
//! validation samples are the class mean plus isotropic Gaussian noise.
//! Few shots get an extra offset of length `center_bias` pointing towards
//! another class's mean, so they sit near a decision boundary instead of at
//! the class centre. The class weights are the unit true means. With
//! `imbalance` above 1 the test split is long-tailed: class `c` gets
//! `samples_per_class * imbalance^(-c / (classes - 1))` samples.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::ValidationSplit;
use crate::error::{KclError, Result};
use crate::io::{write_emb, write_labels};
use crate::types::{dot, l2_norm, normalize, validate_run, ClassWeights, FeatureMatrix, LabelMatrix, RunBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Few shots per class.
    pub shots: usize,
    /// Validation samples per class; zero disables the split.
    pub val_per_class: usize,
    pub center_separation: f64,
    pub noise_sigma: f64,
    pub center_bias: f64,
    /// Ratio between the largest and smallest test class.
    pub imbalance: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            samples_per_class: 100,
            shots: 1,
            val_per_class: 0,
            center_separation: 1.0,
            noise_sigma: 0.25,
            center_bias: 0.6,
            imbalance: 1.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("classes", self.classes),
            ("dim", self.dim),
            ("samples_per_class", self.samples_per_class),
            ("shots", self.shots),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return Err(KclError::DegenerateSpec(format!("{name} must be >= 1")));
        }
        if self.classes < 2 {
            return Err(KclError::DegenerateSpec("need at least 2 classes".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(KclError::DegenerateSpec(format!("sigma must be > 0, got {}", self.noise_sigma)));
        }
        if !(self.center_separation > 0.0 && self.center_separation.is_finite()) {
            return Err(KclError::DegenerateSpec(format!(
                "separation must be > 0, got {}",
                self.center_separation
            )));
        }
        if !(self.center_bias >= 0.0 && self.center_bias.is_finite()) {
            return Err(KclError::DegenerateSpec(format!("bias must be >= 0, got {}", self.center_bias)));
        }
        if !(self.imbalance >= 1.0 && self.imbalance.is_finite()) {
            return Err(KclError::DegenerateSpec(format!("imbalance must be >= 1, got {}", self.imbalance)));
        }
        Ok(())
    }

    /// Test samples drawn for each class.
    pub fn test_counts(&self) -> Vec<usize> {
        let last = (self.classes - 1).max(1) as f64;
        (0..self.classes)
            .map(|c| {
                let n = self.samples_per_class as f64 * self.imbalance.powf(-(c as f64) / last);
                (n.round() as usize).max(1)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub weights: ClassWeights,
    pub test: FeatureMatrix,
    pub test_labels: Vec<usize>,
    pub cache: FeatureMatrix,
    pub cache_labels: LabelMatrix,
    pub val: Option<ValidationSplit>,
    /// Unnormalized class means, one row per class.
    pub means: FeatureMatrix,
}

impl SynthData {
    pub fn bundle(&self) -> Result<RunBundle> {
        validate_run(
            self.test.clone(),
            self.weights.clone(),
            Some(self.cache.clone()),
            Some(self.cache_labels.clone()),
        )
    }

    pub fn zero_shot_bundle(&self) -> Result<RunBundle> {
        validate_run(self.test.clone(), self.weights.clone(), None, None)
    }

    /// Writes `weights.emb`, `test.emb`, `test.lbl`, `cache.emb`,
    /// `cache.lbl`, plus `val.emb` and `val.lbl` when a split exists.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| KclError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut written = Vec::new();
        let mut emb = |name: &str, m: &FeatureMatrix| -> Result<()> {
            write_emb(dir.join(name), m)?;
            written.push(name.to_owned());
            Ok(())
        };
        emb("weights.emb", self.weights.features())?;
        emb("test.emb", &self.test)?;
        emb("cache.emb", &self.cache)?;
        if let Some(v) = &self.val {
            emb("val.emb", &v.features)?;
        }
        let mut lbl = |name: &str, l: &[usize]| -> Result<()> {
            write_labels(dir.join(name), l)?;
            written.push(name.to_owned());
            Ok(())
        };
        lbl("test.lbl", &self.test_labels)?;
        lbl("cache.lbl", self.cache_labels.labels())?;
        if let Some(v) = &self.val {
            lbl("val.lbl", v.labels.labels())?;
        }
        Ok(written)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn class_directions(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut v = gaussian(rng, dim);
        // Gram-Schmidt while orthogonality is still possible
        if dirs.len() < dim {
            for u in &dirs {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = l2_norm(&v);
        if !(n.is_finite() && n > 1e-9) {
            return Err(KclError::DegenerateSpec("could not draw a class direction".into()));
        }
        v.iter_mut().for_each(|x| *x /= n);
        dirs.push(v);
    }
    Ok(dirs)
}

fn noisy(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    center
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            m + sigma * z
        })
        .collect()
}

fn unit_rows(rows: Vec<Vec<f64>>, dim: usize) -> Result<FeatureMatrix> {
    let m = FeatureMatrix::new(rows.len(), dim, rows.concat())
        .map_err(|e| KclError::DegenerateSpec(e.to_string()))?;
    normalize(&m).map_err(|e| KclError::DegenerateSpec(e.to_string()))
}

fn draw_split(
    rng: &mut ChaCha8Rng,
    means: &[Vec<f64>],
    counts: &[usize],
    sigma: f64,
    dim: usize,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    let mut samples: Vec<(Vec<f64>, usize)> = Vec::with_capacity(counts.iter().sum());
    for (c, (mean, &n)) in means.iter().zip(counts).enumerate() {
        for _ in 0..n {
            samples.push((noisy(rng, mean, sigma), c));
        }
    }
    samples.shuffle(rng);
    let (rows, labels): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    Ok((unit_rows(rows, dim)?, labels))
}

pub fn gen_synth(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (c_n, d) = (spec.classes, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let dirs = class_directions(&mut rng, c_n, d)?;
    let means: Vec<Vec<f64>> = dirs
        .iter()
        .map(|u| u.iter().map(|x| x * spec.center_separation).collect())
        .collect();
    let weights = ClassWeights::new(unit_rows(dirs, d)?)?;

    let (test, test_labels) = draw_split(&mut rng, &means, &spec.test_counts(), spec.noise_sigma, d)?;

    let mut shots = Vec::with_capacity(c_n * spec.shots);
    let mut shot_labels = Vec::with_capacity(c_n * spec.shots);
    for c in 0..c_n {
        let other = (c + rng.random_range(1..c_n)) % c_n;
        let toward: Vec<f64> = means[other].iter().zip(&means[c]).map(|(o, m)| o - m).collect();
        let n = l2_norm(&toward);
        let center: Vec<f64> = means[c]
            .iter()
            .zip(&toward)
            .map(|(m, t)| m + spec.center_bias * t / n)
            .collect();
        for _ in 0..spec.shots {
            shots.push(noisy(&mut rng, &center, spec.noise_sigma));
            shot_labels.push(c);
        }
    }
    let cache = unit_rows(shots, d)?;
    let cache_labels = LabelMatrix::new(shot_labels, c_n)?;

    let val = if spec.val_per_class > 0 {
        let (features, labels) = draw_split(&mut rng, &means, &vec![spec.val_per_class; c_n], spec.noise_sigma, d)?;
        Some(ValidationSplit {
            features,
            labels: LabelMatrix::new(labels, c_n)?,
        })
    } else {
        None
    };

    Ok(SynthData {
        weights,
        test,
        test_labels,
        cache,
        cache_labels,
        val,
        means: FeatureMatrix::new(c_n, d, means.concat())?,
    })
}

/// Mean over classes of the distance between the normalized centroid of the
/// rows labeled `c` and the unit class weight `c`. Classes without rows are
/// skipped.
pub fn centroid_error(features: &FeatureMatrix, labels: &[usize], weights: &ClassWeights) -> f64 {
    let (c_n, d) = (weights.classes(), weights.dim());
    let mut sums = vec![vec![0.0; d]; c_n];
    let mut counts = vec![0usize; c_n];
    for (row, &c) in features.iter_rows().zip(labels) {
        sums[c].iter_mut().zip(row).for_each(|(s, x)| *s += x);
        counts[c] += 1;
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..c_n {
        let n = l2_norm(&sums[c]);
        if counts[c] == 0 || n == 0.0 {
            continue;
        }
        let dist: f64 = sums[c]
            .iter()
            .zip(weights.row(c))
            .map(|(s, w)| (s / n - w).powi(2))
            .sum::<f64>()
            .sqrt();
        total += dist;
        present += 1;
    }
    if present == 0 {
        0.0
    } else {
        total / present as f64
    }
}
