//! Similarity kernels.
//!
//! Every classifier in the crate is a sum of up to three `rows x C` terms:
//!
//! * completion term: `lambda * exp(-mu * (1 - f' D^T)) l_D`
//! * few-shot cache term: `alpha * exp(-beta * (1 - f' F^T)) l`
//! * text term: `f' W^T`
//!
//! Terms are accumulated in exactly that order. A term that is absent (empty
//! key set, zero weight, or masked out) is skipped rather than added as zero,
//! so the degenerate cases reduce bit-for-bit to the simpler classifiers.

use crate::error::{KclError, Result};
use crate::types::{dot, ClassWeights, FeatureMatrix, HyperParams, LabelMatrix, SimilarityMatrix};

/// Which modalities contribute to the combined logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalityMask {
    use_text: bool,
    use_visual: bool,
}

impl ModalityMask {
    pub const BOTH: ModalityMask = ModalityMask {
        use_text: true,
        use_visual: true,
    };
    pub const TEXT_ONLY: ModalityMask = ModalityMask {
        use_text: true,
        use_visual: false,
    };
    pub const VISUAL_ONLY: ModalityMask = ModalityMask {
        use_text: false,
        use_visual: true,
    };

    pub fn new(use_text: bool, use_visual: bool) -> Result<Self> {
        if !use_text && !use_visual {
            return Err(KclError::EmptyModality);
        }
        Ok(Self {
            use_text,
            use_visual,
        })
    }

    pub fn use_text(&self) -> bool {
        self.use_text
    }

    pub fn use_visual(&self) -> bool {
        self.use_visual
    }
}

impl Default for ModalityMask {
    fn default() -> Self {
        Self::BOTH
    }
}

/// A labeled key set queried through `exp(-sharpness * (1 - cos))`.
#[derive(Debug, Clone, Copy)]
pub struct CacheTerm<'a> {
    pub keys: &'a FeatureMatrix,
    pub labels: &'a LabelMatrix,
    pub weight: f64,
    pub sharpness: f64,
}

impl CacheTerm<'_> {
    fn check(&self, dim: usize, classes: usize) -> Result<()> {
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(KclError::NonPositiveBeta(self.sharpness));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(KclError::InvalidParam(format!(
                "cache weight must be >= 0, got {}",
                self.weight
            )));
        }
        if self.keys.cols() != dim {
            return Err(KclError::DimMismatch(format!(
                "cache keys have {} columns, queries {dim}",
                self.keys.cols()
            )));
        }
        if self.labels.rows() != self.keys.rows() {
            return Err(KclError::DimMismatch(format!(
                "{} cache keys but {} labels",
                self.keys.rows(),
                self.labels.rows()
            )));
        }
        if self.labels.classes() != classes {
            return Err(KclError::DimMismatch(format!(
                "cache labels span {} classes, expected {classes}",
                self.labels.classes()
            )));
        }
        Ok(())
    }

    fn is_active(&self) -> bool {
        self.weight != 0.0 && !self.keys.is_empty()
    }

    /// Adds (or writes, when `first`) this term's contribution for one query.
    fn accumulate(&self, query: &[f64], scratch: &mut [f64], out: &mut [f64], first: bool) {
        scratch.iter_mut().for_each(|v| *v = 0.0);
        for (key, &label) in self.keys.iter_rows().zip(self.labels.labels()) {
            scratch[label] += affinity(dot(query, key), self.sharpness);
        }
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            let term = self.weight * s;
            if first {
                *o = term;
            } else {
                *o += term;
            }
        }
    }
}

#[inline]
fn affinity(cos: f64, sharpness: f64) -> f64 {
    (-sharpness * (1.0 - cos)).exp()
}

fn check_queries(queries: &FeatureMatrix, weights: &ClassWeights) -> Result<()> {
    if queries.cols() != weights.dim() {
        return Err(KclError::DimMismatch(format!(
            "queries have {} columns, class weights {}",
            queries.cols(),
            weights.dim()
        )));
    }
    Ok(())
}

/// Sums the active terms in the fixed completion, cache, text order.
/// With no active term at all the result is a zero matrix.
pub fn combined_logits(
    queries: &FeatureMatrix,
    weights: &ClassWeights,
    completion: Option<CacheTerm<'_>>,
    cache: Option<CacheTerm<'_>>,
    use_text: bool,
) -> Result<SimilarityMatrix> {
    check_queries(queries, weights)?;
    let classes = weights.classes();
    let terms: Vec<CacheTerm<'_>> = [completion, cache].into_iter().flatten().collect();
    for t in &terms {
        t.check(queries.cols(), classes)?;
    }
    let terms: Vec<&CacheTerm<'_>> = terms.iter().filter(|t| t.is_active()).collect();

    let mut out = SimilarityMatrix::zeros(queries.rows(), classes);
    let mut scratch = vec![0.0; classes];
    for (j, q) in queries.iter_rows().enumerate() {
        let row = out.row_mut(j);
        let mut first = true;
        for t in &terms {
            t.accumulate(q, &mut scratch, row, first);
            first = false;
        }
        if use_text {
            for (c, o) in row.iter_mut().enumerate() {
                let text = dot(q, weights.row(c));
                if first {
                    *o = text;
                } else {
                    *o += text;
                }
            }
        }
    }
    Ok(out)
}

/// Zero-shot logits: cosine similarity of every query with every class weight.
pub fn clip_logits(f: &FeatureMatrix, weights: &ClassWeights) -> Result<SimilarityMatrix> {
    combined_logits(f, weights, None, None, true)
}

/// `exp(-beta * (1 - q k^T))` for every query/key pair; columns index keys.
pub fn cache_affinity(q: &FeatureMatrix, keys: &FeatureMatrix, beta: f64) -> Result<SimilarityMatrix> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(KclError::NonPositiveBeta(beta));
    }
    if q.cols() != keys.cols() {
        return Err(KclError::DimMismatch(format!(
            "queries have {} columns, keys {}",
            q.cols(),
            keys.cols()
        )));
    }
    let mut out = SimilarityMatrix::zeros(q.rows(), keys.rows());
    for (j, qr) in q.iter_rows().enumerate() {
        for (o, k) in out.row_mut(j).iter_mut().zip(keys.iter_rows()) {
            *o = affinity(dot(qr, k), beta);
        }
    }
    Ok(out)
}

/// Cache-model logits: few-shot affinity term plus zero-shot logits.
pub fn tip_logits(
    f: &FeatureMatrix,
    weights: &ClassWeights,
    cache: &FeatureMatrix,
    cache_labels: &LabelMatrix,
    alpha: f64,
    beta: f64,
) -> Result<SimilarityMatrix> {
    let term = CacheTerm {
        keys: cache,
        labels: cache_labels,
        weight: alpha,
        sharpness: beta,
    };
    combined_logits(f, weights, None, Some(term), true)
}

/// Few-shot re-estimation over the remaining samples, with the completion
/// set `D` acting as a second cache.
#[allow(clippy::too_many_arguments)]
pub fn kcl_fs_logits(
    remaining: &FeatureMatrix,
    weights: &ClassWeights,
    cache: &FeatureMatrix,
    cache_labels: &LabelMatrix,
    completion: &FeatureMatrix,
    completion_labels: &LabelMatrix,
    hp: &HyperParams,
) -> Result<SimilarityMatrix> {
    masked_logits(
        remaining,
        weights,
        Some((cache, cache_labels)),
        Some((completion, completion_labels)),
        hp,
        ModalityMask::BOTH,
    )
}

/// Zero-shot re-estimation: as [`kcl_fs_logits`] without a few-shot cache.
pub fn kcl_zs_logits(
    remaining: &FeatureMatrix,
    weights: &ClassWeights,
    completion: &FeatureMatrix,
    completion_labels: &LabelMatrix,
    hp: &HyperParams,
) -> Result<SimilarityMatrix> {
    masked_logits(
        remaining,
        weights,
        None,
        Some((completion, completion_labels)),
        hp,
        ModalityMask::BOTH,
    )
}

/// Full re-estimation formula with modality ablation. Text-only drops both
/// affinity terms; visual-only drops the text term.
pub fn masked_logits(
    remaining: &FeatureMatrix,
    weights: &ClassWeights,
    cache: Option<(&FeatureMatrix, &LabelMatrix)>,
    completion: Option<(&FeatureMatrix, &LabelMatrix)>,
    hp: &HyperParams,
    mask: ModalityMask,
) -> Result<SimilarityMatrix> {
    fn visual<'a>(
        pair: Option<(&'a FeatureMatrix, &'a LabelMatrix)>,
        mask: ModalityMask,
        weight: f64,
        sharpness: f64,
    ) -> Option<CacheTerm<'a>> {
        pair.filter(|_| mask.use_visual()).map(|(keys, labels)| CacheTerm {
            keys,
            labels,
            weight,
            sharpness,
        })
    }
    combined_logits(
        remaining,
        weights,
        visual(completion, mask, hp.lambda, hp.mu),
        visual(cache, mask, hp.alpha, hp.beta),
        mask.use_text(),
    )
}
