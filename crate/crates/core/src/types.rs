//! Dense matrices and shared domain types.
//!
//! Every matrix is row-major `f64`. Feature rows are expected to be unit
//! vectors so that inner products are cosine similarities; [`normalize`] is
//! applied once when data is loaded and never again downstream.

use serde::{Deserialize, Serialize};

use crate::error::{KclError, Result};

/// Maximum deviation from 1 tolerated for a row's L2 norm.
pub const NORM_TOLERANCE: f64 = 1e-5;

/// Rows with an L2 norm below this are rejected by [`normalize`].
pub const ZERO_ROW_EPS: f64 = 1e-12;

/// Class-side neighbourhood size of the mutual nearest neighbour criterion.
/// Each sample has exactly one predicted class, so this is fixed.
pub const K2: usize = 1;

/// An `N x d` matrix of embeddings (test set, few-shot cache, completion set).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(KclError::DimMismatch("embedding dimension must be >= 1".into()));
        }
        if data.len() != rows * cols {
            return Err(KclError::DimMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(KclError::NonFinite(pos / cols));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != cols {
                return Err(KclError::DimMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.as_ref().len()
                )));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data)
    }

    /// Zero-row matrix with `cols` columns.
    pub fn empty(cols: usize) -> Result<Self> {
        Self::new(0, cols, Vec::new())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.cols != other.cols {
            return Err(KclError::DimMismatch(format!(
                "cannot stack {} and {} columns",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(FeatureMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Index of the first row whose norm is further than [`NORM_TOLERANCE`] from 1.
    pub fn first_non_unit_row(&self) -> Option<(usize, f64)> {
        self.iter_rows()
            .map(l2_norm)
            .enumerate()
            .find(|(_, n)| (n - 1.0).abs() > NORM_TOLERANCE)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Divides every row by its L2 norm.
pub fn normalize(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut data = Vec::with_capacity(m.data.len());
    for (i, row) in m.iter_rows().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(KclError::NonFinite(i));
        }
        let norm = l2_norm(row);
        if norm < ZERO_ROW_EPS {
            return Err(KclError::ZeroRow(i));
        }
        data.extend(row.iter().map(|v| v / norm));
    }
    Ok(FeatureMatrix {
        rows: m.rows,
        cols: m.cols,
        data,
    })
}

/// Class prompt embeddings `W`, one unit row per class. The rows double as
/// the class anchors when searching for neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(FeatureMatrix);

impl ClassWeights {
    pub fn new(m: FeatureMatrix) -> Result<Self> {
        if m.rows() < 2 {
            return Err(KclError::DimMismatch(format!(
                "need at least 2 classes, got {}",
                m.rows()
            )));
        }
        if let Some((i, n)) = m.first_non_unit_row() {
            return Err(KclError::NotNormalized(i, n));
        }
        Ok(Self(m))
    }

    pub fn classes(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, class: usize) -> &[f64] {
        self.0.row(class)
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.0
    }
}

/// One-hot label matrix, stored as one class index per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    classes: usize,
    labels: Vec<usize>,
}

impl LabelMatrix {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(KclError::LabelOutOfRange {
                row,
                label,
                classes,
            });
        }
        Ok(Self { classes, labels })
    }

    pub fn empty(classes: usize) -> Self {
        Self {
            classes,
            labels: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, row: usize) -> usize {
        self.labels[row]
    }

    /// Dense one-hot entry `(row, class)`.
    pub fn one_hot(&self, row: usize, class: usize) -> f64 {
        if self.labels[row] == class {
            1.0
        } else {
            0.0
        }
    }
}

/// `rows x C` logits produced by one of the similarity kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    classes: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn zeros(rows: usize, classes: usize) -> Self {
        Self {
            rows,
            classes,
            data: vec![0.0; rows * classes],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = FeatureMatrix::from_rows(rows)?;
        Ok(Self {
            rows: m.rows,
            classes: m.cols,
            data: m.data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, row: usize, class: usize) -> f64 {
        self.data[row * self.classes + class]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row-wise argmax, ties to the lowest class index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows).map(|j| argmax(self.row(j))).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Weights of the cache and completion terms. `alpha`/`lambda` scale the
/// few-shot and completion affinities; `beta`/`mu` set their sharpness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 1.0,
            mu: 1.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(KclError::InvalidParam(format!("{name} must be >= 0, got {v}")));
            }
        }
        for v in [self.beta, self.mu] {
            if !(v.is_finite() && v > 0.0) {
                return Err(KclError::NonPositiveBeta(v));
            }
        }
        Ok(())
    }
}

/// Candidate values for validation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrids {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Default for SearchGrids {
    fn default() -> Self {
        Self {
            alpha: vec![0.5, 1.0, 2.0, 5.0],
            beta: vec![1.0, 2.0, 5.5, 10.0],
            lambda: vec![0.5, 1.0, 2.0, 5.0],
            mu: vec![1.0, 2.0, 5.5, 10.0],
        }
    }
}

/// Partition of the test indices into samples absorbed with a pseudo-label
/// and samples still waiting to be classified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionState {
    absorbed: Vec<(usize, usize)>,
    remaining: Vec<usize>,
    step: usize,
}

impl CompletionState {
    pub fn new(n: usize) -> Self {
        Self {
            absorbed: Vec::new(),
            remaining: (0..n).collect(),
            step: 0,
        }
    }

    /// `(test_index, pseudo_class)` in absorption order.
    pub fn absorbed(&self) -> &[(usize, usize)] {
        &self.absorbed
    }

    /// Remaining test indices, ascending.
    pub fn remaining(&self) -> &[usize] {
        &self.remaining
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total(&self) -> usize {
        self.absorbed.len() + self.remaining.len()
    }

    /// Moves `picks` (already ordered) from the remaining set into the
    /// absorbed list. Fails without modifying the state if any index is not
    /// currently remaining.
    pub(crate) fn absorb_picks(&mut self, picks: &[(usize, usize)]) -> Result<()> {
        let mut taken = vec![false; self.total()];
        for &j in &self.remaining {
            taken[j] = true;
        }
        for &(j, _) in picks {
            if j >= taken.len() || !taken[j] {
                return Err(KclError::IndexNotRemaining(j));
            }
            taken[j] = false;
        }
        self.remaining.retain(|&j| taken[j]);
        self.absorbed.extend_from_slice(picks);
        self.step += 1;
        Ok(())
    }

    /// Checks disjointness and that absorbed ∪ remaining covers `0..n`.
    pub fn is_consistent(&self, n: usize) -> bool {
        if self.total() != n {
            return false;
        }
        let mut seen = vec![false; n];
        for j in self.absorbed.iter().map(|&(j, _)| j).chain(self.remaining.iter().copied()) {
            if j >= n || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }
}

/// Validated inputs of a run: test features, class weights, and the optional
/// few-shot cache. Immutable once built.
#[derive(Debug, Clone)]
pub struct RunBundle {
    test: FeatureMatrix,
    weights: ClassWeights,
    cache: Option<(FeatureMatrix, LabelMatrix)>,
}

impl RunBundle {
    pub fn test(&self) -> &FeatureMatrix {
        &self.test
    }

    pub fn weights(&self) -> &ClassWeights {
        &self.weights
    }

    pub fn cache(&self) -> Option<(&FeatureMatrix, &LabelMatrix)> {
        self.cache.as_ref().map(|(f, l)| (f, l))
    }

    pub fn classes(&self) -> usize {
        self.weights.classes()
    }
}

/// Checks that all inputs of a run agree on dimensions.
pub fn validate_run(
    test: FeatureMatrix,
    weights: ClassWeights,
    cache: Option<FeatureMatrix>,
    cache_labels: Option<LabelMatrix>,
) -> Result<RunBundle> {
    if test.rows() == 0 {
        return Err(KclError::EmptyTestSet);
    }
    let d = weights.dim();
    if test.cols() != d {
        return Err(KclError::DimMismatch(format!(
            "test features have {} columns, class weights {d}",
            test.cols()
        )));
    }
    let cache = match (cache, cache_labels) {
        (None, None) => None,
        (Some(_), None) => return Err(KclError::MissingLabels),
        (None, Some(_)) => {
            return Err(KclError::DimMismatch("cache labels given without cache features".into()))
        }
        (Some(f), Some(l)) => {
            check_labeled(&f, &l, &weights, "cache")?;
            Some((f, l))
        }
    };
    Ok(RunBundle {
        test,
        weights,
        cache,
    })
}

pub(crate) fn check_labeled(
    f: &FeatureMatrix,
    l: &LabelMatrix,
    weights: &ClassWeights,
    what: &str,
) -> Result<()> {
    if f.cols() != weights.dim() {
        return Err(KclError::DimMismatch(format!(
            "{what} features have {} columns, class weights {}",
            f.cols(),
            weights.dim()
        )));
    }
    if l.rows() != f.rows() {
        return Err(KclError::DimMismatch(format!(
            "{what} has {} feature rows but {} labels",
            f.rows(),
            l.rows()
        )));
    }
    if l.classes() != weights.classes() {
        return Err(KclError::DimMismatch(format!(
            "{what} labels span {} classes, class weights {}",
            l.classes(),
            weights.classes()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_three_four_five() {
        let m = FeatureMatrix::from_rows(&[[3.0, 4.0]]).unwrap();
        let n = normalize(&m).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-15);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_axis_vectors() {
        let m = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let n = normalize(&m).unwrap();
        assert_eq!(n.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(normalize(&m), Err(KclError::ZeroRow(1))));
    }

    #[test]
    fn constructors_reject_non_finite() {
        assert!(matches!(
            FeatureMatrix::from_rows(&[[1.0, 0.0], [f64::NAN, 1.0]]),
            Err(KclError::NonFinite(1))
        ));
        assert!(matches!(
            FeatureMatrix::from_rows(&[[f64::INFINITY, 0.0]]),
            Err(KclError::NonFinite(0))
        ));
        assert!(SimilarityMatrix::from_rows(&[[f64::NAN]]).is_err());
    }

    #[test]
    fn class_weights_need_two_unit_rows() {
        let one = FeatureMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(ClassWeights::new(one).is_err());
        let unnormalized = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        assert!(matches!(
            ClassWeights::new(unnormalized),
            Err(KclError::NotNormalized(1, _))
        ));
    }

    #[test]
    fn label_matrix_range_checked() {
        assert!(LabelMatrix::new(vec![0, 1, 2], 3).is_ok());
        assert!(matches!(
            LabelMatrix::new(vec![0, 3], 3),
            Err(KclError::LabelOutOfRange { row: 1, label: 3, .. })
        ));
        let l = LabelMatrix::new(vec![1, 0], 2).unwrap();
        assert_eq!(l.one_hot(0, 1), 1.0);
        assert_eq!(l.one_hot(0, 0), 0.0);
    }

    #[test]
    fn validate_zero_shot_ok() {
        let f = normalize(&FeatureMatrix::new(4, 8, (1..=32).map(f64::from).collect()).unwrap())
            .unwrap();
        let mut w = vec![0.0; 24];
        for c in 0..3 {
            w[c * 8 + c] = 1.0;
        }
        let w = ClassWeights::new(FeatureMatrix::new(3, 8, w).unwrap()).unwrap();
        let bundle = validate_run(f, w, None, None).unwrap();
        assert!(bundle.cache().is_none());
        assert_eq!(bundle.classes(), 3);
    }

    #[test]
    fn validate_rejects_mismatches() {
        let f = FeatureMatrix::new(4, 8, vec![0.5; 32]).unwrap();
        let w7 = {
            let mut w = vec![0.0; 21];
            for c in 0..3 {
                w[c * 7 + c] = 1.0;
            }
            ClassWeights::new(FeatureMatrix::new(3, 7, w).unwrap()).unwrap()
        };
        assert!(matches!(
            validate_run(f.clone(), w7, None, None),
            Err(KclError::DimMismatch(_))
        ));

        let w8 = {
            let mut w = vec![0.0; 24];
            for c in 0..3 {
                w[c * 8 + c] = 1.0;
            }
            ClassWeights::new(FeatureMatrix::new(3, 8, w).unwrap()).unwrap()
        };
        let cache = FeatureMatrix::new(6, 8, vec![0.5; 48]).unwrap();
        let labels = LabelMatrix::new(vec![0, 1, 2, 0, 1], 3).unwrap();
        assert!(matches!(
            validate_run(f.clone(), w8.clone(), Some(cache.clone()), Some(labels)),
            Err(KclError::DimMismatch(_))
        ));
        assert!(matches!(
            validate_run(f.clone(), w8.clone(), Some(cache), None),
            Err(KclError::MissingLabels)
        ));
        let empty = FeatureMatrix::empty(8).unwrap();
        assert!(matches!(
            validate_run(empty, w8, None, None),
            Err(KclError::EmptyTestSet)
        ));
    }

    #[test]
    fn absorb_rejects_foreign_index_without_mutating() {
        let mut s = CompletionState::new(3);
        s.absorb_picks(&[(1, 0)]).unwrap();
        let before = s.clone();
        assert!(matches!(
            s.absorb_picks(&[(2, 0), (1, 1)]),
            Err(KclError::IndexNotRemaining(1))
        ));
        assert_eq!(s, before);
        assert!(s.is_consistent(3));
    }

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = HyperParams {
            beta: 0.0,
            ..HyperParams::default()
        };
        assert!(matches!(bad.validate(), Err(KclError::NonPositiveBeta(_))));
        let neg = HyperParams {
            lambda: -1.0,
            ..HyperParams::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.8, 0.6]), 0);
        assert_eq!(argmax(&[0.6, 0.8]), 1);
        assert_eq!(argmax(&[0.7, 0.7]), 0);
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(
            rows in 1usize..8,
            cols in 1usize..8,
            seed in proptest::collection::vec(-10.0f64..10.0, 64),
        ) {
            let data: Vec<f64> = (0..rows * cols).map(|i| seed[i % 64] + 0.01 * i as f64 + 0.1).collect();
            let m = FeatureMatrix::new(rows, cols, data).unwrap();
            prop_assume!(m.iter_rows().all(|r| l2_norm(r) > 1e-3));
            let once = normalize(&m).unwrap();
            let twice = normalize(&once).unwrap();
            prop_assert!(once.first_non_unit_row().is_none());
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
        }
    }
}
