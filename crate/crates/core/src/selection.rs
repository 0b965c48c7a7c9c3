//! Confidence selection: which remaining samples are trusted enough to be
//! absorbed into the completion set with a pseudo-label.
//!
//! All functions here work in the row space of the similarity matrix, which
//! scores the remaining samples in ascending test-index order. Breaking ties
//! by lower row therefore also breaks them by lower test index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KclError, Result};
use crate::types::{argmax, CompletionState, FeatureMatrix, LabelMatrix, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    /// Sample in the class's top-`k1` and the class is the sample's argmax.
    Mutual,
    /// Only the class-side condition: each class takes its top-`k1` samples.
    ImageToClass,
    /// Only the sample-side condition: every sample goes to its argmax class.
    ClassToImage,
}

impl RuleKind {
    pub const ALL: [RuleKind; 3] = [RuleKind::Mutual, RuleKind::ImageToClass, RuleKind::ClassToImage];

    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::Mutual => "mutual",
            RuleKind::ImageToClass => "image-to-class",
            RuleKind::ClassToImage => "class-to-image",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleKind {
    type Err = KclError;

    fn from_str(s: &str) -> Result<Self> {
        RuleKind::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| KclError::InvalidParam(format!("unknown selection rule {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRule {
    kind: RuleKind,
    k1: usize,
}

impl SelectionRule {
    pub fn new(kind: RuleKind, k1: usize) -> Result<Self> {
        if k1 == 0 {
            return Err(KclError::InvalidParam("k1 must be >= 1".into()));
        }
        Ok(Self { kind, k1 })
    }

    pub fn mutual(k1: usize) -> Result<Self> {
        Self::new(RuleKind::Mutual, k1)
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn k1(&self) -> usize {
        self.k1
    }
}

/// Picked `(index, class)` pairs sorted by class, then index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionResult {
    pub picks: Vec<(usize, usize)>,
    pub per_class_counts: Vec<usize>,
}

impl SelectionResult {
    pub fn from_picks(mut picks: Vec<(usize, usize)>, classes: usize) -> Self {
        picks.sort_by_key(|&(j, c)| (c, j));
        let mut per_class_counts = vec![0; classes];
        for &(_, c) in &picks {
            per_class_counts[c] += 1;
        }
        Self {
            picks,
            per_class_counts,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    /// Maps row indices to test indices through `ids` (the remaining list).
    pub fn remap(&self, ids: &[usize]) -> SelectionResult {
        let picks = self.picks.iter().map(|&(r, c)| (ids[r], c)).collect();
        SelectionResult::from_picks(picks, self.per_class_counts.len())
    }
}

fn by_score_desc(a: &SimilarityMatrix, class: usize) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&x, &y| a.get(y, class).partial_cmp(&a.get(x, class)).unwrap_or(Ordering::Equal).then(x.cmp(&y))
}

/// The `k1` rows scoring highest for `class`, best first, ties to the lower row.
pub fn rank_class_neighbors(a: &SimilarityMatrix, class: usize, k1: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..a.rows()).collect();
    let cmp = by_score_desc(a, class);
    if k1 < rows.len() {
        rows.select_nth_unstable_by(k1, &cmp);
        rows.truncate(k1);
    }
    rows.sort_unstable_by(&cmp);
    rows
}

/// The class with the highest logit in row `row`, ties to the lower class.
pub fn argmax_class(a: &SimilarityMatrix, row: usize) -> usize {
    argmax(a.row(row))
}

pub fn select(a: &SimilarityMatrix, rule: SelectionRule) -> SelectionResult {
    let classes = a.classes();
    let picks = match rule.kind {
        RuleKind::Mutual => (0..classes)
            .flat_map(|c| {
                rank_class_neighbors(a, c, rule.k1)
                    .into_iter()
                    .filter(move |&j| argmax_class(a, j) == c)
                    .map(move |j| (j, c))
            })
            .collect(),
        RuleKind::ImageToClass => {
            // a row claimed by several classes goes to the one where it ranks
            // best, then to the one it scores highest, then to the lower class
            let mut claim: Vec<Option<(usize, usize)>> = vec![None; a.rows()];
            for c in 0..classes {
                for (rank, j) in rank_class_neighbors(a, c, rule.k1).into_iter().enumerate() {
                    let better = claim[j].is_none_or(|(best_rank, best_c)| {
                        rank < best_rank || (rank == best_rank && a.get(j, c) > a.get(j, best_c))
                    });
                    if better {
                        claim[j] = Some((rank, c));
                    }
                }
            }
            claim
                .into_iter()
                .enumerate()
                .filter_map(|(j, cl)| cl.map(|(_, c)| (j, c)))
                .collect()
        }
        RuleKind::ClassToImage => (0..a.rows()).map(|j| (j, argmax_class(a, j))).collect(),
    };
    SelectionResult::from_picks(picks, classes)
}

/// Moves the picked test indices into the absorbed set and rebuilds the
/// completion set `D` and its labels in absorption order.
pub fn absorb(
    state: &CompletionState,
    result: &SelectionResult,
    f: &FeatureMatrix,
    classes: usize,
) -> Result<(CompletionState, FeatureMatrix, LabelMatrix)> {
    let mut next = state.clone();
    if !result.is_empty() {
        next.absorb_picks(&result.picks)?;
    }
    let (d, ld) = completion_set(&next, f, classes)?;
    Ok((next, d, ld))
}

pub fn completion_set(
    state: &CompletionState,
    f: &FeatureMatrix,
    classes: usize,
) -> Result<(FeatureMatrix, LabelMatrix)> {
    let (idx, labels): (Vec<usize>, Vec<usize>) = state.absorbed().iter().copied().unzip();
    Ok((f.select_rows(&idx), LabelMatrix::new(labels, classes)?))
}
