//! Reference implementations used to cross-check the engine in tests.
//!
//! Nothing here shares code with [`crate::selection`] or [`crate::kernels`]:
//! neighbourhood membership is decided by counting how many competitors beat
//! a candidate, and logits are evaluated entry by entry from the raw rows.

use crate::selection::{RuleKind, SelectionResult, SelectionRule};
use crate::types::{HyperParams, RunBundle, SimilarityMatrix, K2};

/// Number of rows that beat `row` in column `class` (higher score, or equal
/// score at a lower row).
fn rows_ahead(a: &SimilarityMatrix, row: usize, class: usize) -> usize {
    let v = a.get(row, class);
    (0..a.rows())
        .filter(|&r| a.get(r, class) > v || (a.get(r, class) == v && r < row))
        .count()
}

/// Number of classes that beat `class` in row `row`.
fn classes_ahead(a: &SimilarityMatrix, row: usize, class: usize) -> usize {
    let v = a.get(row, class);
    (0..a.classes())
        .filter(|&c| a.get(row, c) > v || (a.get(row, c) == v && c < class))
        .count()
}

/// Direct evaluation of the set definitions behind [`crate::selection::select`].
pub fn oracle_select(a: &SimilarityMatrix, rule: SelectionRule) -> SelectionResult {
    let k1 = rule.k1();
    let mut picks = Vec::new();
    for j in 0..a.rows() {
        match rule.kind() {
            RuleKind::Mutual => {
                for i in 0..a.classes() {
                    if rows_ahead(a, j, i) < k1 && classes_ahead(a, j, i) < K2 {
                        picks.push((j, i));
                    }
                }
            }
            RuleKind::ImageToClass => {
                // claims compared by rank, then score, then class index
                let claims: Vec<usize> = (0..a.classes()).filter(|&i| rows_ahead(a, j, i) < k1).collect();
                let wins = |i: usize| {
                    claims.iter().all(|&o| {
                        let (ri, ro) = (rows_ahead(a, j, i), rows_ahead(a, j, o));
                        o == i
                            || ri < ro
                            || (ri == ro && a.get(j, i) > a.get(j, o))
                            || (ri == ro && a.get(j, i) == a.get(j, o) && i < o)
                    })
                };
                if let Some(&i) = claims.iter().find(|&&i| wins(i)) {
                    picks.push((j, i));
                }
            }
            RuleKind::ClassToImage => {
                for i in 0..a.classes() {
                    if classes_ahead(a, j, i) < K2 {
                        picks.push((j, i));
                    }
                }
            }
        }
    }
    SelectionResult::from_picks(picks, a.classes())
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `sum_m exp(-sharp * (1 - <q, key_m>)) * onehot(label_m, class)`.
fn cache_sum(q: &[f64], keys: &[(&[f64], usize)], class: usize, sharp: f64) -> f64 {
    let mut s = 0.0;
    for &(key, label) in keys {
        let onehot = if label == class { 1.0 } else { 0.0 };
        s += (-sharp * (1.0 - inner(q, key))).exp() * onehot;
    }
    s
}

/// Brute-force transcription of the whole loop with fixed hyperparameters,
/// both modalities and no budget. Returns the final predictions.
pub fn brute_force_predictions(
    bundle: &RunBundle,
    few_shot: bool,
    hp: &HyperParams,
    rule: SelectionRule,
    max_steps: usize,
) -> Vec<usize> {
    let f = bundle.test();
    let w = bundle.weights();
    let n = f.rows();
    let c_n = w.classes();
    let cache: Vec<(&[f64], usize)> = match (few_shot, bundle.cache()) {
        (true, Some((keys, labels))) => keys.iter_rows().zip(labels.labels().iter().copied()).collect(),
        _ => Vec::new(),
    };

    let logits = |remaining: &[usize], d: &[(usize, usize)]| -> SimilarityMatrix {
        let d_keys: Vec<(&[f64], usize)> = d.iter().map(|&(j, c)| (f.row(j), c)).collect();
        let rows: Vec<Vec<f64>> = remaining
            .iter()
            .map(|&j| {
                let q = f.row(j);
                (0..c_n)
                    .map(|i| {
                        let d_term = if d_keys.is_empty() {
                            0.0
                        } else {
                            hp.lambda * cache_sum(q, &d_keys, i, hp.mu)
                        };
                        let f_term = if cache.is_empty() {
                            0.0
                        } else {
                            hp.alpha * cache_sum(q, &cache, i, hp.beta)
                        };
                        d_term + f_term + inner(q, w.row(i))
                    })
                    .collect()
            })
            .collect();
        if rows.is_empty() {
            SimilarityMatrix::zeros(0, c_n)
        } else {
            SimilarityMatrix::from_rows(&rows).expect("finite logits")
        }
    };

    let mut remaining: Vec<usize> = (0..n).collect();
    let mut d: Vec<(usize, usize)> = Vec::new();
    let mut a = logits(&remaining, &d);
    for _ in 0..max_steps {
        if remaining.is_empty() {
            break;
        }
        let sel = oracle_select(&a, rule);
        if sel.picks.is_empty() {
            break;
        }
        let mut picked: Vec<(usize, usize)> = sel.picks.iter().map(|&(r, c)| (remaining[r], c)).collect();
        picked.sort_by_key(|&(j, c)| (c, j));
        remaining.retain(|j| !picked.iter().any(|p| p.0 == *j));
        d.extend(picked);
        a = logits(&remaining, &d);
    }

    let mut pred = vec![usize::MAX; n];
    for &(j, c) in &d {
        pred[j] = c;
    }
    for (r, &j) in remaining.iter().enumerate() {
        pred[j] = (0..c_n).find(|&i| classes_ahead(&a, r, i) == 0).unwrap();
    }
    pred
}
