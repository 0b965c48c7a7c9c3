//! The iterative completion loop.
//!
//! Each step selects confident samples from the current logits, absorbs them
//! into the completion set with their pseudo-labels, and re-scores the samples
//! that remain. Absorbed samples keep their pseudo-label; the rest are
//! classified by the last re-estimated logits.

use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KclError, Result};
use crate::kernels::{masked_logits, ModalityMask};
use crate::selection::{completion_set, rank_class_neighbors, select, SelectionResult, SelectionRule};
use crate::types::{
    check_labeled, CompletionState, FeatureMatrix, HyperParams, LabelMatrix, RunBundle, SearchGrids,
    SimilarityMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HpMode {
    Fixed,
    ValidationSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub rule: SelectionRule,
    pub hp: HyperParams,
    pub hp_mode: HpMode,
    pub grids: SearchGrids,
    pub modality: ModalityMask,
    pub max_steps: usize,
    /// Cap on absorbed samples per class.
    pub budget: Option<usize>,
}

impl RunConfig {
    /// Fixed hyperparameters (all 1), both modalities, no budget.
    pub fn new(mode: Mode, rule: SelectionRule, max_steps: usize) -> Self {
        Self {
            mode,
            rule,
            hp: HyperParams::default(),
            hp_mode: HpMode::Fixed,
            grids: SearchGrids::default(),
            modality: ModalityMask::BOTH,
            max_steps,
            budget: None,
        }
    }
}

/// Labeled held-out split used for hyperparameter search. Never absorbed.
#[derive(Debug, Clone)]
pub struct ValidationSplit {
    pub features: FeatureMatrix,
    pub labels: LabelMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub picked_count: usize,
    pub completion_size: usize,
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    RemainingExhausted,
    ZeroPicks,
    StepLimit,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub predictions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub per_step: Vec<StepRecord>,
    pub converged_at: usize,
    pub wall_time: f64,
    pub stop_reason: StopReason,
}

/// Fraction of positions where `predictions` equals `truth`.
pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(KclError::LengthMismatch(predictions.len(), truth.len()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Logits of `queries` under the configured mode and modality.
fn score(
    bundle: &RunBundle,
    mode: Mode,
    queries: &FeatureMatrix,
    completion: Option<(&FeatureMatrix, &LabelMatrix)>,
    hp: &HyperParams,
    mask: ModalityMask,
) -> Result<SimilarityMatrix> {
    let cache = match mode {
        Mode::FewShot => bundle.cache(),
        Mode::ZeroShot => None,
    };
    let has_visual = cache.is_some() || completion.is_some_and(|(d, _)| !d.is_empty());
    // zero-shot has no visual knowledge before the first absorption
    let mask = if has_visual { mask } else { ModalityMask::TEXT_ONLY };
    masked_logits(queries, bundle.weights(), cache, completion, hp, mask)
}

fn validation_accuracy(
    bundle: &RunBundle,
    mode: Mode,
    val: &ValidationSplit,
    completion: Option<(&FeatureMatrix, &LabelMatrix)>,
    hp: &HyperParams,
    mask: ModalityMask,
) -> Result<f64> {
    let logits = score(bundle, mode, &val.features, completion, hp, mask)?;
    accuracy(&logits.argmax_rows(), val.labels.labels())
}

fn sorted_grid(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(KclError::EmptyGrid);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Evaluates every `(first, second)` pair in first-major ascending order and
/// returns the earliest pair with the best score.
fn grid_argmax<F>(first: &[f64], second: &[f64], eval: F) -> Result<(f64, f64)>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    let first = sorted_grid(first)?;
    let second = sorted_grid(second)?;
    let points: Vec<(f64, f64)> = first
        .iter()
        .flat_map(|&a| second.iter().map(move |&b| (a, b)))
        .collect();
    let scores: Vec<f64> = points
        .par_iter()
        .map(|&(a, b)| eval(a, b))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(points[best])
}

/// Picks the few-shot cache weight and sharpness by validation accuracy of
/// the cache-model logits.
pub fn search_alpha_beta(
    bundle: &RunBundle,
    val: &ValidationSplit,
    grids: &SearchGrids,
    mask: ModalityMask,
) -> Result<(f64, f64)> {
    if bundle.cache().is_none() {
        return Err(KclError::MissingCache);
    }
    grid_argmax(&grids.alpha, &grids.beta, |alpha, beta| {
        let hp = HyperParams {
            alpha,
            beta,
            ..HyperParams::default()
        };
        validation_accuracy(bundle, Mode::FewShot, val, None, &hp, mask)
    })
}

/// Picks the completion weight and sharpness by validation accuracy of the
/// re-estimated logits given the current completion set. An empty completion
/// set has nothing to tune and yields `(1.0, 1.0)`.
#[allow(clippy::too_many_arguments)]
pub fn search_lambda_mu(
    bundle: &RunBundle,
    mode: Mode,
    completion: &FeatureMatrix,
    completion_labels: &LabelMatrix,
    val: &ValidationSplit,
    grids: &SearchGrids,
    base: &HyperParams,
    mask: ModalityMask,
) -> Result<(f64, f64)> {
    if grids.lambda.is_empty() || grids.mu.is_empty() {
        return Err(KclError::EmptyGrid);
    }
    if completion.is_empty() {
        return Ok((1.0, 1.0));
    }
    grid_argmax(&grids.lambda, &grids.mu, |lambda, mu| {
        let hp = HyperParams { lambda, mu, ..*base };
        validation_accuracy(
            bundle,
            mode,
            val,
            Some((completion, completion_labels)),
            &hp,
            mask,
        )
    })
}

/// A run in progress. [`run`] drives one to completion; stepping manually
/// exposes the completion state between iterations.
#[derive(Debug)]
pub struct Session<'a> {
    bundle: &'a RunBundle,
    config: RunConfig,
    val: Option<&'a ValidationSplit>,
    search: bool,
    hp: HyperParams,
    state: CompletionState,
    logits: SimilarityMatrix,
    class_counts: Vec<usize>,
    per_step: Vec<StepRecord>,
    stop: Option<StopReason>,
    started: Instant,
}

impl<'a> Session<'a> {
    pub fn new(bundle: &'a RunBundle, config: &RunConfig, val: Option<&'a ValidationSplit>) -> Result<Self> {
        let started = Instant::now();
        if config.max_steps == 0 {
            return Err(KclError::InvalidParam("max_steps must be >= 1".into()));
        }
        if config.mode == Mode::FewShot && bundle.cache().is_none() {
            return Err(KclError::MissingCache);
        }
        if config.budget == Some(0) {
            return Err(KclError::InvalidParam("budget must be >= 1".into()));
        }
        config.hp.validate()?;
        if let Some(v) = val {
            check_labeled(&v.features, &v.labels, bundle.weights(), "validation")?;
            if v.features.is_empty() {
                return Err(KclError::MissingValidation);
            }
        }

        let search = match (config.hp_mode, val, config.mode) {
            (HpMode::Fixed, _, _) => false,
            (HpMode::ValidationSearch, Some(_), _) => true,
            (HpMode::ValidationSearch, None, Mode::FewShot) => return Err(KclError::MissingValidation),
            (HpMode::ValidationSearch, None, Mode::ZeroShot) => {
                warn!("no validation split supplied; zero-shot run falls back to fixed hyperparameters");
                false
            }
        };

        let mut hp = config.hp;
        if let (true, Some(v)) = (search, val) {
            if config.mode == Mode::FewShot {
                let (alpha, beta) = search_alpha_beta(bundle, v, &config.grids, config.modality)?;
                info!("validation search fixed alpha={alpha} beta={beta}");
                hp.alpha = alpha;
                hp.beta = beta;
            }
            if config.grids.lambda.is_empty() || config.grids.mu.is_empty() {
                return Err(KclError::EmptyGrid);
            }
        }

        let logits = score(bundle, config.mode, bundle.test(), None, &hp, config.modality)?;
        Ok(Self {
            bundle,
            config: config.clone(),
            val,
            search,
            hp,
            state: CompletionState::new(bundle.test().rows()),
            logits,
            class_counts: vec![0; bundle.classes()],
            per_step: Vec::new(),
            stop: None,
            started,
        })
    }

    pub fn state(&self) -> &CompletionState {
        &self.state
    }

    /// Logits of the remaining samples, rows in ascending test-index order.
    pub fn logits(&self) -> &SimilarityMatrix {
        &self.logits
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn per_step(&self) -> &[StepRecord] {
        &self.per_step
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn completion_set(&self) -> Result<(FeatureMatrix, LabelMatrix)> {
        completion_set(&self.state, self.bundle.test(), self.bundle.classes())
    }

    fn budget_saturated(&self) -> bool {
        self.config
            .budget
            .is_some_and(|b| self.class_counts.iter().all(|&n| n >= b))
    }

    /// Drops picks beyond each class's remaining budget, keeping the rows
    /// that score highest for that class.
    fn apply_budget(&self, sel: SelectionResult) -> SelectionResult {
        let Some(budget) = self.config.budget else {
            return sel;
        };
        let classes = self.bundle.classes();
        let mut kept = Vec::with_capacity(sel.len());
        for c in 0..classes {
            let room = budget.saturating_sub(self.class_counts[c]);
            if sel.per_class_counts[c] <= room {
                kept.extend(sel.picks.iter().filter(|p| p.1 == c));
                continue;
            }
            let ranked = rank_class_neighbors(&self.logits, c, self.logits.rows());
            let mine: Vec<usize> = sel.picks.iter().filter(|p| p.1 == c).map(|p| p.0).collect();
            kept.extend(
                ranked
                    .into_iter()
                    .filter(|j| mine.contains(j))
                    .take(room)
                    .map(|j| (j, c)),
            );
        }
        SelectionResult::from_picks(kept, classes)
    }

    /// Runs one select/absorb/re-estimate iteration. Returns `false` once the
    /// loop has stopped.
    pub fn step(&mut self) -> Result<bool> {
        if self.stop.is_some() {
            return Ok(false);
        }
        if self.state.remaining().is_empty() {
            self.stop = Some(StopReason::RemainingExhausted);
            return Ok(false);
        }
        if self.per_step.len() >= self.config.max_steps {
            self.stop = Some(StopReason::StepLimit);
            return Ok(false);
        }

        let sel = self.apply_budget(select(&self.logits, self.config.rule));
        if sel.is_empty() {
            debug!("step {}: no confident samples", self.per_step.len() + 1);
            self.stop = Some(StopReason::ZeroPicks);
            return Ok(false);
        }
        let picks = sel.remap(self.state.remaining());
        self.state.absorb_picks(&picks.picks)?;
        for (n, p) in self.class_counts.iter_mut().zip(&picks.per_class_counts) {
            *n += p;
        }

        let (d, ld) = self.completion_set()?;
        if let (true, Some(val)) = (self.search, self.val) {
            let (lambda, mu) = search_lambda_mu(
                self.bundle,
                self.config.mode,
                &d,
                &ld,
                val,
                &self.config.grids,
                &self.hp,
                self.config.modality,
            )?;
            self.hp.lambda = lambda;
            self.hp.mu = mu;
        }
        let rest = self.bundle.test().select_rows(self.state.remaining());
        self.logits = score(
            self.bundle,
            self.config.mode,
            &rest,
            Some((&d, &ld)),
            &self.hp,
            self.config.modality,
        )?;

        let record = StepRecord {
            step: self.per_step.len() + 1,
            picked_count: picks.len(),
            completion_size: d.rows(),
            lambda: self.hp.lambda,
            mu: self.hp.mu,
        };
        debug!(
            "step {}: picked {}, |D| = {}, remaining {}",
            record.step,
            record.picked_count,
            record.completion_size,
            rest.rows()
        );
        self.per_step.push(record);

        if self.budget_saturated() {
            self.stop = Some(StopReason::BudgetExhausted);
        } else if self.state.remaining().is_empty() {
            self.stop = Some(StopReason::RemainingExhausted);
        } else if self.per_step.len() >= self.config.max_steps {
            self.stop = Some(StopReason::StepLimit);
        }
        Ok(true)
    }

    /// Absorbed samples keep their pseudo-labels; remaining samples take the
    /// argmax of the last re-estimated logits.
    pub fn predictions(&self) -> Vec<usize> {
        let mut pred = vec![0; self.state.total()];
        for &(j, c) in self.state.absorbed() {
            pred[j] = c;
        }
        for (&j, c) in self.state.remaining().iter().zip(self.logits.argmax_rows()) {
            pred[j] = c;
        }
        pred
    }

    pub fn finish(mut self, truth: Option<&[usize]>) -> Result<RunReport> {
        while self.step()? {}
        let predictions = self.predictions();
        let accuracy = truth.map(|t| accuracy(&predictions, t)).transpose()?;
        Ok(RunReport {
            predictions,
            accuracy,
            converged_at: self.per_step.len(),
            per_step: self.per_step,
            wall_time: self.started.elapsed().as_secs_f64(),
            stop_reason: self.stop.unwrap_or(StopReason::StepLimit),
        })
    }
}

pub fn run(
    bundle: &RunBundle,
    config: &RunConfig,
    val: Option<&ValidationSplit>,
    truth: Option<&[usize]>,
) -> Result<RunReport> {
    let report = Session::new(bundle, config, val)?.finish(truth)?;
    info!(
        "run finished after {} steps ({:?}) in {:.3}s",
        report.converged_at, report.stop_reason, report.wall_time
    );
    Ok(report)
}
