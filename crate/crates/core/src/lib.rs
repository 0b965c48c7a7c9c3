//! Transductive few-shot and zero-shot classification over precomputed
//! embeddings by iterative knowledge completion.
//!
//! Test samples that are mutual nearest neighbours of a class (the class is
//! among the sample's top-1 and the sample among the class's top-`k1`) are
//! absorbed with a pseudo-label into a completion set, which then acts as an
//! extra cache when the remaining samples are re-scored. The loop repeats
//! until no sample remains, no sample is selected, or a step or per-class
//! budget runs out.

pub mod engine;
pub mod error;
pub mod io;
pub mod kernels;
pub mod oracle;
pub mod selection;
pub mod synth;
pub mod types;

pub use engine::{
    accuracy, run, search_alpha_beta, search_lambda_mu, HpMode, Mode, RunConfig, RunReport, Session,
    StepRecord, StopReason, ValidationSplit,
};
pub use error::{KclError, Result};
pub use kernels::{
    cache_affinity, clip_logits, kcl_fs_logits, kcl_zs_logits, masked_logits, tip_logits, ModalityMask,
};
pub use selection::{
    absorb, argmax_class, rank_class_neighbors, select, RuleKind, SelectionResult, SelectionRule,
};
pub use synth::{centroid_error, gen_synth, SynthData, SynthSpec};
pub use types::{
    normalize, validate_run, ClassWeights, CompletionState, FeatureMatrix, HyperParams, LabelMatrix,
    RunBundle, SearchGrids, SimilarityMatrix,
};
