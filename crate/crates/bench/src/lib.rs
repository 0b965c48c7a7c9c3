//! Fixtures shared by the benchmarks.

use kcl_core::{gen_synth, SynthData, SynthSpec};

/// Synthetic set with `n` test samples spread over `classes` classes.
pub fn fixture(n: usize, classes: usize, dim: usize) -> SynthData {
    gen_synth(&SynthSpec {
        classes,
        dim,
        samples_per_class: n / classes,
        shots: 4,
        seed: 11,
        ..SynthSpec::default()
    })
    .expect("valid fixture spec")
}
