//! Finite-difference check of the full joint objective on a tiny model.

use crate::config::ModelConfig;
use crate::corpus::{build_vocab, synthesize_corpus, SynthSpec};
use crate::error::Result;
use crate::model::Model;
use crate::numerics::{grad_check, GradCheckOptions, GradCheckReport};

use super::trainer::{batch_objective, Example};

/// Width used for `k`, `d` and `z` in the check.
pub const CHECK_WIDTH: usize = 8;
/// Longest dialogue in the check batch.
pub const CHECK_MAX_LEN: usize = 6;

/// Shrinks `base` to check size: `k = d = z = 8`, `L ≤ 6`, dropout off.
/// Interaction, aggregation and activation choices are kept.
pub fn check_config(base: &ModelConfig) -> ModelConfig {
    ModelConfig {
        embed_dim: CHECK_WIDTH,
        hidden: CHECK_WIDTH,
        dense: CHECK_WIDTH,
        attention_units: CHECK_WIDTH,
        heads: if CHECK_WIDTH % base.heads == 0 { base.heads } else { 4 },
        ff_width: 0,
        max_dialogue_len: CHECK_MAX_LEN,
        dropout: 0.0,
        ..base.clone()
    }
}

/// Gradient check of `L1 + η·L2 + δ‖Θ‖²` over a batch of two synthetic dialogues.
pub fn full_model_grad_check(
    base: &ModelConfig,
    eta: f64,
    delta: f64,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let spec = SynthSpec {
        dialogues: 2,
        vocab_size: 6,
        min_len: 4,
        max_len: CHECK_MAX_LEN,
        min_tokens: 1,
        max_tokens: 3,
        complaint_rate: 0.5,
        ..SynthSpec::default()
    };
    let (corpus, _) = synthesize_corpus(&spec, seed)?;
    let model = Model::new(check_config(base), build_vocab(&corpus, 1)?, seed)?;
    let batch: Vec<Example> = corpus.iter().map(|d| Example::new(&model, d)).collect();
    let mut store = model.params.store.clone();
    grad_check(&mut store, |s| batch_objective(&model, s, &batch, eta, delta), opts)
}
