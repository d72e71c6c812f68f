//! Mini-batch training loop with dev-based early stopping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{handoff_loss_node, satisfaction_loss_node};
use crate::config::TrainConfig;
use crate::corpus::{build_vocab, load_embeddings, Dialogue};
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::metrics::{evaluate_model, MetricsReport, Sections};
use crate::model::{EncodedDialogue, Model};
use crate::numerics::{Graph, Gradients, ParamStore};

/// A dialogue prepared for the loss: token ids, roles and label indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub encoded: EncodedDialogue,
    pub handoff: Vec<usize>,
    pub satisfaction: usize,
}

impl Example {
    /// Sentiment labels are never read here.
    pub fn new(model: &Model, d: &Dialogue) -> Example {
        Example {
            encoded: model.encode(d),
            handoff: d.utterances.iter().map(|u| u.handoff.index()).collect(),
            satisfaction: d.satisfaction.index(),
        }
    }
}

/// Loss parts and parameter gradients of one dialogue.
#[derive(Clone, Debug)]
pub struct ExampleGrad {
    pub handoff_loss: f64,
    pub satisfaction_loss: f64,
    pub grads: Gradients,
}

/// Forward and backward pass of `L1 + η·L2` for one dialogue against `store`.
pub fn example_gradients(
    model: &Model,
    store: &ParamStore,
    ex: &Example,
    eta: f64,
    dropout: Option<&mut Dropout>,
) -> Result<ExampleGrad> {
    let mut g = Graph::new(store);
    let nodes = model.forward(&mut g, &ex.encoded, dropout)?;
    let l1 = handoff_loss_node(&mut g, nodes.handoff, &ex.handoff)?;
    let sat = nodes
        .satisfaction
        .as_ref()
        .ok_or_else(|| Error::data("dialogue without a customer utterance cannot be trained on"))?;
    let l2 = satisfaction_loss_node(&mut g, sat.y, ex.satisfaction)?;
    let weighted = g.scale(l2, eta);
    let total = g.add(l1, weighted);
    Ok(ExampleGrad {
        handoff_loss: g.scalar(l1),
        satisfaction_loss: g.scalar(l2),
        grads: g.backward(total),
    })
}

/// Mean joint objective of `batch` (dropout off) and its gradient.
pub fn batch_objective(
    model: &Model,
    store: &ParamStore,
    batch: &[Example],
    eta: f64,
    delta: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let mut grads = Gradients::new(store.len());
    let mut loss = 0.0;
    for ex in batch {
        let e = example_gradients(model, store, ex, eta, None)?;
        loss += e.handoff_loss + eta * e.satisfaction_loss;
        grads.add_assign(&e.grads);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    grads.add_weight_decay(store, delta);
    let reg = if delta == 0.0 { 0.0 } else { delta * store.sum_squares() };
    Ok((loss / n + reg, grads))
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of the full objective, regularizer included.
    pub train_loss: f64,
    pub train_handoff_loss: f64,
    pub train_satisfaction_loss: f64,
    pub grad_norm: f64,
    pub dev: MetricsReport,
    /// Dev MHCH macro F1 plus dev SSA macro F1.
    pub selection: f64,
    pub best: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
    Diverged,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev selection metric
    /// (the initial model when divergence struck before the first epoch finished).
    pub best: Model,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Diagnostic when `stop` is [`StopReason::Diverged`].
    pub divergence: Option<String>,
}

pub fn selection_metric(report: &MetricsReport) -> f64 {
    report.mhch.as_ref().map_or(0.0, |m| m.macro_f1) + report.ssa.as_ref().map_or(0.0, |s| s.macro_f1)
}

/// Builds the vocabulary from `train` and a freshly initialized model.
pub fn prepare_model(config: &TrainConfig, train: &[Dialogue], embeddings: Option<&Path>) -> Result<Model> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let vocab = build_vocab(train, config.min_freq)?;
    match embeddings {
        Some(path) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xe3b0_c442);
            let table = load_embeddings(path, &vocab, config.model.embed_dim, &mut rng)?;
            log::info!("embeddings cover {:.1}% of the vocabulary", 100.0 * table.coverage);
            Model::with_embeddings(config.model.clone(), vocab, table.matrix, config.seed)
        }
        None => Model::new(config.model.clone(), vocab, config.seed),
    }
}

fn dropout_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Trains from scratch: vocabulary from `train`, random initialization.
pub fn train(train: &[Dialogue], dev: &[Dialogue], config: &TrainConfig) -> Result<TrainOutcome> {
    let model = prepare_model(config, train, None)?;
    train_model(model, train, dev, config, &mut |_| {})
}

/// Runs the optimization loop on `model`, calling `on_epoch` after each dev evaluation.
pub fn train_model(
    mut model: Model,
    train: &[Dialogue],
    dev: &[Dialogue],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::data("training and dev sets must be non-empty"));
    }
    let dev: Vec<Dialogue> = dev.iter().map(Dialogue::without_sentiment).collect();
    let examples: Vec<Example> = train.iter().map(|d| Example::new(&model, &d.without_sentiment())).collect();

    let mut adam = Adam::new(model.store(), config.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_loss, mut sum_l1, mut sum_l2, mut sum_norm) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let run = |&i: &usize| -> Result<ExampleGrad> {
                let mut rng = dropout_rng(config.seed, epoch, i);
                let mut dropout = Dropout {
                    rate: model.config.dropout,
                    rng: &mut rng,
                };
                example_gradients(&model, model.store(), &examples[i], config.eta, Some(&mut dropout))
            };
            let parts: Vec<ExampleGrad> = if config.parallel {
                chunk.par_iter().map(run).collect::<Result<_>>()?
            } else {
                chunk.iter().map(run).collect::<Result<_>>()?
            };
            let n = parts.len() as f64;
            let mut grads = Gradients::new(model.store().len());
            let (mut l1, mut l2) = (0.0, 0.0);
            for p in &parts {
                l1 += p.handoff_loss;
                l2 += p.satisfaction_loss;
                grads.add_assign(&p.grads);
            }
            grads.scale(1.0 / n);
            grads.add_weight_decay(model.store(), config.delta);
            let (l1, l2) = (l1 / n, l2 / n);
            let loss = super::loss::joint_loss(l1, l2, model.store(), config.eta, config.delta);
            if !loss.is_finite() || !grads.is_finite() {
                let msg = format!(
                    "non-finite {} at epoch {epoch}, batch {}",
                    if loss.is_finite() { "gradient" } else { "loss" },
                    batches + 1
                );
                log::error!("{msg}; returning the last finite checkpoint");
                return Ok(TrainOutcome {
                    best,
                    best_epoch,
                    history,
                    stop: StopReason::Diverged,
                    divergence: Some(msg),
                });
            }
            sum_norm += grads.clip_global_norm(config.clip_norm);
            adam.update(&mut model.params.store, &grads);
            sum_loss += loss;
            sum_l1 += l1;
            sum_l2 += l2;
            batches += 1;
        }

        let (dev_report, _) = evaluate_model(&model, &dev, Sections::TRAINING)?;
        let selection = selection_metric(&dev_report);
        let improved = selection > best_score;
        if improved {
            best_score = selection;
            best = model.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        let nb = batches as f64;
        let record = EpochRecord {
            epoch,
            train_loss: sum_loss / nb,
            train_handoff_loss: sum_l1 / nb,
            train_satisfaction_loss: sum_l2 / nb,
            grad_norm: sum_norm / nb,
            dev: dev_report,
            selection,
            best: improved,
        };
        on_epoch(&record);
        history.push(record);
        if since_best >= config.patience {
            return Ok(TrainOutcome {
                best,
                best_epoch,
                history,
                stop: StopReason::EarlyStopped,
                divergence: None,
            });
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        stop: StopReason::MaxEpochs,
        divergence: None,
    })
}

/// Serializes a history as JSON lines.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
