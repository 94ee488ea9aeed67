//! Joint training loop: combined loss L = a_i * Li + a_s * Ls, Adam with
//! gradient clipping, per-epoch dev evaluation and best-epoch selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, SlotHeadKind, TrainConfig, TrainMode};
use crate::corpus::{Dataset, EmbeddingMatrix};
use crate::eval::{evaluate, EvalReport};
use crate::gazetteer::GazetteerMatcher;
use crate::heads;
use crate::model::{prepare, Model, Prepared};
use crate::numerics::{sum_of, Adam, AdamParams, Graph, Mode, Var};
use crate::{Result, SluError};

/// Combine normalized intent and slot losses: L = a_i * Li + a_s * Ls.
pub fn joint_loss(intent_loss: f64, slot_loss: f64, cfg: &TrainConfig) -> Result<f64> {
    if intent_loss < 0.0 || slot_loss < 0.0 {
        return Err(SluError::InvalidArgument(format!(
            "joint_loss: losses must be >= 0, got {intent_loss} / {slot_loss}"
        )));
    }
    Ok(cfg.alpha_intent * intent_loss + cfg.alpha_slot * slot_loss)
}

/// One epoch's record in the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub intent_loss: f64,
    pub slot_loss: f64,
    pub dev: EvalReport,
    pub seconds: f64,
}

impl EpochRecord {
    /// Line-oriented machine-readable form consumed by the report command.
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} loss={:.6} intent_loss={:.6} slot_loss={:.6} dev_p={:.4} dev_r={:.4} dev_f1={:.4} dev_acc={:.4} seconds={:.2}",
            self.epoch,
            self.train_loss,
            self.intent_loss,
            self.slot_loss,
            self.dev.slot_precision,
            self.dev.slot_recall,
            self.dev.slot_f1,
            self.dev.intent_accuracy,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
    pub best_epoch: usize,
}

/// Combined loss over one mini-batch. Intent is the batch mean of
/// per-utterance losses; slots are normalized per token across the batch.
pub struct BatchLoss<'g> {
    pub total: Var<'g>,
    pub intent: f64,
    pub slot: f64,
}

pub fn batch_loss<'g>(
    g: &'g Graph,
    model: &Model,
    batch: &[Prepared],
    cfg: &TrainConfig,
    mode: &Mode,
) -> Result<BatchLoss<'g>> {
    if batch.is_empty() {
        return Err(SluError::InvalidArgument("batch_loss: empty batch".into()));
    }
    let eps = model.cfg.heads.label_smoothing;
    let slot_eps = model.cfg.heads.slot_smoothing();
    let crf = model.cfg.heads.slot_head == SlotHeadKind::Crf;
    let mut intent_parts: Vec<Var<'g>> = Vec::new();
    let mut slot_parts: Vec<Var<'g>> = Vec::new();
    let mut total_tokens = 0usize;
    for p in batch {
        match cfg.mode {
            TrainMode::SlotOnly => {
                let reps = model.encode_utterance(g, p, mode)?;
                let sl = heads::slot_logits(
                    g,
                    &model.store,
                    &model.cfg.heads,
                    reps,
                    model.cfg.dropout_keep,
                    mode,
                );
                slot_parts.push(slot_sum(g, model, sl, p, crf, slot_eps)?);
            }
            TrainMode::IntentOnly => {
                let reps = model.encode_utterance(g, p, mode)?;
                let il = heads::intent_logits(
                    g,
                    &model.store,
                    &model.cfg.heads,
                    reps,
                    model.cfg.dropout_keep,
                    mode,
                )?;
                intent_parts.push(heads::intent_loss(il, p.intent_id, eps)?);
            }
            TrainMode::Joint => {
                let (il, sl) = model.forward(g, p, mode)?;
                intent_parts.push(heads::intent_loss(il, p.intent_id, eps)?);
                slot_parts.push(slot_sum(g, model, sl, p, crf, slot_eps)?);
            }
        }
        total_tokens += p.tokens.len();
    }
    let intent_mean = if intent_parts.is_empty() {
        None
    } else {
        Some(sum_of(&intent_parts).scale(1.0 / intent_parts.len() as f64))
    };
    let slot_mean = if slot_parts.is_empty() {
        None
    } else {
        Some(sum_of(&slot_parts).scale(1.0 / total_tokens as f64))
    };
    let intent_v = intent_mean.map_or(0.0, |v| v.item());
    let slot_v = slot_mean.map_or(0.0, |v| v.item());
    let total = match cfg.mode {
        TrainMode::Joint => intent_mean
            .unwrap()
            .scale(cfg.alpha_intent)
            .add(slot_mean.unwrap().scale(cfg.alpha_slot)),
        TrainMode::IntentOnly => intent_mean.unwrap(),
        TrainMode::SlotOnly => slot_mean.unwrap(),
    };
    Ok(BatchLoss { total, intent: intent_v, slot: slot_v })
}

/// Per-utterance slot loss as a sum over tokens (normalized by the caller).
fn slot_sum<'g>(
    g: &'g Graph,
    model: &Model,
    logits: Var<'g>,
    p: &Prepared,
    crf: bool,
    eps: f64,
) -> Result<Var<'g>> {
    if crf {
        let trans = g.param(&model.store, "slot.crf.trans");
        heads::crf_nll(logits, &p.tag_ids, trans)
    } else {
        Ok(heads::slot_softmax_loss(logits, &p.tag_ids, eps)?.scale(p.tokens.len() as f64))
    }
}

/// Dev metric the best epoch is selected on.
fn dev_metric(dev: &EvalReport, mode: TrainMode) -> f64 {
    match mode {
        TrainMode::Joint => dev.slot_f1 + dev.intent_accuracy,
        TrainMode::IntentOnly => dev.intent_accuracy,
        TrainMode::SlotOnly => dev.slot_f1,
    }
}

/// Argmax of the dev metric over epochs; ties resolve to the earliest epoch.
pub fn select_best(history: &TrainHistory, mode: TrainMode) -> Result<usize> {
    if history.epochs.is_empty() {
        return Err(SluError::InvalidArgument("select_best: empty history".into()));
    }
    let mut best = 0;
    for (i, rec) in history.epochs.iter().enumerate() {
        if dev_metric(&rec.dev, mode) > dev_metric(&history.epochs[best].dev, mode) {
            best = i;
        }
    }
    Ok(best)
}

/// Train one seed: mini-batch Adam with clipping, per-epoch dev evaluation,
/// early stop after `patience` non-improving epochs. Returns the model
/// restored to its best-epoch parameters.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    dev_set: &Dataset,
    matcher: Option<&GazetteerMatcher>,
    pretrained: Option<&EmbeddingMatrix>,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let num_gaz = matcher.map_or(0, |m| m.num_types());
    let model =
        Model::new(model_cfg.clone(), train_set.vocabs.clone(), num_gaz, pretrained, seed)?;
    train_model(model, train_cfg, train_set, dev_set, matcher, seed, on_epoch)
}

/// Train an already-constructed (possibly transferred) model.
pub fn train_model(
    mut model: Model,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    dev_set: &Dataset,
    matcher: Option<&GazetteerMatcher>,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    let prepared: Vec<Prepared> = train_set
        .utterances
        .iter()
        .map(|u| prepare(u, &model.vocabs, matcher))
        .collect();
    let mut adam = Adam::new(AdamParams { lr: train_cfg.lr, ..AdamParams::default() });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15));
    let mut history = TrainHistory { seed, epochs: Vec::new() };
    let mut best_params = model.store.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut intent_sum = 0.0;
        let mut slot_sum_v = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<Prepared> = chunk.iter().map(|&i| prepared[i].clone()).collect();
            let dropout_seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add((epoch as u64) << 20)
                .wrapping_add(batch_idx as u64);
            let mode = Mode::train(ChaCha8Rng::seed_from_u64(dropout_seed));
            let g = Graph::new();
            let loss = batch_loss(&g, &model, &batch, train_cfg, &mode)?;
            let loss_v = loss.total.item();
            if !loss_v.is_finite() {
                return Err(SluError::Numeric(format!(
                    "non-finite loss in epoch {epoch}, batch {batch_idx}"
                )));
            }
            g.backward(loss.total)?;
            let mut grads = g.param_grads(&model.store);
            grads.retain(|(name, _)| match train_cfg.mode {
                TrainMode::IntentOnly => !name.starts_with("slot."),
                TrainMode::SlotOnly => !name.starts_with("intent."),
                TrainMode::Joint => true,
            });
            grads.retain(|(name, _)| {
                !train_cfg.freeze.iter().any(|p| name.starts_with(p.as_str()))
            });
            adam.step(&mut model.store, &mut grads, Some(train_cfg.clip_norm))?;
            loss_sum += loss_v;
            intent_sum += loss.intent;
            slot_sum_v += loss.slot;
            batches += 1;
        }
        let dev = evaluate(&model, dev_set, matcher)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            intent_loss: intent_sum / batches as f64,
            slot_loss: slot_sum_v / batches as f64,
            dev,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        let metric = dev_metric(&record.dev, train_cfg.mode);
        history.epochs.push(record);
        if metric > best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_params = model.store.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                break;
            }
        }
    }
    model.store = best_params;
    Ok(TrainOutcome { model, history, best_epoch })
}
