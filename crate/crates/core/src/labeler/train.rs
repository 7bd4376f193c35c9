use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crf;
use super::model::{nll_and_gradient, LabelerModel};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam};
use crate::subword::SubwordSequence;
use crate::types::FieldLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LabelerModel,
    pub log: Vec<EpochLog>,
    /// 1-based epoch of the retained checkpoint; 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Word-level accuracy of Viterbi predictions against the encoded labels.
pub fn token_accuracy(model: &LabelerModel, data: &[SubwordSequence]) -> Result<f64> {
    let tr = model.transitions();
    let (mut correct, mut total) = (0usize, 0usize);
    for seq in data {
        let em = model.score_table(seq)?;
        let (path, _) = crf::viterbi(&em, &tr);
        for (y, gold) in path.iter().zip(seq.word_labels()) {
            correct += usize::from(*y == gold.index());
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}

/// Mean NLL over a dataset, without gradients.
pub fn mean_nll(model: &LabelerModel, data: &[SubwordSequence]) -> Result<f64> {
    let tr = model.transitions();
    let mut total = 0.0;
    for seq in data {
        let em = model.score_table(seq)?;
        let gold: Vec<usize> = seq.word_labels().iter().map(|l| l.index()).collect();
        total += crf::forward_backward(&em, &tr).log_partition - crf::path_score(&em, &tr, &gold);
    }
    Ok(total / data.len().max(1) as f64)
}

/// Mini-batch Adam on the CRF negative log-likelihood. After every epoch the
/// model is scored on `validation`; the checkpoint with the highest token
/// accuracy is returned (the last one when `validation` is empty).
pub fn train(
    model: LabelerModel,
    data: &[SubwordSequence],
    validation: &[SubwordSequence],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Invalid(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    let golds: Vec<Vec<FieldLabel>> = data.iter().map(SubwordSequence::word_labels).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut model = model;
    let mut best: Option<(f64, usize, LabelerModel)> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&SubwordSequence, &[FieldLabel])> = chunk
                .iter()
                .map(|&i| (&data[i], golds[i].as_slice()))
                .collect();
            let (loss, mut grad) = nll_and_gradient(&model, &batch).map_err(|e| match e {
                Error::NonFinite { .. } => Error::DivergedEpoch { epoch },
                other => other,
            })?;
            if let Some(max) = config.clip_norm {
                clip_grad_norm(&mut grad, max);
            }
            adam.step(&mut model, &grad);
            epoch_loss += loss * chunk.len() as f64;
        }
        epoch_loss /= data.len() as f64;
        if !epoch_loss.is_finite() || !crate::nn::Params::all_finite(&model) {
            return Err(Error::DivergedEpoch { epoch });
        }
        let val_accuracy = if validation.is_empty() {
            None
        } else {
            Some(token_accuracy(&model, validation)?)
        };
        log::debug!("epoch {epoch}: loss {epoch_loss:.4} val acc {val_accuracy:?}");
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss,
            val_accuracy,
        });
        let score = val_accuracy.unwrap_or(epoch as f64);
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, 0),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}
