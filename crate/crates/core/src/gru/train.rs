//! Minibatch Adam training with global-norm gradient clipping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_gradients, mean_loss, GruAutoencoderModel, ModelDims};
use super::GruError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Content tokens kept per function before the sentinels are added.
    pub max_len: usize,
    pub gradient_clip_norm: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Parameters start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            max_len: crate::asm::DEFAULT_MAX_LEN,
            gradient_clip_norm: 5.0,
            seed: 0,
            embed_dim: 64,
            hidden_dim: 64,
            init_range: 0.08,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), GruError> {
        let positive = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && self.max_len > 0
            && self.gradient_clip_norm > 0.0
            && self.embed_dim > 0
            && self.hidden_dim > 0
            && self.init_range > 0.0;
        if positive {
            Ok(())
        } else {
            Err(GruError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss (training
    /// loss when no validation set is given).
    pub model: GruAutoencoderModel,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: GruAutoencoderModel,
    v: GruAutoencoderModel,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(like: &GruAutoencoderModel) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, params: &mut GruAutoencoderModel, grad: &GruAutoencoderModel, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let eps = self.eps;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Trains an autoencoder on encoded id sequences (each starting with
/// `<start>` and ending with `<end>`).
pub fn train(
    train_set: &[Vec<u32>],
    validation_set: &[Vec<u32>],
    vocab_size: usize,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome, GruError> {
    train_with_observer(train_set, validation_set, vocab_size, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_observer(
    train_set: &[Vec<u32>],
    validation_set: &[Vec<u32>],
    vocab_size: usize,
    cfg: &TrainingConfig,
    mut observe: impl FnMut(&EpochStats),
) -> Result<TrainOutcome, GruError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(GruError::EmptyBatch);
    }
    let dims = ModelDims {
        vocab_size,
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
    };
    let mut init_rng = crate::rng::substream(cfg.seed, "autoencoder-init");
    let mut model = GruAutoencoderModel::uniform(dims, cfg.init_range, &mut init_rng);
    model.seed = cfg.seed;
    let mut shuffle_rng = crate::rng::substream(cfg.seed, "autoencoder-shuffle");
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GruAutoencoderModel)> = None;
    let mut batch: Vec<Vec<u32>> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i].clone()));
            let (loss, mut grad) = loss_and_gradients(&model, &batch)?;
            let norm = grad.squared_norm().sqrt();
            if norm > cfg.gradient_clip_norm {
                grad.scale(cfg.gradient_clip_norm / norm);
            }
            adam.step(&mut model, &grad, cfg.learning_rate);
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let validation_loss = if validation_set.is_empty() {
            None
        } else {
            Some(mean_loss(&model, validation_set)?)
        };
        let stats = EpochStats {
            epoch,
            train_loss,
            validation_loss,
        };
        observe(&stats);
        let score = validation_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.clone()));
        }
        history.push(stats);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(epochs: usize) -> TrainingConfig {
        TrainingConfig {
            learning_rate: 0.02,
            batch_size: 4,
            epochs,
            embed_dim: 8,
            hidden_dim: 16,
            seed: 3,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn memorizes_a_single_sequence() {
        let seq = vec![vec![1, 4, 5, 6, 7, 5, 2]];
        let out = train(&seq, &[], 8, &tiny_cfg(300)).unwrap();
        let last = out
            .history
            .iter()
            .map(|e| e.train_loss)
            .fold(f64::INFINITY, f64::min);
        assert!(last < 0.05, "loss {last}");
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let seqs = vec![vec![1, 4, 5, 2], vec![1, 6, 7, 7, 2], vec![1, 5, 2]];
        let a = train(&seqs, &seqs[..1], 8, &tiny_cfg(5)).unwrap();
        let b = train(&seqs, &seqs[..1], 8, &tiny_cfg(5)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn rejects_invalid_config() {
        let cfg = TrainingConfig {
            batch_size: 0,
            ..TrainingConfig::default()
        };
        assert!(matches!(
            train(&[vec![1, 2]], &[], 4, &cfg),
            Err(GruError::InvalidConfig(_))
        ));
    }
}
