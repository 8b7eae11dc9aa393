//! Unsupervised training of a detector bank.
//!
//! The objective is `L = L_l + lambda * L_u`: the locality term rewards each
//! detector for concentrating its softmax mass inside one 3x3 neighborhood,
//! and the unicity term penalizes any cell whose summed activation over all
//! detectors exceeds one. Optimization is minibatch RMSprop over the frozen
//! feature maps.

mod objective;
mod rmsprop;

use std::borrow::Borrow;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use objective::{
    attention_coverage, gradient, locality_loss, total_loss, unicity_loss, GradientBuffer,
    LossBreakdown,
};
pub use rmsprop::{RmsProp, RmsPropConfig};

use crate::detector::DetectorBank;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the unicity term.
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub rmsprop_smoothing: f64,
    pub rmsprop_epsilon: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            epochs: 30,
            learning_rate: 5e-4,
            weight_decay: 1e-5,
            batch_size: 16,
            rmsprop_smoothing: 0.99,
            rmsprop_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a nonnegative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.rmsprop_smoothing > 0.0 && self.rmsprop_smoothing < 1.0) {
            return bad("rmsprop smoothing must lie in (0, 1)");
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return bad("rmsprop epsilon must be positive");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            smoothing: self.rmsprop_smoothing,
            epsilon: self.rmsprop_epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

/// Sample-weighted average losses over one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub locality: f64,
    pub unicity: f64,
    pub total: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Attention coverage of the final bank on the training set.
    pub final_coverage: f64,
}

pub fn train<T, F>(
    bank: DetectorBank<T>,
    dataset: &[F],
    config: &TrainConfig,
) -> Result<(DetectorBank<T>, TrainReport)>
where
    T: Scalar,
    F: Borrow<FeatureMap<T>> + Sync,
{
    train_with(bank, dataset, config, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with<T, F>(
    mut bank: DetectorBank<T>,
    dataset: &[F],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(DetectorBank<T>, TrainReport)>
where
    T: Scalar,
    F: Borrow<FeatureMap<T>> + Sync,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for f in dataset {
        bank.check_depth(f.borrow())?;
    }

    let lambda = T::lit(config.lambda);
    let mut optimizer = RmsProp::new(bank.weights().len(), config.optimizer());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut locality, mut unicity, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&FeatureMap<T>> = chunk.iter().map(|&i| dataset[i].borrow()).collect();
            let (loss, grad) = gradient(&bank, &batch, lambda)?;
            if grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("gradient"));
            }
            optimizer.step(&mut bank, &grad)?;
            let weight = chunk.len() as f64;
            locality += weight * loss.locality.as_f64();
            unicity += weight * loss.unicity.as_f64();
            total += weight * loss.total.as_f64();
        }
        let n = dataset.len() as f64;
        let stats = EpochStats {
            epoch,
            locality: locality / n,
            unicity: unicity / n,
            total: total / n,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: locality {:.5} unicity {:.5} total {:.5}",
            stats.locality,
            stats.unicity,
            stats.total
        );
        on_epoch(&stats);
        history.push(stats);
    }

    let final_coverage = attention_coverage(&bank, dataset)?.as_f64();
    Ok((
        bank,
        TrainReport {
            epochs: history,
            final_coverage,
        },
    ))
}
