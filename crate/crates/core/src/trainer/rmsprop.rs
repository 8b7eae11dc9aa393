use serde::{Deserialize, Serialize};

use crate::detector::DetectorBank;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::GradientBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    /// Smoothing constant of the squared-gradient average.
    pub smoothing: f64,
    pub epsilon: f64,
    /// L2 penalty added to the gradient before the update.
    pub weight_decay: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            smoothing: 0.99,
            epsilon: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Running mean of squared gradients for one parameter tensor.
///
/// `v <- rho v + (1 - rho) g^2`, `w <- w - lr g / (sqrt(v) + eps)`, where
/// `g` already includes the weight decay term.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    config: RmsPropConfig,
    square_avg: Vec<T>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(len: usize, config: RmsPropConfig) -> Self {
        Self {
            config,
            square_avg: vec![T::zero(); len],
        }
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.config
    }

    pub fn square_avg(&self) -> &[T] {
        &self.square_avg
    }

    pub fn apply(&mut self, weights: &mut [T], grad: &[T]) -> Result<()> {
        if weights.len() != self.square_avg.len() || grad.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer state",
                expected: self.square_avg.len(),
                found: grad.len().min(weights.len()),
            });
        }
        let lr = T::lit(self.config.learning_rate);
        let rho = T::lit(self.config.smoothing);
        let eps = T::lit(self.config.epsilon);
        let decay = T::lit(self.config.weight_decay);
        for ((w, &g), v) in weights.iter_mut().zip(grad).zip(&mut self.square_avg) {
            let g = g + decay * *w;
            *v = rho * *v + (T::one() - rho) * g * g;
            *w -= lr * g / (v.sqrt() + eps);
        }
        Ok(())
    }

    /// One optimizer step on a detector bank.
    pub fn step(&mut self, bank: &mut DetectorBank<T>, grad: &GradientBuffer<T>) -> Result<()> {
        if grad.parts() != bank.parts() || grad.depth() != bank.depth() {
            return Err(Error::DimensionMismatch {
                context: "gradient vs bank",
                expected: bank.weights().len(),
                found: grad.data().len(),
            });
        }
        self.apply(bank.weights_mut(), grad.data())
    }
}
