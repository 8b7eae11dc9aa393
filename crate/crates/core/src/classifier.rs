//! Part-based classifier on top of a frozen detector bank.
//!
//! Each detector's activation map weights the feature map into one part
//! vector; every part vector goes through its own multilayer head, and the
//! head logits are summed into the final prediction. Because the sum is
//! exact, any decision can be traced back to the per-part logits.

use std::borrow::Borrow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorBank;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ActivationMap, FeatureMap};
use crate::trainer::{RmsProp, RmsPropConfig};

/// `v_i[d] = sum_{h,w} P_i[h][w] * F[h][w][d]` for every detector map.
pub fn extract_part_vectors<T: Scalar>(
    features: &FeatureMap<T>,
    activation_maps: &[ActivationMap<T>],
) -> Result<Vec<Vec<T>>> {
    activation_maps
        .iter()
        .map(|map| {
            if map.height() != features.height() || map.width() != features.width() {
                return Err(Error::DimensionMismatch {
                    context: "activation map cells vs feature cells",
                    expected: features.cells(),
                    found: map.data().len(),
                });
            }
            let mut v = vec![T::zero(); features.depth()];
            for (c, &weight) in map.data().iter().enumerate() {
                for (acc, &f) in v.iter_mut().zip(features.cell(c)) {
                    *acc += weight * f;
                }
            }
            Ok(v)
        })
        .collect()
}

/// Fully connected layer, `y = W x + b` with `W` stored row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::DimensionMismatch {
                context: "dense layer parameters",
                expected: inputs * outputs + outputs,
                found: weights.len() + bias.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    fn he_normal(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive std");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| T::lit(normal.sample(rng)))
                .collect(),
            bias: vec![T::zero(); outputs],
        }
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    fn backward(&self, x: &[T], dy: &[T], grad: &mut DenseGrad<T>, need_dx: bool) -> Vec<T> {
        let mut dx = if need_dx {
            vec![T::zero(); self.inputs]
        } else {
            Vec::new()
        };
        for (o, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias[o] += g;
            let row = o * self.inputs;
            for (gw, &xi) in grad.weights[row..row + self.inputs].iter_mut().zip(x) {
                *gw += g * xi;
            }
            if need_dx {
                for (d, &w) in dx.iter_mut().zip(&self.weights[row..row + self.inputs]) {
                    *d += g * w;
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct DenseGrad<T> {
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> DenseGrad<T> {
    fn zeros(layer: &Dense<T>) -> Self {
        Self {
            weights: vec![T::zero(); layer.weights.len()],
            bias: vec![T::zero(); layer.bias.len()],
        }
    }
}

/// `D -> h1 -> h2 -> classes`, ReLU and dropout after each hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub layers: [Dense<T>; 3],
    pub dropout_rate: f64,
}

/// Intermediate values of one training-mode forward pass.
#[derive(Debug, Clone)]
struct HeadTrace<T> {
    input: Vec<T>,
    /// Post-ReLU, post-dropout activations of the two hidden layers.
    hidden: [Vec<T>; 2],
    /// Dropout multiplier per hidden unit: 0 where dropped or ReLU-inactive.
    gates: [Vec<T>; 2],
    logits: Vec<T>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new(layers: [Dense<T>; 3], dropout_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    context: "head layer chaining",
                    expected: pair[0].outputs,
                    found: pair[1].inputs,
                });
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    pub fn init(
        depth: usize,
        hidden: [usize; 2],
        classes: usize,
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::new(
            [
                Dense::he_normal(depth, hidden[0], rng),
                Dense::he_normal(hidden[0], hidden[1], rng),
                Dense::he_normal(hidden[1], classes, rng),
            ],
            dropout_rate,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_classes(&self) -> usize {
        self.layers[2].outputs
    }

    pub fn layer_sizes(&self) -> [usize; 4] {
        [
            self.layers[0].inputs,
            self.layers[0].outputs,
            self.layers[1].outputs,
            self.layers[2].outputs,
        ]
    }

    /// Inference-mode logits (dropout disabled).
    pub fn forward(&self, v: &[T]) -> Result<Vec<T>> {
        self.check_input(v)?;
        let relu = |x: Vec<T>| x.into_iter().map(|a| a.max(T::zero())).collect::<Vec<_>>();
        let h1 = relu(self.layers[0].forward(v));
        let h2 = relu(self.layers[1].forward(&h1));
        Ok(self.layers[2].forward(&h2))
    }

    /// Forward pass in training mode, with inverted dropout drawn from `rng`.
    pub fn forward_train(&self, v: &[T], rng: &mut impl Rng) -> Result<Vec<T>> {
        let masks = self.draw_masks(rng);
        Ok(self.trace(v, &masks)?.logits)
    }

    /// Dropout keep-multipliers for both hidden layers.
    fn draw_masks(&self, rng: &mut impl Rng) -> [Vec<T>; 2] {
        let keep = 1.0 - self.dropout_rate;
        let scale = T::lit(1.0 / keep);
        let draw = |n: usize, rng: &mut dyn rand::RngCore| -> Vec<T> {
            if self.dropout_rate == 0.0 {
                return vec![T::one(); n];
            }
            (0..n)
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                })
                .collect()
        };
        [
            draw(self.layers[0].outputs, rng),
            draw(self.layers[1].outputs, rng),
        ]
    }

    fn check_input(&self, v: &[T]) -> Result<()> {
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "part vector length vs head input",
                expected: self.input_dim(),
                found: v.len(),
            });
        }
        Ok(())
    }

    fn trace(&self, v: &[T], masks: &[Vec<T>; 2]) -> Result<HeadTrace<T>> {
        self.check_input(v)?;
        let mut input = v.to_vec();
        let mut hidden: [Vec<T>; 2] = Default::default();
        let mut gates: [Vec<T>; 2] = Default::default();
        for l in 0..2 {
            let pre = self.layers[l].forward(&input);
            let gate: Vec<T> = pre
                .iter()
                .zip(&masks[l])
                .map(|(&z, &m)| if z > T::zero() { m } else { T::zero() })
                .collect();
            let out: Vec<T> = pre.iter().zip(&gate).map(|(&z, &g)| z * g).collect();
            gates[l] = gate;
            hidden[l] = out.clone();
            input = out;
        }
        let logits = self.layers[2].forward(&hidden[1]);
        Ok(HeadTrace {
            input: v.to_vec(),
            hidden,
            gates,
            logits,
        })
    }

    fn backward(&self, trace: &HeadTrace<T>, dlogits: &[T], grads: &mut [DenseGrad<T>; 3]) {
        let mut dh = self.layers[2].backward(&trace.hidden[1], dlogits, &mut grads[2], true);
        for l in (0..2).rev() {
            for (d, &g) in dh.iter_mut().zip(&trace.gates[l]) {
                *d *= g;
            }
            let x = if l == 0 {
                &trace.input
            } else {
                &trace.hidden[0]
            };
            dh = self.layers[l].backward(x, &dh, &mut grads[l], l > 0);
        }
    }
}

/// Frozen detector bank plus one head per detector.
#[derive(Debug, Clone, PartialEq)]
pub struct PartClassifier<T> {
    pub bank: DetectorBank<T>,
    pub heads: Vec<ClassifierHead<T>>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub class: usize,
    pub logits: Vec<T>,
    pub part_logits: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub hidden: [usize; 2],
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: [4096, 4096],
            dropout_rate: 0.5,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "hidden widths and batch size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig("dropout rate must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive and weight decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> PartClassifier<T> {
    pub fn new(bank: DetectorBank<T>, heads: Vec<ClassifierHead<T>>, num_classes: usize) -> Result<Self> {
        if heads.len() != bank.parts() {
            return Err(Error::DimensionMismatch {
                context: "heads vs detectors",
                expected: bank.parts(),
                found: heads.len(),
            });
        }
        for head in &heads {
            if head.num_classes() != num_classes {
                return Err(Error::DimensionMismatch {
                    context: "head classes",
                    expected: num_classes,
                    found: head.num_classes(),
                });
            }
            if head.input_dim() != bank.depth() {
                return Err(Error::DimensionMismatch {
                    context: "head input vs detector depth",
                    expected: bank.depth(),
                    found: head.input_dim(),
                });
            }
        }
        Ok(Self {
            bank,
            heads,
            num_classes,
        })
    }

    /// Fresh heads with He-normal weights for the given bank.
    pub fn init(bank: DetectorBank<T>, num_classes: usize, config: &HeadConfig) -> Result<Self> {
        config.validate()?;
        if num_classes == 0 {
            return Err(Error::InvalidConfig("need at least one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let heads = (0..bank.parts())
            .map(|_| {
                ClassifierHead::init(
                    bank.depth(),
                    config.hidden,
                    num_classes,
                    config.dropout_rate,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        Self::new(bank, heads, num_classes)
    }

    pub fn part_vectors(&self, features: &FeatureMap<T>) -> Result<Vec<Vec<T>>> {
        let fr = self.bank.forward(features)?;
        extract_part_vectors(features, &fr.activation_maps)
    }

    pub fn predict(&self, features: &FeatureMap<T>) -> Result<Prediction<T>> {
        self.predict_parts(&self.part_vectors(features)?)
    }

    fn predict_parts(&self, parts: &[Vec<T>]) -> Result<Prediction<T>> {
        let part_logits = self
            .heads
            .iter()
            .zip(parts)
            .map(|(head, v)| head.forward(v))
            .collect::<Result<Vec<_>>>()?;
        let logits = sum_logits(&part_logits, self.num_classes);
        Ok(Prediction {
            class: argmax(&logits),
            logits,
            part_logits,
        })
    }
}

/// Elementwise sum in head order.
pub fn sum_logits<T: Scalar>(part_logits: &[Vec<T>], classes: usize) -> Vec<T> {
    let mut out = vec![T::zero(); classes];
    for logits in part_logits {
        for (o, &l) in out.iter_mut().zip(logits) {
            *o += l;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    /// Mean cross-entropy of the dropout-mode forward passes.
    pub loss: f64,
    /// Inference-mode accuracy on the training set after the epoch.
    pub accuracy: f64,
}

/// Softmax cross-entropy; returns the loss and `d loss / d logits`.
fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (f64, Vec<T>) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = (total.ln() - (logits[label] - max)).as_f64();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(c, &e)| e / total - if c == label { T::one() } else { T::zero() })
        .collect();
    (loss, grad)
}

/// Trains all heads jointly on the cross-entropy of the summed logits.
/// The detector bank is never modified.
pub fn train_classifier<T, F>(
    mut model: PartClassifier<T>,
    dataset: &[(F, usize)],
    config: &HeadConfig,
) -> Result<(PartClassifier<T>, Vec<ClassifierEpoch>)>
where
    T: Scalar,
    F: Borrow<FeatureMap<T>> + Sync,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("labeled dataset"));
    }
    if let Some(&(_, label)) = dataset.iter().find(|(_, l)| *l >= model.num_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: model.num_classes,
        });
    }

    // The bank is frozen, so part vectors are computed once.
    let parts = dataset
        .par_iter()
        .map(|(f, _)| model.part_vectors(f.borrow()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = dataset.iter().map(|(_, l)| *l).collect();

    let opt_cfg = RmsPropConfig {
        learning_rate: config.learning_rate,
        smoothing: 0.99,
        epsilon: 1e-8,
        weight_decay: config.weight_decay,
    };
    let mut optimizers: Vec<[RmsProp<T>; 6]> = model
        .heads
        .iter()
        .map(|h| {
            std::array::from_fn(|k| {
                let layer = &h.layers[k / 2];
                let len = if k % 2 == 0 {
                    layer.weights.len()
                } else {
                    layer.bias.len()
                };
                RmsProp::new(len, opt_cfg)
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_c1a5);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let num_heads = model.heads.len();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            // Masks are drawn sequentially so the trajectory is thread-count independent.
            let masks: Vec<Vec<[Vec<T>; 2]>> = (0..num_heads)
                .map(|h| {
                    chunk
                        .iter()
                        .map(|_| model.heads[h].draw_masks(&mut rng))
                        .collect()
                })
                .collect();
            let traces = model
                .heads
                .par_iter()
                .enumerate()
                .map(|(h, head)| {
                    chunk
                        .iter()
                        .zip(&masks[h])
                        .map(|(&i, m)| head.trace(&parts[i][h], m))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;

            let scale = T::one() / T::from_usize_lossy(chunk.len());
            let dlogits: Vec<Vec<T>> = chunk
                .iter()
                .enumerate()
                .map(|(s, &i)| {
                    let per_head: Vec<Vec<T>> =
                        traces.iter().map(|t| t[s].logits.clone()).collect();
                    let (loss, grad) =
                        cross_entropy(&sum_logits(&per_head, model.num_classes), labels[i]);
                    epoch_loss += loss;
                    grad.into_iter().map(|g| g * scale).collect()
                })
                .collect();

            model
                .heads
                .par_iter_mut()
                .zip(optimizers.par_iter_mut())
                .zip(traces.par_iter())
                .try_for_each(|((head, opts), head_traces)| -> Result<()> {
                    let mut grads: [DenseGrad<T>; 3] =
                        std::array::from_fn(|l| DenseGrad::zeros(&head.layers[l]));
                    for (trace, dl) in head_traces.iter().zip(&dlogits) {
                        head.backward(trace, dl, &mut grads);
                    }
                    for (l, g) in grads.iter().enumerate() {
                        opts[2 * l].apply(&mut head.layers[l].weights, &g.weights)?;
                        opts[2 * l + 1].apply(&mut head.layers[l].bias, &g.bias)?;
                    }
                    Ok(())
                })?;
        }

        let correct = parts
            .par_iter()
            .zip(labels.par_iter())
            .map(|(p, &label)| model.predict_parts(p).map(|pred| usize::from(pred.class == label)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum::<usize>();
        let stats = ClassifierEpoch {
            epoch,
            loss: epoch_loss / dataset.len() as f64,
            accuracy: correct as f64 / dataset.len() as f64,
        };
        log::debug!(
            "classifier epoch {epoch}: loss {:.4} train acc {:.4}",
            stats.loss,
            stats.accuracy
        );
        history.push(stats);
    }
    Ok((model, history))
}

/// Fraction of `dataset` classified correctly.
pub fn accuracy<T, F>(model: &PartClassifier<T>, dataset: &[(F, usize)]) -> Result<f64>
where
    T: Scalar,
    F: Borrow<FeatureMap<T>> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::Empty("labeled dataset"));
    }
    let correct = dataset
        .par_iter()
        .map(|(f, label)| model.predict(f.borrow()).map(|p| usize::from(p.class == *label)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / dataset.len() as f64)
}
