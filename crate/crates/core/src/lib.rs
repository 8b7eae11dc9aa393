//! Unsupervised part detectors over frozen convolutional feature maps.
//!
//! A [`DetectorBank`] holds `p` 1x1 convolution kernels. Each kernel produces
//! a spatial softmax over the feature grid; training pushes every detector to
//! concentrate on a single location per image (locality) while keeping
//! different detectors from overlapping (unicity). After training, the
//! distribution of each detector's maximum score is fitted on held-out data
//! to turn raw scores into visibility confidences, and frozen detectors can
//! pool part vectors for a per-part classifier.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix the common choices.

pub mod calibrate;
pub mod classifier;
pub mod detector;
pub mod error;
pub mod io;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use calibrate::{Calibration, CalibrationParams, PartConfidence, ScoreDistribution};
pub use classifier::{ClassifierHead, HeadConfig, PartClassifier, Prediction};
pub use detector::{DetectorBank, ForwardResult};
pub use error::{Error, ErrorKind, FormatError, Result};
pub use scalar::Scalar;
pub use tensor::{ActivationMap, FeatureMap, Map2, ScoreMap};
pub use trainer::{train, train_with, LossBreakdown, TrainConfig, TrainReport};

pub type FeatureMapF32 = FeatureMap<f32>;
pub type FeatureMapF64 = FeatureMap<f64>;
pub type DetectorBankF32 = DetectorBank<f32>;
pub type DetectorBankF64 = DetectorBank<f64>;
pub type PartClassifierF32 = PartClassifier<f32>;
pub type PartClassifierF64 = PartClassifier<f64>;
