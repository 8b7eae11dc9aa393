//! Gaussian model of each detector's maximum correlation score, and the
//! confidence (visibility) measure derived from it.

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::detector::DetectorBank;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

/// Variance floor for detectors whose maximum score never changes.
pub const MIN_VARIANCE: f64 = 1e-12;

pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub mu: f64,
    pub sigma2: f64,
    pub count: usize,
}

/// Per-detector `N(mu_i, sigma_i^2)` fitted to raw maximum scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub version: u32,
    pub p: usize,
    pub entries: Vec<ScoreDistribution>,
}

/// Output of [`fit`]: the parameters plus the detectors whose variance was clamped.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub params: CalibrationParams,
    pub degenerate: Vec<usize>,
}

impl CalibrationParams {
    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != self.p {
            return Err(Error::DimensionMismatch {
                context: "calibration entries",
                expected: self.p,
                found: self.entries.len(),
            });
        }
        for e in &self.entries {
            if !(e.sigma2 > 0.0) || !e.sigma2.is_finite() {
                return Err(Error::NonPositiveVariance(e.sigma2));
            }
            if !e.mu.is_finite() {
                return Err(Error::NonFinite("calibration mean"));
            }
            if e.count < 2 {
                return Err(Error::NotEnoughSamples {
                    required: 2,
                    found: e.count,
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        if params.version != CALIBRATION_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported calibration version {}",
                params.version
            )));
        }
        params.validate()?;
        Ok(params)
    }
}

/// Streaming (Welford) mean and unbiased variance.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        self.m2 / (self.count - 1) as f64
    }
}

/// Fits the score distribution of every detector over `dataset`.
pub fn fit<T, F>(bank: &DetectorBank<T>, dataset: &[F]) -> Result<Calibration>
where
    T: Scalar,
    F: Borrow<FeatureMap<T>> + Sync,
{
    if dataset.len() < 2 {
        return Err(Error::NotEnoughSamples {
            required: 2,
            found: dataset.len(),
        });
    }
    let scores = dataset
        .par_iter()
        .map(|f| max_scores(bank, f.borrow()))
        .collect::<Result<Vec<_>>>()?;

    let mut moments = vec![Moments::default(); bank.parts()];
    for image in &scores {
        for (m, &s) in moments.iter_mut().zip(image) {
            m.push(s);
        }
    }

    let mut degenerate = Vec::new();
    let entries = moments
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut sigma2 = m.variance();
            if !(sigma2 >= MIN_VARIANCE) {
                log::warn!("detector {i} has near-constant maximum score; variance clamped to {MIN_VARIANCE:e}");
                degenerate.push(i);
                sigma2 = MIN_VARIANCE;
            }
            ScoreDistribution {
                mu: m.mean,
                sigma2,
                count: m.count,
            }
        })
        .collect();

    Ok(Calibration {
        params: CalibrationParams {
            version: CALIBRATION_VERSION,
            p: bank.parts(),
            entries,
        },
        degenerate,
    })
}

/// Raw (pre-softmax) maximum correlation score of every detector.
pub fn max_scores<T: Scalar>(bank: &DetectorBank<T>, features: &FeatureMap<T>) -> Result<Vec<f64>> {
    Ok(bank
        .scores(features)?
        .iter()
        .map(|s| s.max().as_f64())
        .collect())
}

/// CDF of `N(mu, sigma2)` at `z`.
pub fn normal_cdf(z: f64, mu: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::NonPositiveVariance(sigma2));
    }
    Ok(0.5 * erfc(-(z - mu) / (2.0 * sigma2).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartConfidence {
    pub score: f64,
    pub confidence: f64,
    pub location: (usize, usize),
}

/// Confidence of every detector on one image, with the location of its maximum.
pub fn confidence<T: Scalar>(
    params: &CalibrationParams,
    bank: &DetectorBank<T>,
    features: &FeatureMap<T>,
) -> Result<Vec<PartConfidence>> {
    if params.p != bank.parts() || params.entries.len() != bank.parts() {
        return Err(Error::DimensionMismatch {
            context: "calibration vs detector count",
            expected: bank.parts(),
            found: params.entries.len(),
        });
    }
    let fr = bank.forward(features)?;
    params
        .entries
        .iter()
        .zip(fr.max_scores.iter().zip(&fr.max_locations))
        .map(|(e, (&score, &location))| {
            let score = score.as_f64();
            Ok(PartConfidence {
                score,
                confidence: normal_cdf(score, e.mu, e.sigma2)?,
                location,
            })
        })
        .collect()
}
