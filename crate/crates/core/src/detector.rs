//! The learnable set of part detectors and their per-image forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    argmax2d, conv1x1, spatial_softmax, uniform_filter_3x3, ActivationMap, FeatureMap, Map2,
    ScoreMap,
};

/// `p` kernels of length `D`, stored row-major as a `p x D` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorBank<T> {
    parts: usize,
    depth: usize,
    kernels: Vec<T>,
}

impl<T: Scalar> DetectorBank<T> {
    pub fn new(parts: usize, depth: usize, kernels: Vec<T>) -> Result<Self> {
        if parts == 0 || depth == 0 {
            return Err(Error::InvalidConfig(format!(
                "detector bank needs p >= 1 and D >= 1, got p={parts}, D={depth}"
            )));
        }
        if kernels.len() != parts * depth {
            return Err(Error::DimensionMismatch {
                context: "detector bank weights",
                expected: parts * depth,
                found: kernels.len(),
            });
        }
        if kernels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("detector kernels"));
        }
        Ok(Self {
            parts,
            depth,
            kernels,
        })
    }

    /// Kernels drawn i.i.d. from `N(0, 1/D)` with a seeded generator.
    pub fn init(parts: usize, depth: usize, seed: u64) -> Result<Self> {
        if parts == 0 || depth == 0 {
            return Err(Error::InvalidConfig(format!(
                "detector bank needs p >= 1 and D >= 1, got p={parts}, D={depth}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (depth as f64).sqrt()).expect("positive std");
        let kernels = (0..parts * depth)
            .map(|_| T::lit(normal.sample(&mut rng)))
            .collect();
        Self::new(parts, depth, kernels)
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn kernel(&self, i: usize) -> &[T] {
        &self.kernels[i * self.depth..(i + 1) * self.depth]
    }

    pub fn weights(&self) -> &[T] {
        &self.kernels
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [T] {
        &mut self.kernels
    }

    pub fn cast<U: Scalar>(&self) -> DetectorBank<U> {
        DetectorBank {
            parts: self.parts,
            depth: self.depth,
            kernels: self.kernels.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn check_depth(&self, features: &FeatureMap<T>) -> Result<()> {
        if features.depth() != self.depth {
            return Err(Error::DimensionMismatch {
                context: "feature depth vs detector depth",
                expected: self.depth,
                found: features.depth(),
            });
        }
        Ok(())
    }

    /// Raw score maps only; cheaper than [`forward`](Self::forward) when
    /// the softmax quantities are not needed.
    pub fn scores(&self, features: &FeatureMap<T>) -> Result<Vec<ScoreMap<T>>> {
        self.check_depth(features)?;
        (0..self.parts)
            .map(|i| conv1x1(features, self.kernel(i)))
            .collect()
    }

    pub fn forward(&self, features: &FeatureMap<T>) -> Result<ForwardResult<T>> {
        let score_maps = self.scores(features)?;
        let activation_maps: Vec<_> = score_maps.iter().map(spatial_softmax).collect();
        let smoothed_maps = activation_maps.iter().map(uniform_filter_3x3).collect();
        let (max_locations, max_scores) = score_maps
            .iter()
            .map(|s| {
                let (h, w, v) = argmax2d(s);
                ((h, w), v)
            })
            .unzip();
        Ok(ForwardResult {
            score_maps,
            activation_maps,
            smoothed_maps,
            max_scores,
            max_locations,
        })
    }
}

/// Everything the objectives, calibration and classifier need from one image.
#[derive(Debug, Clone)]
pub struct ForwardResult<T> {
    pub score_maps: Vec<ScoreMap<T>>,
    /// `P_i(x)`, each a distribution over the `H x W` cells.
    pub activation_maps: Vec<ActivationMap<T>>,
    /// Activation maps after the 3x3 neighborhood sum.
    pub smoothed_maps: Vec<Map2<T>>,
    /// Maximum raw correlation per detector.
    pub max_scores: Vec<T>,
    pub max_locations: Vec<(usize, usize)>,
}

impl<T: Scalar> ForwardResult<T> {
    pub fn parts(&self) -> usize {
        self.activation_maps.len()
    }

    /// Cellwise sum of all activation maps, `S(K, x)`.
    pub fn summed_activation(&self) -> Map2<T> {
        let first = &self.activation_maps[0];
        let mut out = Map2::filled(first.height(), first.width(), T::zero());
        for map in &self.activation_maps {
            for (o, &v) in out.data_mut().iter_mut().zip(map.data()) {
                *o += v;
            }
        }
        out
    }
}
