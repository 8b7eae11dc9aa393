//! Numeric primitives over feature maps and 2-D spatial maps.
//!
//! Everything here is a pure function of its inputs. Row-major layout is used
//! throughout: a [`FeatureMap`] stores `(h, w, d)` with `d` fastest, and a
//! [`Map2`] stores `(h, w)` with `w` fastest.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An `H x W x D` feature tensor, the frozen backbone output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(Error::InvalidConfig(format!(
                "feature map dimensions must be positive, got {height}x{width}x{depth}"
            )));
        }
        let expected = height * width * depth;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "feature map data length",
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            height,
            width,
            depth,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, depth: usize) -> Self {
        Self::new(height, width, depth, vec![T::zero(); height * width * depth])
            .expect("positive dimensions")
    }

    /// Builds a map cell by cell from `f(h, w, d)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        depth: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * depth);
        for h in 0..height {
            for w in 0..width {
                for d in 0..depth {
                    data.push(f(h, w, d));
                }
            }
        }
        Self::new(height, width, depth, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Number of spatial cells, `H * W`.
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The feature vector at cell `(h, w)`.
    #[inline]
    pub fn vector(&self, h: usize, w: usize) -> &[T] {
        self.cell(h * self.width + w)
    }

    /// The feature vector at row-major cell index `idx`.
    #[inline]
    pub fn cell(&self, idx: usize) -> &[T] {
        &self.data[idx * self.depth..(idx + 1) * self.depth]
    }

    pub fn get(&self, h: usize, w: usize, d: usize) -> T {
        self.data[(h * self.width + w) * self.depth + d]
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            height: self.height,
            width: self.width,
            depth: self.depth,
            data: self
                .data
                .iter()
                .map(|&v| U::lit(v.as_f64()))
                .collect(),
        }
    }
}

/// A dense `H x W` real map.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Pre-softmax correlation scores of one detector.
pub type ScoreMap<T> = Map2<T>;
/// Spatial softmax output of one detector; a distribution over cells.
pub type ActivationMap<T> = Map2<T>;

impl<T: Scalar> Map2<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "map dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "map data length",
                expected: height * width,
                found: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("positive dimensions")
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidConfig("ragged rows".into()));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> T {
        self.data[h * self.width + w]
    }

    #[inline]
    pub fn set(&mut self, h: usize, w: usize, v: T) {
        self.data[h * self.width + w] = v;
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max(&self) -> T {
        argmax2d(self).2
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Cellwise `a * self + b * other`.
    pub fn axpby(&self, a: T, other: &Self, b: T) -> Self {
        assert!(self.same_shape(other), "shape mismatch");
        Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        }
    }
}

/// Correlates every feature vector with `kernel` (a `1 x 1 x D` convolution, no bias).
pub fn conv1x1<T: Scalar>(features: &FeatureMap<T>, kernel: &[T]) -> Result<ScoreMap<T>> {
    if kernel.len() != features.depth {
        return Err(Error::DimensionMismatch {
            context: "kernel length vs feature depth",
            expected: features.depth,
            found: kernel.len(),
        });
    }
    let data = features
        .data
        .chunks_exact(features.depth)
        .map(|v| dot(v, kernel))
        .collect();
    Ok(Map2 {
        height: features.height,
        width: features.width,
        data,
    })
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Softmax over all `H * W` cells, stabilized by subtracting the maximum.
pub fn spatial_softmax<T: Scalar>(scores: &ScoreMap<T>) -> ActivationMap<T> {
    let max = scores.max();
    let mut data: Vec<T> = scores.data.iter().map(|&s| (s - max).exp()).collect();
    let total: T = data.iter().copied().sum();
    for v in &mut data {
        *v /= total;
    }
    Map2 {
        height: scores.height,
        width: scores.width,
        data,
    }
}

/// Row-major indices of the 3x3 neighborhood of `(h, w)`, clipped to the map.
#[inline]
pub(crate) fn neighborhood(
    h: usize,
    w: usize,
    height: usize,
    width: usize,
) -> impl Iterator<Item = usize> {
    let rows = h.saturating_sub(1)..(h + 2).min(height);
    let cols = w.saturating_sub(1)..(w + 2).min(width);
    rows.flat_map(move |r| cols.clone().map(move |c| r * width + c))
}

/// 3x3 all-ones filter with zero padding: each output cell is the sum of its
/// neighborhood. The stencil is symmetric, so this is also its own transpose.
pub fn uniform_filter_3x3<T: Scalar>(map: &Map2<T>) -> Map2<T> {
    let (height, width) = (map.height, map.width);
    let mut data = Vec::with_capacity(height * width);
    for h in 0..height {
        for w in 0..width {
            data.push(
                neighborhood(h, w, height, width)
                    .map(|i| map.data[i])
                    .sum(),
            );
        }
    }
    Map2 {
        height,
        width,
        data,
    }
}

/// Location and value of the largest cell. Ties go to the smallest row-major index.
pub fn argmax2d<T: Scalar>(map: &Map2<T>) -> (usize, usize, T) {
    let mut best = 0;
    for (i, &v) in map.data.iter().enumerate().skip(1) {
        if v > map.data[best] {
            best = i;
        }
    }
    (best / map.width, best % map.width, map.data[best])
}
