//! Locality and unicity objectives, their analytic gradient, and the
//! attention coverage metric.

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorBank, ForwardResult};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{argmax2d, neighborhood, FeatureMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub locality: T,
    pub unicity: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn combine(locality: T, unicity: T, lambda: T) -> Self {
        Self {
            locality,
            unicity,
            total: locality + lambda * unicity,
        }
    }
}

/// `dL/dK`, laid out exactly like [`DetectorBank::weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer<T> {
    parts: usize,
    depth: usize,
    data: Vec<T>,
}

impl<T: Scalar> GradientBuffer<T> {
    pub fn zeros(parts: usize, depth: usize) -> Self {
        Self {
            parts,
            depth,
            data: vec![T::zero(); parts * depth],
        }
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn kernel(&self, i: usize) -> &[T] {
        &self.data[i * self.depth..(i + 1) * self.depth]
    }
}

/// Per-image pieces of both objectives: `sum_i max G_i` and the unicity hinge.
fn image_terms<T: Scalar>(fr: &ForwardResult<T>) -> (T, T) {
    let locality = fr.smoothed_maps.iter().map(|g| g.max()).sum();
    let peak = fr.summed_activation().max();
    (locality, (peak - T::one()).max(T::zero()))
}

fn check_batch<T: Scalar>(batch: &[ForwardResult<T>]) -> Result<usize> {
    let first = batch.first().ok_or(Error::Empty("batch"))?;
    let parts = first.parts();
    if let Some(bad) = batch.iter().find(|fr| fr.parts() != parts) {
        return Err(Error::DimensionMismatch {
            context: "detectors per forward result",
            expected: parts,
            found: bad.parts(),
        });
    }
    Ok(parts)
}

/// `L_l = -(1/p) sum_i (1/n) sum_x max_{h,w} G(k_i, x)`.
pub fn locality_loss<T: Scalar>(batch: &[ForwardResult<T>]) -> Result<T> {
    let parts = check_batch(batch)?;
    let sum: T = batch.iter().map(|fr| image_terms(fr).0).sum();
    Ok(-sum / (T::from_usize_lossy(parts) * T::from_usize_lossy(batch.len())))
}

/// `L_u = (1/n) sum_x max(max_{h,w} S(K, x) - 1, 0)`.
pub fn unicity_loss<T: Scalar>(batch: &[ForwardResult<T>]) -> Result<T> {
    check_batch(batch)?;
    let sum: T = batch.iter().map(|fr| image_terms(fr).1).sum();
    Ok(sum / T::from_usize_lossy(batch.len()))
}

pub fn total_loss<T: Scalar>(batch: &[ForwardResult<T>], lambda: T) -> Result<LossBreakdown<T>> {
    Ok(LossBreakdown::combine(
        locality_loss(batch)?,
        unicity_loss(batch)?,
        lambda,
    ))
}

struct ImageGradient<T> {
    locality: T,
    hinge: T,
    grad: Vec<T>,
}

/// Loss and gradient for one image, with the `1/(p n)` and `lambda/n`
/// weights folded in by the caller.
fn image_gradient<T: Scalar>(
    bank: &DetectorBank<T>,
    features: &FeatureMap<T>,
    locality_weight: T,
    unicity_weight: T,
) -> Result<ImageGradient<T>> {
    let fr = bank.forward(features)?;
    let (height, width) = (features.height(), features.width());
    let cells = height * width;
    let (locality, hinge) = image_terms(&fr);

    // The unicity hinge routes its gradient through the argmax cell of S.
    let unicity_cell = if hinge > T::zero() {
        let (h, w, _) = argmax2d(&fr.summed_activation());
        Some(h * width + w)
    } else {
        None
    };

    let depth = bank.depth();
    let mut grad = vec![T::zero(); bank.parts() * depth];
    let mut d_act = vec![T::zero(); cells];
    for i in 0..bank.parts() {
        d_act.iter_mut().for_each(|v| *v = T::zero());
        let (h, w, _) = argmax2d(&fr.smoothed_maps[i]);
        for c in neighborhood(h, w, height, width) {
            d_act[c] -= locality_weight;
        }
        if let Some(c) = unicity_cell {
            d_act[c] += unicity_weight;
        }

        // Softmax Jacobian: dL/ds_c = P_c (dL/dP_c - sum_c' P_c' dL/dP_c').
        let act = fr.activation_maps[i].data();
        let mean: T = act.iter().zip(&d_act).map(|(&p, &g)| p * g).sum();
        let kernel_grad = &mut grad[i * depth..(i + 1) * depth];
        for (c, (&p, &g)) in act.iter().zip(&d_act).enumerate() {
            let ds = p * (g - mean);
            if ds == T::zero() {
                continue;
            }
            for (kg, &f) in kernel_grad.iter_mut().zip(features.cell(c)) {
                *kg += ds * f;
            }
        }
    }
    Ok(ImageGradient {
        locality,
        hinge,
        grad,
    })
}

/// Exact loss and gradient of `L_l + lambda * L_u` over `batch`.
///
/// Each max is differentiated through its argmax cell (row-major ties).
/// Images are processed in parallel and reduced in batch order, so the
/// result does not depend on the thread count.
pub fn gradient<T, F>(
    bank: &DetectorBank<T>,
    batch: &[F],
    lambda: T,
) -> Result<(LossBreakdown<T>, GradientBuffer<T>)>
where
    T: Scalar,
    F: Borrow<FeatureMap<T>> + Sync,
{
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = T::from_usize_lossy(batch.len());
    let p = T::from_usize_lossy(bank.parts());
    let locality_weight = T::one() / (p * n);
    let unicity_weight = lambda / n;

    let per_image = batch
        .par_iter()
        .map(|f| image_gradient(bank, f.borrow(), locality_weight, unicity_weight))
        .collect::<Result<Vec<_>>>()?;

    let mut out = GradientBuffer::zeros(bank.parts(), bank.depth());
    let (mut locality, mut hinge) = (T::zero(), T::zero());
    for img in &per_image {
        locality += img.locality;
        hinge += img.hinge;
        for (o, &g) in out.data.iter_mut().zip(&img.grad) {
            *o += g;
        }
    }
    let loss = LossBreakdown::combine(-locality / (p * n), hinge / n, lambda);
    Ok((loss, out))
}

/// Average per-detector share of the cellwise maximum over activation maps.
/// Ranges from `1/p` (all detectors identical) to `1` (disjoint supports).
pub fn attention_coverage<T, F>(bank: &DetectorBank<T>, dataset: &[F]) -> Result<T>
where
    T: Scalar,
    F: Borrow<FeatureMap<T>> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let per_image = dataset
        .par_iter()
        .map(|f| bank.forward(f.borrow()).map(|fr| image_coverage(&fr)))
        .collect::<Result<Vec<T>>>()?;
    let sum: T = per_image.into_iter().sum();
    Ok(sum / (T::from_usize_lossy(dataset.len()) * T::from_usize_lossy(bank.parts())))
}

/// `sum_{h,w} max_i P_i(x)_{h,w}` for one image.
pub(crate) fn image_coverage<T: Scalar>(fr: &ForwardResult<T>) -> T {
    let cells = fr.activation_maps[0].data().len();
    (0..cells)
        .map(|c| {
            fr.activation_maps
                .iter()
                .map(|m| m.data()[c])
                .fold(T::neg_infinity(), T::max)
        })
        .sum()
}
