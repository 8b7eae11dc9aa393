//! Planted-pattern feature maps with known part directions and locations.
//!
//! Each image is Gaussian noise plus, for every pattern that is present, a
//! scaled unit direction added at one random cell (distinct cells within an
//! image). Directions are mutually orthogonal. When labels are requested,
//! each pattern is planted as one of two variants tilted towards an extra
//! orthogonal direction, and the class is the bit string of the variants of
//! the first `log2(num_classes)` patterns.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_feature_file, DatasetManifest, ManifestItem, Split, MANIFEST_VERSION};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub p_true: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sigma: f64,
    pub pattern_gain: f64,
    /// Per-pattern gains; when empty every pattern uses `pattern_gain`.
    pub gains: Vec<f64>,
    /// Probability that a given pattern is omitted from an image.
    pub absence_rate: f64,
    /// 0 for an unlabeled set, otherwise a power of two up to `2^p_true`.
    pub num_classes: usize,
    /// Tilt of each variant away from its base direction, in degrees.
    pub variant_angle_deg: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            height: 7,
            width: 7,
            depth: 16,
            p_true: 4,
            n_train: 200,
            n_test: 100,
            noise_sigma: 0.5,
            pattern_gain: 5.0,
            gains: Vec::new(),
            absence_rate: 0.0,
            num_classes: 0,
            variant_angle_deg: 35.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.height == 0 || self.width == 0 || self.depth == 0 || self.p_true == 0 {
            return bad("synthetic dimensions and p_true must be positive".into());
        }
        if self.p_true > self.depth {
            return bad(format!("p_true ({}) exceeds depth ({})", self.p_true, self.depth));
        }
        if self.p_true > self.height * self.width {
            return bad("more patterns than cells".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise sigma must be nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.absence_rate) {
            return bad("absence rate must lie in [0, 1)".into());
        }
        if !self.gains.is_empty() && self.gains.len() != self.p_true {
            return bad(format!("{} gains given for {} patterns", self.gains.len(), self.p_true));
        }
        if self.num_classes > 0 {
            if !self.num_classes.is_power_of_two() || self.label_bits() > self.p_true {
                return bad(format!(
                    "num_classes must be a power of two up to 2^p_true, got {}",
                    self.num_classes
                ));
            }
            if 2 * self.p_true > self.depth {
                return bad("labeled sets need depth >= 2 * p_true for variant directions".into());
            }
        }
        Ok(())
    }

    pub fn gain(&self, pattern: usize) -> f64 {
        self.gains.get(pattern).copied().unwrap_or(self.pattern_gain)
    }

    fn label_bits(&self) -> usize {
        self.num_classes.trailing_zeros() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub id: String,
    /// Planted cell of every pattern; `None` when absent.
    pub locations: Vec<Option<(usize, usize)>>,
    /// Variant bit of every pattern (always 0 for unlabeled sets).
    pub variants: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl ImageTruth {
    pub fn present(&self, pattern: usize) -> bool {
        self.locations[pattern].is_some()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticImage<T> {
    pub features: FeatureMap<T>,
    pub truth: ImageTruth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SyntheticSpec,
    /// Unit base direction of every pattern.
    pub directions: Vec<Vec<f64>>,
    /// Extra orthogonal direction used to tilt each pattern's variants.
    pub variant_directions: Vec<Vec<f64>>,
    pub train: Vec<ImageTruth>,
    pub test: Vec<ImageTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset<T> {
    pub spec: SyntheticSpec,
    pub directions: Vec<Vec<f64>>,
    pub variant_directions: Vec<Vec<f64>>,
    pub train: Vec<SyntheticImage<T>>,
    pub test: Vec<SyntheticImage<T>>,
}

/// `count` orthonormal vectors in `R^depth` from Gram-Schmidt on Gaussian draws.
fn orthonormal(count: usize, depth: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..depth).map(|_| StandardNormal.sample(rng)).collect();
        // Two passes keep the result orthogonal to machine precision.
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Planted directions for `spec`, independent of image count and labeling.
pub fn planted_directions(spec: &SyntheticSpec) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    // Gram-Schmidt is sequential, so the first `p_true` vectors do not depend
    // on whether variant directions are drawn after them.
    let count = if spec.num_classes == 0 { spec.p_true } else { 2 * spec.p_true };
    let mut all = orthonormal(count, spec.depth, &mut rng);
    let variants = all.split_off(spec.p_true);
    Ok((all, variants))
}

pub fn generate<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticDataset<T>> {
    let (directions, variant_directions) = planted_directions(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    let (cos, sin) = {
        let a = spec.variant_angle_deg.to_radians();
        (a.cos(), a.sin())
    };
    let bits = spec.label_bits();
    let cells = spec.height * spec.width;

    let mut make = |prefix: &str, n: usize| -> Result<Vec<SyntheticImage<T>>> {
        (0..n)
            .map(|idx| {
                let present: Vec<bool> = (0..spec.p_true)
                    .map(|_| spec.absence_rate == 0.0 || rng.random::<f64>() >= spec.absence_rate)
                    .collect();
                let variants: Vec<u8> = (0..spec.p_true)
                    .map(|_| if spec.num_classes > 0 { rng.random_range(0..2u8) } else { 0 })
                    .collect();
                let chosen = sample(&mut rng, cells, spec.p_true).into_vec();
                let mut data: Vec<f64> = (0..cells * spec.depth)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        spec.noise_sigma * z
                    })
                    .collect();
                let mut locations = Vec::with_capacity(spec.p_true);
                for j in 0..spec.p_true {
                    if !present[j] {
                        locations.push(None);
                        continue;
                    }
                    let cell = chosen[j];
                    let gain = spec.gain(j);
                    let slot = &mut data[cell * spec.depth..(cell + 1) * spec.depth];
                    if spec.num_classes > 0 {
                        let sign = if variants[j] == 1 { 1.0 } else { -1.0 };
                        for ((x, u), w) in slot.iter_mut().zip(&directions[j]).zip(&variant_directions[j]) {
                            *x += gain * (cos * u + sign * sin * w);
                        }
                    } else {
                        for (x, u) in slot.iter_mut().zip(&directions[j]) {
                            *x += gain * u;
                        }
                    }
                    locations.push(Some((cell / spec.width, cell % spec.width)));
                }
                let label = (spec.num_classes > 0).then(|| {
                    (0..bits).map(|j| (variants[j] as usize) << j).sum()
                });
                Ok(SyntheticImage {
                    features: FeatureMap::new(
                        spec.height,
                        spec.width,
                        spec.depth,
                        data.into_iter().map(T::lit).collect(),
                    )?,
                    truth: ImageTruth {
                        id: format!("{prefix}{idx:05}"),
                        locations,
                        variants,
                        label,
                    },
                })
            })
            .collect()
    };
    let train = make("train", spec.n_train)?;
    let test = make("test", spec.n_test)?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        directions,
        variant_directions,
        train,
        test,
    })
}

impl<T: Scalar> SyntheticDataset<T> {
    pub fn train_features(&self) -> Vec<&FeatureMap<T>> {
        self.train.iter().map(|i| &i.features).collect()
    }

    pub fn test_features(&self) -> Vec<&FeatureMap<T>> {
        self.test.iter().map(|i| &i.features).collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            spec: self.spec.clone(),
            directions: self.directions.clone(),
            variant_directions: self.variant_directions.clone(),
            train: self.train.iter().map(|i| i.truth.clone()).collect(),
            test: self.test.iter().map(|i| i.truth.clone()).collect(),
        }
    }

    /// Writes `features/<id>.pculf`, `manifest.json` and `ground_truth.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("features")).map_err(|e| Error::from(e).at(dir))?;
        let mut items = Vec::with_capacity(self.train.len() + self.test.len());
        for (split, images) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            for img in images {
                let rel = format!("features/{}.pculf", img.truth.id);
                write_feature_file(dir.join(&rel), &img.features)?;
                items.push(ManifestItem {
                    id: img.truth.id.clone(),
                    path: rel,
                    label: img.truth.label,
                    split,
                });
            }
        }
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            depth: self.spec.depth,
            items,
        };
        manifest.save(dir.join("manifest.json"))?;
        let mut truth = serde_json::to_vec_pretty(&self.ground_truth())?;
        truth.push(b'\n');
        write_atomic(&dir.join("ground_truth.json"), &truth)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_train: 12,
            n_test: 5,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_images_are_pure_spikes() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            ..small()
        };
        let ds = generate::<f64>(&spec).unwrap();
        for img in &ds.train {
            let mut nonzero_cells = 0;
            for c in 0..49 {
                let v = img.features.cell(c);
                if v.iter().any(|&x| x != 0.0) {
                    nonzero_cells += 1;
                    let j = img
                        .truth
                        .locations
                        .iter()
                        .position(|l| *l == Some((c / 7, c % 7)))
                        .expect("spike at a planted cell");
                    for (x, u) in v.iter().zip(&ds.directions[j]) {
                        assert!((x - 5.0 * u).abs() < 1e-12);
                    }
                }
            }
            assert_eq!(nonzero_cells, 4);
        }
    }

    #[test]
    fn deterministic_and_orthogonal() {
        let a = generate::<f64>(&small()).unwrap();
        let b = generate::<f64>(&small()).unwrap();
        assert_eq!(a.ground_truth().train, b.ground_truth().train);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.features, y.features);
        }
        for i in 0..4 {
            for j in 0..4 {
                let d: f64 = a.directions[i].iter().zip(&a.directions[j]).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9);
            }
        }
        for img in a.train.iter().chain(&a.test) {
            let cells: Vec<_> = img.truth.locations.iter().flatten().collect();
            for (h, w) in &cells {
                assert!(*h < 7 && *w < 7);
            }
            let mut uniq = cells.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), cells.len());
        }
    }

    #[test]
    fn labeled_sets_share_base_directions() {
        let labeled = SyntheticSpec {
            num_classes: 8,
            ..small()
        };
        let plain = generate::<f64>(&small()).unwrap();
        let ds = generate::<f64>(&labeled).unwrap();
        assert_eq!(plain.directions, ds.directions);
        assert_eq!(ds.variant_directions.len(), 4);
        let all: Vec<&Vec<f64>> = ds.directions.iter().chain(&ds.variant_directions).collect();
        for i in 0..8 {
            for j in 0..i {
                let d: f64 = all[i].iter().zip(all[j]).map(|(x, y)| x * y).sum();
                assert!(d.abs() < 1e-9);
            }
        }
        for img in &ds.train {
            let t = &img.truth;
            let want = t.variants[0] as usize + 2 * t.variants[1] as usize + 4 * t.variants[2] as usize;
            assert_eq!(t.label, Some(want));
        }
    }

    #[test]
    fn absence_rate_drops_patterns() {
        let spec = SyntheticSpec {
            absence_rate: 0.3,
            n_train: 400,
            ..small()
        };
        let ds = generate::<f64>(&spec).unwrap();
        let absent = ds
            .train
            .iter()
            .flat_map(|i| i.truth.locations.iter())
            .filter(|l| l.is_none())
            .count() as f64;
        let rate = absent / (400.0 * 4.0);
        assert!((rate - 0.3).abs() < 0.05, "{rate}");
    }

    #[test]
    fn rejects_invalid_specs() {
        let too_many = SyntheticSpec { p_true: 17, ..small() };
        assert!(generate::<f64>(&too_many).is_err());
        let classes = SyntheticSpec { num_classes: 6, ..small() };
        assert!(generate::<f64>(&classes).is_err());
        let gains = SyntheticSpec { gains: vec![1.0], ..small() };
        assert!(generate::<f64>(&gains).is_err());
    }

    #[test]
    fn writes_manifest_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate::<f32>(&SyntheticSpec { n_train: 3, n_test: 2, num_classes: 4, ..small() }).unwrap();
        let m = ds.write(dir.path()).unwrap();
        assert_eq!(m.items.len(), 5);
        let back = crate::io::Dataset::open(dir.path().join("manifest.json")).unwrap();
        let test = back.load_labeled::<f32>(Split::Test).unwrap();
        assert_eq!(test[1].1, ds.test[1].features);
        assert!(dir.path().join("ground_truth.json").exists());
    }
}
