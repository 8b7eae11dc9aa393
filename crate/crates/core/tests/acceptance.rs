//! End-to-end acceptance checks. Each criterion prints one `PASS`/`FAIL`
//! line and then asserts, so a red criterion is visible in the test log
//! together with the measured values.

use std::sync::OnceLock;
use std::time::Instant;

use particul::calibrate::{self, normal_cdf};
use particul::classifier::{accuracy, train_classifier};
use particul::io::synthetic::{generate, SyntheticDataset, SyntheticSpec};
use particul::io::{read_feature_file, write_feature_file};
use particul::trainer::{attention_coverage, gradient, locality_loss, unicity_loss};
use particul::{DetectorBank, FeatureMap, FormatError, HeadConfig, PartClassifier, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0;

fn report(id: &str, name: &str, pass: bool, detail: String) {
    println!("{id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{id} {name} failed: {detail}");
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize, scale: f64) -> FeatureMap<f64> {
    let data = (0..h * w * d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    FeatureMap::new(h, w, d, data).unwrap()
}

fn base_spec() -> SyntheticSpec {
    SyntheticSpec {
        height: 7,
        width: 7,
        depth: 16,
        p_true: 4,
        n_train: 200,
        n_test: 100,
        noise_sigma: 0.5,
        pattern_gain: 5.0,
        seed: SEED,
        ..Default::default()
    }
}

/// Mean raw score of each detector at each pattern's planted cell over the
/// held-out images where the pattern is present, as a `p x p_true` table.
fn mean_planted_scores(bank: &DetectorBank<f64>, ds: &SyntheticDataset<f64>) -> Vec<Vec<f64>> {
    let q = ds.spec.p_true;
    let mut sums = vec![vec![0.0; q]; bank.parts()];
    let mut counts = vec![0usize; q];
    for img in &ds.test {
        let scores = bank.scores(&img.features).unwrap();
        for j in 0..q {
            if let Some((h, w)) = img.truth.locations[j] {
                counts[j] += 1;
                for (i, s) in scores.iter().enumerate() {
                    sums[i][j] += s.get(h, w);
                }
            }
        }
    }
    for row in &mut sums {
        for (v, &c) in row.iter_mut().zip(&counts) {
            *v /= c.max(1) as f64;
        }
    }
    sums
}

/// Each detector takes the pattern it responds to most strongly.
fn assign(table: &[Vec<f64>]) -> Vec<usize> {
    table
        .iter()
        .map(|row| {
            (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap()
        })
        .collect()
}

fn chebyshev(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

struct Recovery {
    bank: DetectorBank<f64>,
    data: SyntheticDataset<f64>,
    seconds: f64,
}

fn recovery() -> &'static Recovery {
    static CELL: OnceLock<Recovery> = OnceLock::new();
    CELL.get_or_init(|| {
        let started = Instant::now();
        let data = generate::<f64>(&base_spec()).unwrap();
        let bank = DetectorBank::init(4, 16, SEED).unwrap();
        let config = TrainConfig {
            lambda: 0.2,
            seed: SEED,
            ..Default::default()
        };
        let (bank, _) = particul::train(bank, &data.train_features(), &config).unwrap();
        Recovery {
            bank,
            data,
            seconds: started.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn a1_gradient_matches_finite_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let step = 1e-5;
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut pass = true;
    for instance in 0..20 {
        let h = rng.random_range(3..=5);
        let w = rng.random_range(3..=5);
        let d = [4, 8][rng.random_range(0..2)];
        let p = rng.random_range(2..=4);
        let n = [2, 4][rng.random_range(0..2)];
        let lambda = if instance % 2 == 0 { 0.0 } else { 1.0 };
        let images: Vec<_> = (0..n).map(|_| random_map(&mut rng, h, w, d, 1.0)).collect();
        let kernels: Vec<f64> = (0..p * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let bank = DetectorBank::new(p, d, kernels.clone()).unwrap();
        let (_, grad) = gradient(&bank, &images, lambda).unwrap();

        // Central differences of the loss recomputed from its definition.
        let loss_at = |k: &[f64]| -> f64 {
            let bank = DetectorBank::new(p, d, k.to_vec()).unwrap();
            let frs: Vec<_> = images.iter().map(|f| bank.forward(f).unwrap()).collect();
            let mut local = 0.0;
            let mut unique = 0.0;
            for fr in &frs {
                for g in &fr.smoothed_maps {
                    local += g.data().iter().copied().fold(f64::MIN, f64::max);
                }
                let mut s = vec![0.0; h * w];
                for a in &fr.activation_maps {
                    for (acc, v) in s.iter_mut().zip(a.data()) {
                        *acc += v;
                    }
                }
                unique += (s.iter().copied().fold(f64::MIN, f64::max) - 1.0).max(0.0);
            }
            -local / (p * n) as f64 + lambda * unique / n as f64
        };
        for c in 0..p * d {
            let mut plus = kernels.clone();
            let mut minus = kernels.clone();
            plus[c] += step;
            minus[c] -= step;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let g = grad.data()[c];
            if g.abs() < 1e-8 {
                let err = (g - fd).abs();
                worst_abs = worst_abs.max(err);
                pass &= err < 1e-7;
            } else {
                let rel = (g - fd).abs() / g.abs();
                worst_rel = worst_rel.max(rel);
                pass &= rel < 1e-4;
            }
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    report(
        "A1",
        "gradient correctness",
        pass && seconds < 5.0,
        format!("max rel {worst_rel:.2e}, max abs {worst_abs:.2e}, {seconds:.2}s"),
    );
}

#[test]
fn a2_planted_pattern_recovery() {
    let r = recovery();
    let assignment = assign(&mean_planted_scores(&r.bank, &r.data));
    let mut distinct = assignment.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let bijection = distinct.len() == r.data.spec.p_true && assignment.len() == r.data.spec.p_true;

    let mut hit_rates = Vec::new();
    for (i, &j) in assignment.iter().enumerate() {
        let (mut hits, mut total) = (0usize, 0usize);
        for img in &r.data.test {
            if let Some(cell) = img.truth.locations[j] {
                total += 1;
                let fr = r.bank.forward(&img.features).unwrap();
                hits += usize::from(chebyshev(fr.max_locations[i], cell) <= 1);
            }
        }
        hit_rates.push(hits as f64 / total as f64);
    }
    let worst_hit = hit_rates.iter().copied().fold(1.0, f64::min);
    let coverage = attention_coverage(&r.bank, &r.data.train_features()).unwrap();
    let pass = bijection && worst_hit >= 0.95 && coverage >= 0.9 && r.seconds < 60.0;
    report(
        "A2",
        "planted-pattern recovery",
        pass,
        format!(
            "assignment {assignment:?}, bijection {bijection}, localization {hit_rates:.2?}, E {coverage:.3}, {:.1}s",
            r.seconds
        ),
    );
}

#[test]
fn a3_collapse_without_unicity() {
    let spec = SyntheticSpec {
        gains: vec![10.0, 2.0, 2.0, 2.0],
        ..base_spec()
    };
    let data = generate::<f64>(&spec).unwrap();
    let train = data.train_features();
    let bank = DetectorBank::init(4, 16, SEED).unwrap();
    let run = |lambda: f64| {
        let config = TrainConfig {
            lambda,
            seed: SEED,
            ..Default::default()
        };
        particul::train(bank.clone(), &train, &config).unwrap().1.final_coverage
    };
    let without = run(0.0);
    let with = run(0.2);
    report(
        "A3",
        "collapse without unicity",
        without <= 1.5 / 4.0 && with >= 0.8,
        format!("E(lambda=0) {without:.3} (need <= 0.375), E(lambda=0.2) {with:.3} (need >= 0.8)"),
    );
}

#[test]
fn a4_normalization_and_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_sum: f64 = 0.0;
    let mut ok = true;
    let mut failures = Vec::new();
    for trial in 0..1000 {
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let d = rng.random_range(1..=8);
        let p = if trial % 10 == 0 { 1 } else { rng.random_range(1..=6) };
        let n = rng.random_range(1..=4);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let images: Vec<_> = (0..n).map(|_| random_map(&mut rng, h, w, d, scale)).collect();
        let kernels = (0..p * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let bank = DetectorBank::new(p, d, kernels).unwrap();
        let frs: Vec<_> = images.iter().map(|f| bank.forward(f).unwrap()).collect();
        for fr in &frs {
            for a in &fr.activation_maps {
                worst_sum = worst_sum.max((a.sum() - 1.0).abs());
            }
        }
        let local = locality_loss(&frs).unwrap();
        let unique = unicity_loss(&frs).unwrap();
        let e = attention_coverage(&bank, &images).unwrap();
        let fine = (-1.0..=0.0).contains(&local)
            && unique >= 0.0
            && (p != 1 || unique == 0.0)
            && e >= 1.0 / p as f64 - 1e-9
            && e <= 1.0 + 1e-9;
        if !fine {
            failures.push(format!("trial {trial}: L_l {local}, L_u {unique}, E {e}, p {p}"));
        }
        ok &= fine;
    }
    report(
        "A4",
        "normalization and bounds",
        ok && worst_sum <= 1e-5,
        format!("max |sum - 1| {worst_sum:.2e}, violations {failures:?}"),
    );
}

#[test]
fn a5_calibration_separates_presence() {
    let spec = SyntheticSpec {
        absence_rate: 0.3,
        ..base_spec()
    };
    let data = generate::<f64>(&spec).unwrap();
    let train = data.train_features();
    let bank = DetectorBank::init(4, 16, SEED).unwrap();
    let config = TrainConfig {
        seed: SEED,
        ..Default::default()
    };
    let (bank, _) = particul::train(bank, &train, &config).unwrap();
    let calibration = calibrate::fit(&bank, &train).unwrap();
    let assignment = assign(&mean_planted_scores(&bank, &data));

    let confidences: Vec<Vec<_>> = data
        .test
        .iter()
        .map(|img| calibrate::confidence(&calibration.params, &bank, &img.features).unwrap())
        .collect();
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 0 {
            0.5 * (v[m - 1] + v[m])
        } else {
            v[m]
        }
    };
    let mut medians = Vec::new();
    let mut separated = true;
    for (i, &j) in assignment.iter().enumerate() {
        let (mut with, mut without) = (Vec::new(), Vec::new());
        for (img, conf) in data.test.iter().zip(&confidences) {
            if img.truth.present(j) {
                with.push(conf[i].confidence);
            } else {
                without.push(conf[i].confidence);
            }
        }
        let (mw, mo) = (median(with), median(without));
        separated &= mw >= 0.9 && mo <= 0.1;
        medians.push((mw, mo));
    }

    let at_mean = calibration
        .params
        .entries
        .iter()
        .map(|e| (normal_cdf(e.mu, e.mu, e.sigma2).unwrap() - 0.5).abs())
        .fold(0.0, f64::max);
    let mut monotone = true;
    for e in &calibration.params.entries {
        let mut last = 0.0;
        for k in -400..=400 {
            let z = e.mu + k as f64 * 0.02 * e.sigma2.sqrt();
            let c = normal_cdf(z, e.mu, e.sigma2).unwrap();
            monotone &= c >= last;
            last = c;
        }
    }
    report(
        "A5",
        "calibration behavior",
        separated && at_mean <= 1e-12 && monotone,
        format!(
            "assignment {assignment:?}, (median with, median without) {medians:.3?}, |C(mu) - 0.5| {at_mean:.1e}, monotone {monotone}"
        ),
    );
}

#[test]
fn a6_part_based_classification() {
    let r = recovery();
    let started = Instant::now();
    let spec = SyntheticSpec {
        n_train: 800,
        n_test: 200,
        num_classes: 8,
        ..base_spec()
    };
    let data = generate::<f64>(&spec).unwrap();
    assert_eq!(data.directions, r.data.directions);
    let labeled = |images: &[particul::io::synthetic::SyntheticImage<f64>]| -> Vec<(FeatureMap<f64>, usize)> {
        images
            .iter()
            .map(|i| (i.features.clone(), i.truth.label.unwrap()))
            .collect()
    };
    let train = labeled(&data.train);
    let test = labeled(&data.test);
    let config = HeadConfig {
        hidden: [256, 256],
        seed: SEED,
        ..Default::default()
    };
    let model = PartClassifier::init(r.bank.clone(), 8, &config).unwrap();
    let (model, _) = train_classifier(model, &train, &config).unwrap();
    assert_eq!(model.bank, r.bank);
    let acc = accuracy(&model, &test).unwrap();

    let mut exact = true;
    for (f, _) in &test {
        let pred = model.predict(f).unwrap();
        let mut summed = vec![0.0f64; 8];
        for part in &pred.part_logits {
            for (s, v) in summed.iter_mut().zip(part) {
                *s += v;
            }
        }
        exact &= summed == pred.logits;
    }
    let seconds = started.elapsed().as_secs_f64();
    report(
        "A6",
        "part-based classification",
        acc >= 0.95 && exact && seconds < 120.0,
        format!("held-out accuracy {acc:.3}, logits are exact part sums {exact}, {seconds:.1}s"),
    );
}

#[test]
fn a7_feature_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut identical = true;
    for k in 0..100 {
        let (h, w, d) = (rng.random_range(1..=9), rng.random_range(1..=9), rng.random_range(1..=40));
        let data: Vec<f32> = (0..h * w * d)
            .map(|_| f32::from_bits(rng.random::<u32>() & 0xBFFF_FFFF))
            .map(|v| if v.is_finite() { v } else { 1.5 })
            .collect();
        let map = FeatureMap::new(h, w, d, data).unwrap();
        let path = dir.path().join(format!("{k}.pculf"));
        write_feature_file(&path, &map).unwrap();
        let back: FeatureMap<f32> = read_feature_file(&path).unwrap();
        identical &= back
            .data()
            .iter()
            .zip(map.data())
            .all(|(a, b)| a.to_bits() == b.to_bits())
            && (back.height(), back.width(), back.depth()) == (h, w, d);
    }

    let header = |magic: &[u8], h: u32, w: u32, d: u32| {
        let mut b = magic.to_vec();
        for v in [h, w, d] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    };
    let mut good = header(b"PCULF001", 2, 1, 1);
    good.extend_from_slice(&1.0f32.to_le_bytes());
    good.extend_from_slice(&2.0f32.to_le_bytes());
    let malformed: Vec<Vec<u8>> = vec![
        good[..5].to_vec(),
        { let mut b = good.clone(); b[..8].copy_from_slice(b"PCULF000"); b },
        { let mut b = good.clone(); b[..8].copy_from_slice(b"GARBAGE!"); b },
        good[..12].to_vec(),
        good[..good.len() - 2].to_vec(),
        { let mut b = good.clone(); b.extend_from_slice(&[0, 0, 0, 0]); b },
        header(b"PCULF001", 1, 0, 1),
        header(b"PCULF001", 1 << 12, 1 << 12, 1 << 8),
        { let mut b = header(b"PCULF001", 1, 1, 1); b.extend_from_slice(&f32::INFINITY.to_le_bytes()); b },
    ];
    let mut kinds = Vec::new();
    let mut all_rejected = true;
    for (k, bytes) in malformed.iter().enumerate() {
        let path = dir.path().join(format!("bad{k}.pculf"));
        std::fs::write(&path, bytes).unwrap();
        match read_feature_file::<f32>(&path) {
            Ok(_) => all_rejected = false,
            Err(particul::Error::File { source, .. }) => match *source {
                particul::Error::Format(f) => kinds.push(match f {
                    FormatError::Truncated { section, .. } => format!("truncated {section}"),
                    other => format!("{:?}", std::mem::discriminant(&other)),
                }),
                other => kinds.push(format!("unexpected {other}")),
            },
            Err(other) => kinds.push(format!("unexpected {other}")),
        }
    }
    let mut distinct = kinds.clone();
    distinct.sort();
    distinct.dedup();
    let distinct_errors = distinct.len() == malformed.len() && !kinds.iter().any(|k| k.starts_with("unexpected"));
    report(
        "A7",
        "format round-trip",
        identical && all_rejected && distinct_errors,
        format!(
            "100 maps bitwise identical {identical}, {} malformed files rejected with {} distinct errors",
            malformed.len(),
            distinct.len()
        ),
    );
}
