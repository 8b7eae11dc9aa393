use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use particul::calibrate::{self, CalibrationParams};
use particul::classifier::{accuracy, train_classifier};
use particul::io::synthetic::generate;
use particul::io::{read_bank, read_classifier, read_feature_file, write_atomic, write_bank, write_classifier, BankMeta, Dataset, Split};
use particul::{DetectorBank, Error, FeatureMap, PartClassifier};
use serde::Serialize;
use serde_json::json;

use crate::args::{CalibrateCmd, ClassifyCmd, ScoreCmd, SynthCmd, TrainCmd, TrainHeadsCmd};
use crate::error::{CliError, CliResult};

pub const BANK_FILE: &str = "bank.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

pub fn emit(value: &impl Serialize) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out).map_err(CliError::io("stdout"))
}

fn training_split(dataset: &Dataset) -> CliResult<Vec<FeatureMap<f64>>> {
    let train = dataset.load_split::<f64>(Split::Train)?;
    if train.is_empty() {
        return Err(Error::Empty("training split").into());
    }
    Ok(train)
}

pub fn train(cmd: &TrainCmd) -> CliResult<()> {
    let config = cmd.train.apply();
    config.validate()?;
    if cmd.parts == 0 {
        return Err(CliError::Usage("--parts must be at least 1".into()));
    }
    let dataset = Dataset::open(&cmd.manifest)?;
    let train = training_split(&dataset)?;

    let bank = DetectorBank::init(cmd.parts, dataset.manifest.depth, config.seed)?;
    let mut log = String::new();
    let (bank, report) = particul::train_with(bank, &train, &config, |e| {
        eprintln!("epoch {:>3}  locality {:.5}  unicity {:.5}  total {:.5}", e.epoch, e.locality, e.unicity, e.total);
        let _ = writeln!(log, "{}", serde_json::to_string(e).expect("epoch stats serialize"));
    })?;

    std::fs::create_dir_all(&cmd.out).map_err(CliError::io(cmd.out.display().to_string()))?;
    let bank_path = cmd.out.join(BANK_FILE);
    write_bank(&bank_path, &bank, BankMeta { lambda: config.lambda, seed: config.seed })?;
    write_atomic(&cmd.out.join(TRAIN_LOG_FILE), log.as_bytes())?;
    eprintln!("attention coverage E = {:.4} over {} images", report.final_coverage, train.len());
    emit(&json!({
        "bank": bank_path,
        "parts": cmd.parts,
        "epochs": report.epochs.len(),
        "final_coverage": report.final_coverage,
    }))
}

pub fn calibrate(cmd: &CalibrateCmd) -> CliResult<()> {
    let (bank, _) = read_bank::<f64>(&cmd.bank)?;
    let dataset = Dataset::open(&cmd.manifest)?;
    let train = training_split(&dataset)?;
    let fitted = calibrate::fit(&bank, &train)?;
    for i in &fitted.degenerate {
        eprintln!(
            "warning: detector {i} has a near-constant maximum score; its variance was clamped to {:e}",
            calibrate::MIN_VARIANCE
        );
    }
    write_atomic(&cmd.out, fitted.params.to_json()?.as_bytes())?;
    emit(&json!({
        "calibration": cmd.out,
        "images": train.len(),
        "degenerate": fitted.degenerate,
    }))
}

fn read_calibration(path: &Path) -> CliResult<CalibrationParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
    Ok(CalibrationParams::from_json(&text).map_err(|e| e.at(path))?)
}

pub fn score(cmd: &ScoreCmd) -> CliResult<()> {
    if !(0.0..=1.0).contains(&cmd.visibility_threshold) {
        return Err(CliError::Usage("--visibility-threshold must lie in [0, 1]".into()));
    }
    let (bank, _) = read_bank::<f64>(&cmd.bank)?;
    let params = read_calibration(&cmd.calibration)?;
    let features: FeatureMap<f64> = read_feature_file(&cmd.features)?;
    let rows = calibrate::confidence(&params, &bank, &features)?;

    let mut table = String::from("detector\th\tw\tscore\tconfidence\tvisible\n");
    for (i, row) in rows.iter().enumerate() {
        let visible = row.confidence >= cmd.visibility_threshold;
        let (h, w) = row.location;
        let _ = writeln!(table, "{i}\t{h}\t{w}\t{}\t{}\t{visible}", row.score, row.confidence);
    }
    std::io::stdout()
        .lock()
        .write_all(table.as_bytes())
        .map_err(CliError::io("stdout"))
}

pub fn train_heads(cmd: &TrainHeadsCmd) -> CliResult<()> {
    let config = cmd.heads.apply();
    config.validate()?;
    let (bank, meta) = read_bank::<f64>(&cmd.bank)?;
    let dataset = Dataset::open(&cmd.manifest)?;
    let labeled: Vec<(FeatureMap<f64>, usize)> = dataset
        .load_labeled::<f64>(Split::Train)?
        .into_iter()
        .map(|(_, f, label)| (f, label))
        .collect();
    let num_classes = match cmd.num_classes {
        Some(c) => c,
        None => labeled.iter().map(|(_, l)| l + 1).max().ok_or(Error::Empty("training split"))?,
    };
    let model = PartClassifier::init(bank, num_classes, &config)?;
    let (model, history) = train_classifier(model, &labeled, &config)?;
    for e in &history {
        eprintln!("epoch {:>3}  loss {:.5}  train accuracy {:.4}", e.epoch, e.loss, e.accuracy);
    }
    write_classifier(&cmd.out, &model, meta)?;
    emit(&json!({
        "model": cmd.out,
        "num_classes": num_classes,
        "train_accuracy": history.last().map(|e| e.accuracy),
    }))
}

#[derive(Serialize)]
struct Trace {
    id: String,
    label: usize,
    predicted: usize,
    logits: Vec<f64>,
    part_logits: Vec<Vec<f64>>,
    /// Whether the logits equal the in-order sum of the part logits.
    logits_are_part_sum: bool,
}

pub fn classify(cmd: &ClassifyCmd) -> CliResult<()> {
    let split = Split::from(cmd.split);
    let dataset = Dataset::open(&cmd.manifest)?;
    if let Some(item) = dataset.manifest.split(split).find(|i| i.label.is_none()) {
        return Err(Error::MissingLabel(item.id.clone()).into());
    }
    let (model, _) = read_classifier::<f64>(&cmd.model)?;
    let labeled = dataset.load_labeled::<f64>(split)?;
    if labeled.is_empty() {
        return Err(Error::Empty("evaluation split").into());
    }

    let mut traces = Vec::with_capacity(labeled.len());
    for (id, features, label) in &labeled {
        let pred = model.predict(features)?;
        let mut summed = vec![0.0; model.num_classes];
        for part in &pred.part_logits {
            for (s, v) in summed.iter_mut().zip(part) {
                *s += v;
            }
        }
        traces.push(Trace {
            id: id.clone(),
            label: *label,
            predicted: pred.class,
            logits_are_part_sum: summed == pred.logits,
            logits: pred.logits,
            part_logits: pred.part_logits,
        });
    }
    let pairs: Vec<(&FeatureMap<f64>, usize)> = labeled.iter().map(|(_, f, l)| (f, *l)).collect();
    let acc = accuracy(&model, &pairs)?;
    eprintln!("accuracy {:.4} on {} images", acc, traces.len());
    emit(&json!({
        "accuracy": acc,
        "images": traces.len(),
        "predictions": traces,
    }))
}

pub fn synth(cmd: &SynthCmd) -> CliResult<()> {
    let spec = cmd.spec.apply();
    let data = generate::<f64>(&spec)?;
    let manifest = data.write(&cmd.out)?;
    eprintln!("wrote {} feature files to {}", manifest.items.len(), cmd.out.display());
    emit(&json!({
        "manifest": cmd.out.join("manifest.json"),
        "ground_truth": cmd.out.join("ground_truth.json"),
        "train": spec.n_train,
        "test": spec.n_test,
    }))
}
