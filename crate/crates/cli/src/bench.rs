use std::time::Instant;

use particul::io::synthetic::{generate, SyntheticSpec};
use particul::io::write_atomic;
use particul::{DetectorBank, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::args::BenchCmd;
use crate::commands::emit;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parts: usize,
    pub lambda: f64,
    pub coverage: f64,
    pub final_locality: f64,
    pub final_unicity: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub spec: SyntheticSpec,
    pub train: TrainConfig,
    pub parts_sweep: Vec<SweepPoint>,
    pub lambda_sweep: Vec<SweepPoint>,
    pub seconds: f64,
}

pub fn bench(cmd: &BenchCmd) -> CliResult<()> {
    let spec = cmd.spec.apply();
    let config = cmd.train.apply();
    config.validate()?;
    spec.validate()?;
    if cmd.parts_sweep.contains(&0) {
        return Err(CliError::Usage("--parts-sweep entries must be positive".into()));
    }
    if cmd.lambda_sweep.iter().any(|l| !(*l >= 0.0)) {
        return Err(CliError::Usage("--lambda-sweep entries must be nonnegative".into()));
    }

    let started = Instant::now();
    let data = generate::<f64>(&spec)?;
    let train = data.train_features();
    let run = |parts: usize, lambda: f64| -> CliResult<SweepPoint> {
        let t = Instant::now();
        let cfg = TrainConfig { lambda, ..config.clone() };
        let bank = DetectorBank::init(parts, spec.depth, cfg.seed)?;
        let (_, report) = particul::train(bank, &train, &cfg)?;
        let last = report.epochs.last();
        let point = SweepPoint {
            parts,
            lambda,
            coverage: report.final_coverage,
            final_locality: last.map_or(f64::NAN, |e| e.locality),
            final_unicity: last.map_or(f64::NAN, |e| e.unicity),
            seconds: t.elapsed().as_secs_f64(),
        };
        eprintln!("p = {parts:<3} lambda = {lambda:<6} E = {:.4}", point.coverage);
        Ok(point)
    };
    let parts_sweep = cmd
        .parts_sweep
        .iter()
        .map(|&p| run(p, config.lambda))
        .collect::<CliResult<Vec<_>>>()?;
    let lambda_sweep = cmd
        .lambda_sweep
        .iter()
        .map(|&l| run(spec.p_true, l))
        .collect::<CliResult<Vec<_>>>()?;

    let report = BenchReport {
        spec,
        train: config,
        parts_sweep,
        lambda_sweep,
        seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(path) = &cmd.out {
        let mut json = serde_json::to_vec_pretty(&report)?;
        json.push(b'\n');
        write_atomic(path, &json)?;
    }
    emit(&report)
}
