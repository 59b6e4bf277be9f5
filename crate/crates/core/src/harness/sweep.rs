use serde::Serialize;

use super::config::{ExperimentConfig, Sweep, CLUSTER_SWEEP, POWER_SWEEP};
use super::experiment::{run_experiment, Summary};
use crate::error::Result;

/// Accuracy statistics of one configuration over consecutive seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: Vec<Summary>,
    pub mean_accuracy: f64,
    /// Sample standard deviation across seeds; zero for a single run.
    pub std_accuracy: f64,
}

/// Runs `config` with seeds `seed, seed + 1, …` and summarizes accuracy.
pub fn run_repeats(config: &ExperimentConfig, repeats: usize) -> Result<Aggregate> {
    let mut runs = Vec::with_capacity(repeats);
    for r in 0..repeats.max(1) {
        let cfg = ExperimentConfig { seed: config.seed + r as u64, ..config.clone() };
        runs.push(run_experiment(&cfg)?.summary());
    }
    let acc: Vec<f64> = runs.iter().map(|s| s.final_accuracy).collect();
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let std = if acc.len() > 1 { (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    Ok(Aggregate { runs, mean_accuracy: mean, std_accuracy: std })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    #[serde(flatten)]
    pub result: Aggregate,
}

pub fn sweep_values(sweep: Sweep) -> Vec<f64> {
    match sweep {
        Sweep::Clusters => CLUSTER_SWEEP.iter().map(|&n| n as f64).collect(),
        Sweep::Power => POWER_SWEEP.to_vec(),
    }
}

pub fn apply_sweep_value(config: &ExperimentConfig, sweep: Sweep, value: f64) -> ExperimentConfig {
    match sweep {
        Sweep::Clusters => ExperimentConfig { clusters: value as usize, ..config.clone() },
        Sweep::Power => ExperimentConfig { power_w: value, ..config.clone() },
    }
}

pub fn run_sweep(config: &ExperimentConfig, sweep: Sweep, values: &[f64], repeats: usize) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|&value| {
            let cfg = apply_sweep_value(config, sweep, value);
            Ok(SweepPoint { value, result: run_repeats(&cfg, repeats)? })
        })
        .collect()
}
