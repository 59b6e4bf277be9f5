//! End-to-end training runs: data, placement, per-round clustering, power
//! control and over-the-air aggregation, with the comparison schemes and
//! parameter sweeps.

pub mod config;
pub mod experiment;
pub mod output;
pub mod sweep;

pub use config::{DataMode, ExperimentConfig, ModelKind, Scheme, Sweep};
pub use experiment::{run_experiment, Experiment, Report, RoundMetrics, RoundRecord, Summary};
pub use sweep::{run_repeats, run_sweep, sweep_values, Aggregate, SweepPoint};
