use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{DataMode, ExperimentConfig, ModelKind, Scheme};
use crate::aircomp::{aggregate, compute_stats, error_moments, Topology};
use crate::channel::{dbm_to_watts, sample_channels, sample_direct_channels, sample_ring_geometry, Geometry, PathLoss};
use crate::clustering::{agglomerate, cluster, select_leads, ClusterAssignment, LinkageParams, SimilarityLinkage};
use crate::convergence::{GapBound, GapBoundInputs, QuadraticProblem, RoundErrors};
use crate::data::{partition_data, BlobSpec, Dataset, Partition, PartitionMode};
use crate::error::{Error, Result};
use crate::model::{self, Architecture, Model};
use crate::power::{
    self, alternating_minimize, deviation_energy, initial_allocation, max_power_allocation, Coefficients, SolverOptions, SolverTrace,
};
use crate::rng::{Purpose, SeedTree};

/// One row of the metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Training loss of the model after the round's update.
    pub loss: f64,
    /// Held-out accuracy after the update; zero for the least-squares model.
    pub acc: f64,
    /// `‖E[ε]‖²` over receiver noise.
    pub bias_sq: f64,
    /// `E‖ε‖²` over receiver noise.
    pub mse: f64,
    /// Power-control objective with the learning weights.
    pub objective: f64,
    /// Discounted sum of the error terms of the gap bound so far.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub metrics: RoundMetrics,
    pub assignment: Option<ClusterAssignment>,
    pub trace: SolverTrace,
    /// Gradients that entered the over-the-air sum.
    pub transmitted: usize,
    /// Relative gap between the simulated error and its closed form.
    pub identity_gap: f64,
}

/// State of a running experiment: data, placement, model and random streams.
pub struct Experiment {
    config: ExperimentConfig,
    lr: f64,
    train: Dataset,
    test: Dataset,
    partition: Partition,
    geometry: Geometry,
    budgets: Vec<f64>,
    path_loss: PathLoss,
    noise_w: f64,
    linkage: LinkageParams,
    model: Model,
    quadratic: Option<QuadraticProblem>,
    assignment: Option<ClusterAssignment>,
    channel_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    batch_rngs: Vec<ChaCha8Rng>,
    bound: GapBound,
    delta_sq: Option<f64>,
    /// Importances of the current model, left over from the last loss pass.
    importances: Option<Vec<f64>>,
    round: usize,
}

fn synthetic(config: &ExperimentConfig, seeds: &SeedTree) -> Result<(Dataset, Dataset)> {
    let train_n = config.devices * config.samples_per_device;
    let total = (train_n as f64 / (1.0 - config.test_fraction)).round() as usize;
    let spec = BlobSpec {
        classes: config.classes,
        dim: config.features,
        spread: config.spread,
        anisotropy: config.anisotropy,
        samples: total,
        seed: seeds.stream(Purpose::Data).next_u64(),
        center_seed: config.task_seed,
    };
    let all = spec.generate()?;
    let tf = (total - train_n) as f64 / total as f64;
    Ok(all.split(tf, &mut seeds.substream(Purpose::Data, 1)))
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seeds = SeedTree::new(config.seed);
        let lr = config.learning_rate();
        let k = config.devices;

        let (train, test, partition, quadratic, arch, classes) = match config.model {
            ModelKind::Quadratic => {
                let p = QuadraticProblem::isotropic(
                    k,
                    config.samples_per_device,
                    config.features,
                    config.lipschitz,
                    config.label_noise,
                    &mut seeds.stream(Purpose::Data),
                )?;
                let test = p.data.clone();
                (p.data.clone(), test, p.partition.clone(), Some(p), Architecture::Quadratic, 1)
            }
            kind => {
                let (train, test) = match &config.idx_dir {
                    Some(dir) => crate::idx::load_dir(dir)?,
                    None => synthetic(&config, &seeds)?,
                };
                let mode = match config.data {
                    DataMode::Iid => PartitionMode::Iid,
                    DataMode::NonIid => PartitionMode::NonIid,
                };
                let partition = partition_data(&train, k, mode, &mut seeds.stream(Purpose::Partition))?;
                let arch = match kind {
                    ModelKind::Hidden { width } => Architecture::OneHiddenLayer { width },
                    _ => Architecture::SoftmaxRegression,
                };
                let classes = train.num_classes().ok_or(Error::NotProbabilistic)?;
                (train, test, partition, None, arch, classes)
            }
        };
        if let Some(&smallest) = partition.sizes().iter().min() {
            if config.batch > smallest {
                return Err(Error::BatchExceedsShard { batch: config.batch, shard: smallest });
            }
        }
        let model = Model::init(arch, train.dim(), classes, &mut seeds.stream(Purpose::Init));
        let geometry = sample_ring_geometry(k, config.ring_inner_m, config.ring_outer_m, &mut seeds.stream(Purpose::Geometry))?;
        let defaults = LinkageParams::scaled(&geometry, classes);
        let linkage =
            LinkageParams { rho: config.rho.unwrap_or(defaults.rho), rho1: config.rho1, rho2: config.rho2.unwrap_or(defaults.rho2) };
        let initial_gap = quadratic.as_ref().map_or(0.0, |p| p.gap(model.params()));
        let bound = GapBound::new(GapBoundInputs { lipschitz: config.lipschitz, lr, batch: config.batch, initial_gap })?;
        Ok(Self {
            lr,
            path_loss: PathLoss::from_db(config.omega0_db, config.kappa)?,
            noise_w: dbm_to_watts(config.noise_dbm),
            budgets: vec![config.power_w; k],
            batch_rngs: (0..k as u32).map(|i| seeds.substream(Purpose::Batching, i)).collect(),
            channel_rng: seeds.stream(Purpose::Channels),
            noise_rng: seeds.stream(Purpose::Noise),
            train,
            test,
            partition,
            geometry,
            linkage,
            model,
            quadratic,
            assignment: None,
            bound,
            delta_sq: None,
            importances: None,
            round: 0,
            config,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn linkage(&self) -> LinkageParams {
        self.linkage
    }

    pub fn quadratic(&self) -> Option<&QuadraticProblem> {
        self.quadratic.as_ref()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Average of the device losses.
    pub fn training_loss(&self) -> Result<f64> {
        Ok(self.evaluate_devices()?.0)
    }

    /// Average device loss and every device's data importance.
    fn evaluate_devices(&self) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut importances = Vec::with_capacity(self.partition.shards.len());
        for s in &self.partition.shards {
            let (loss, entropy) = model::evaluate(&self.model, &self.train.shard(s))?;
            total += loss;
            importances.push(entropy);
        }
        Ok((total / self.partition.shards.len() as f64, importances))
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        if !self.model.is_probabilistic() || self.test.is_empty() {
            return Ok(0.0);
        }
        model::accuracy(&self.model, &self.test.all())
    }

    pub fn initial_metrics(&self) -> Result<RoundMetrics> {
        Ok(RoundMetrics {
            round: 0,
            loss: self.training_loss()?,
            acc: self.test_accuracy()?,
            bias_sq: 0.0,
            mse: 0.0,
            objective: 0.0,
            bound: 0.0,
        })
    }

    fn importances(&mut self) -> Result<Vec<f64>> {
        match self.importances.take() {
            Some(v) => Ok(v),
            None => Ok(self.evaluate_devices()?.1),
        }
    }

    fn clusters_for(&mut self, importances: &[f64], gradients: &[Vec<f64>]) -> Result<ClusterAssignment> {
        let n = self.config.clusters;
        let round = self.round;
        let refresh = (round - 1).is_multiple_of(self.config.cluster_period);
        let reuse = |a: &ClusterAssignment| ClusterAssignment { round, ..a.clone() };
        let fresh = match (self.config.scheme, &self.assignment) {
            (Scheme::Static, Some(a)) => return Ok(reuse(a)),
            (_, Some(a)) if !refresh => return Ok(reuse(a)),
            (Scheme::Static, None) => {
                let flat = vec![0.0; self.config.devices];
                let groups = cluster(&self.geometry, &flat, n, 0.0)?;
                let leads = select_leads(&groups, &self.geometry, &flat, self.linkage.rho1, 0.0);
                ClusterAssignment { clusters: groups, leads, round }
            }
            (Scheme::Similarity, _) => {
                let (groups, _) = agglomerate(self.config.devices, n, &mut SimilarityLinkage::new(gradients))?;
                let leads = select_leads(&groups, &self.geometry, importances, self.linkage.rho1, self.linkage.rho2);
                ClusterAssignment { clusters: groups, leads, round }
            }
            _ => {
                let groups = cluster(&self.geometry, importances, n, self.linkage.rho)?;
                let leads = select_leads(&groups, &self.geometry, importances, self.linkage.rho1, self.linkage.rho2);
                ClusterAssignment { clusters: groups, leads, round }
            }
        };
        self.assignment = Some(fresh.clone());
        Ok(fresh)
    }

    /// Worst device's summed per-coordinate variance of single-sample gradients.
    fn sample_gradient_spread(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for s in &self.partition.shards {
            let shard = self.train.shard(s);
            let dim = self.model.dim();
            let (mut mean, mut sq) = (vec![0.0; dim], vec![0.0; dim]);
            for pos in 0..shard.len() {
                let g = self.model.sample_gradient(&shard, pos)?;
                for m in 0..dim {
                    mean[m] += g[m];
                    sq[m] += g[m] * g[m];
                }
            }
            let d = shard.len() as f64;
            let total: f64 = (0..dim).map(|m| (sq[m] / d - (mean[m] / d).powi(2)).max(0.0)).sum();
            worst = worst.max(total);
        }
        Ok(worst)
    }

    /// Runs one full training round.
    pub fn step(&mut self) -> Result<RoundRecord> {
        self.round += 1;
        let cfg = self.config.clone();

        let mut gradients = Vec::with_capacity(cfg.devices);
        for (s, rng) in self.partition.shards.iter().zip(self.batch_rngs.iter_mut()) {
            gradients.push(model::local_gradient(&self.model, &self.train.shard(s), cfg.batch, rng)?);
        }
        let stats = compute_stats(&gradients)?;
        let importances = self.importances()?;

        let (topo, assignment) = if cfg.scheme == Scheme::Direct {
            let gains = sample_direct_channels(&self.geometry, &self.path_loss, &mut self.channel_rng)?;
            (Topology::direct(&gains, &self.budgets, self.noise_w), None)
        } else {
            let a = self.clusters_for(&importances, &gradients)?;
            let chan = sample_channels(&self.geometry, &a, &self.path_loss, self.noise_w, &mut self.channel_rng)?;
            (Topology::two_tier(&chan, &self.budgets), Some(a))
        };

        let dim = self.model.dim();
        let energy = deviation_energy(&gradients, &stats);
        let learning = Coefficients::learning(self.lr, cfg.lipschitz, energy, dim, cfg.devices, stats.var);
        let opts = SolverOptions { max_iter: cfg.max_iter, tol: cfg.tol };
        let (alloc, trace) = if !(stats.var > 0.0) {
            (initial_allocation(&topo, &learning), SolverTrace::default())
        } else {
            match cfg.scheme {
                Scheme::MaxPower => (max_power_allocation(&topo, &learning), SolverTrace::default()),
                Scheme::Mse => {
                    let sol = alternating_minimize(&topo, &Coefficients::mse(energy, dim, stats.var), &opts, None)?;
                    (sol.alloc, sol.trace)
                }
                _ => {
                    let sol = alternating_minimize(&topo, &learning, &opts, None)?;
                    (sol.alloc, sol.trace)
                }
            }
        };

        let outcome = aggregate(&topo, &alloc, &gradients, &stats, &mut self.noise_rng)?;
        let moments = error_moments(&topo, &alloc, &gradients, &stats);
        let objective = power::objective(&topo, &alloc, &learning);

        let delta_sq = match &self.quadratic {
            Some(p) => p.delta_sq(self.model.params(), cfg.batch),
            None => match self.delta_sq {
                Some(d) => d,
                None => {
                    let d = self.sample_gradient_spread()?;
                    self.delta_sq = Some(d);
                    d
                }
            },
        };
        let bound = self.bound.push(&RoundErrors { delta_sq, bias_sq: moments.bias_sq, mse: moments.mse });

        self.model = model::global_update(&self.model, &outcome.estimate, self.lr)?;
        let (loss, importances) = self.evaluate_devices()?;
        self.importances = Some(importances);
        let metrics = RoundMetrics {
            round: self.round,
            loss,
            acc: self.test_accuracy()?,
            bias_sq: moments.bias_sq,
            mse: moments.mse,
            objective,
            bound,
        };
        Ok(RoundRecord { metrics, assignment, trace, transmitted: topo.transmitters(), identity_gap: outcome.identity_gap })
    }

    pub fn gap_bound(&self) -> f64 {
        self.bound.value()
    }
}

/// Metrics, assignments and solver traces of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub config: ExperimentConfig,
    pub initial: RoundMetrics,
    pub rounds: Vec<RoundMetrics>,
    pub assignments: Vec<ClusterAssignment>,
    pub traces: Vec<(usize, SolverTrace)>,
}

impl Report {
    /// Rows written to the metrics table: one per round, or the initial model
    /// alone when no round ran.
    pub fn rows(&self) -> Vec<RoundMetrics> {
        if self.rounds.is_empty() {
            vec![self.initial]
        } else {
            self.rounds.clone()
        }
    }

    /// Mean held-out accuracy over the last ten rounds.
    pub fn final_accuracy(&self) -> f64 {
        let rows = self.rows();
        let tail = &rows[rows.len().saturating_sub(10)..];
        tail.iter().map(|r| r.acc).sum::<f64>() / tail.len() as f64
    }

    pub fn final_loss(&self) -> f64 {
        self.rows().last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn summary(&self) -> Summary {
        Summary {
            scheme: self.config.scheme.name().to_string(),
            data: self.config.data,
            devices: self.config.devices,
            clusters: self.config.clusters,
            power_w: self.config.power_w,
            rounds: self.config.rounds,
            seed: self.config.seed,
            final_accuracy: self.final_accuracy(),
            final_loss: self.final_loss(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scheme: String,
    pub data: DataMode,
    pub devices: usize,
    pub clusters: usize,
    pub power_w: f64,
    pub rounds: usize,
    pub seed: u64,
    pub final_accuracy: f64,
    pub final_loss: f64,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let mut exp = Experiment::new(config.clone())?;
    let initial = exp.initial_metrics()?;
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut assignments = Vec::new();
    let mut traces = Vec::new();
    for _ in 0..config.rounds {
        let rec = exp.step()?;
        rounds.push(rec.metrics);
        if let Some(a) = rec.assignment {
            assignments.push(a);
        }
        traces.push((rec.metrics.round, rec.trace));
    }
    Ok(Report { config: config.clone(), initial, rounds, assignments, traces })
}
