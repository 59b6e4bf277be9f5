//! Optimality-gap bound for SGD with a noisy aggregated gradient, and an exactly
//! solvable least-squares problem on which it can be checked.
//!
//! The per-round recursion behind the bound lower-bounds `‖∇F‖²` by
//! `2L(F − F*)` with the smoothness constant itself, which only holds when the
//! loss curvature equals `L` in every direction. [`QuadraticProblem::isotropic`]
//! builds such a problem by whitening the design matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{partition_data, Dataset, Partition, PartitionMode, Targets};
use crate::error::{Error, Result};

/// `η = 2L²γ² − Lγ + 1`, the per-round contraction of the gap.
pub fn contraction(lipschitz: f64, lr: f64) -> Result<f64> {
    if !(lipschitz > 0.0 && lr > 0.0 && lr < 1.0 / (2.0 * lipschitz)) {
        return Err(Error::LearningRatePremise { lr, lipschitz });
    }
    Ok(2.0 * lipschitz * lipschitz * lr * lr - lipschitz * lr + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapBoundInputs {
    pub lipschitz: f64,
    pub lr: f64,
    pub batch: usize,
    /// `F(w¹) − F*`.
    pub initial_gap: f64,
}

/// Error statistics of one round.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundErrors {
    /// `‖δ‖²`, the mini-batch gradient variance bound scaled by the batch size.
    pub delta_sq: f64,
    /// `‖E[ε]‖²`
    pub bias_sq: f64,
    /// `E‖ε‖²`
    pub mse: f64,
}

/// Running evaluation of the bound, one round at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct GapBound {
    inputs: GapBoundInputs,
    eta: f64,
    decay: f64,
    accumulated: f64,
    rounds: usize,
}

impl GapBound {
    pub fn new(inputs: GapBoundInputs) -> Result<Self> {
        if inputs.batch == 0 {
            return Err(Error::ZeroBatch);
        }
        let eta = contraction(inputs.lipschitz, inputs.lr)?;
        Ok(Self { inputs, eta, decay: 1.0, accumulated: 0.0, rounds: 0 })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Contribution of one round before discounting.
    pub fn round_term(&self, e: &RoundErrors) -> f64 {
        let GapBoundInputs { lipschitz: l, lr, batch, .. } = self.inputs;
        l * lr * lr / batch as f64 * e.delta_sq + lr / 2.0 * e.bias_sq + l * lr * lr * e.mse
    }

    /// Adds a round and returns the discounted sum of the error terms so far.
    pub fn push(&mut self, e: &RoundErrors) -> f64 {
        self.accumulated = self.eta * self.accumulated + self.round_term(e);
        self.decay *= self.eta;
        self.rounds += 1;
        self.accumulated
    }

    /// Error-driven part of the bound after the rounds pushed so far.
    pub fn accumulated(&self) -> f64 {
        self.accumulated
    }

    /// Bound on `E[F(w^{T+1})] − F*` after `T` pushed rounds.
    pub fn value(&self) -> f64 {
        self.decay * self.inputs.initial_gap + self.accumulated
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }
}

pub fn gap_bound(inputs: GapBoundInputs, rounds: &[RoundErrors]) -> Result<f64> {
    let mut b = GapBound::new(inputs)?;
    for r in rounds {
        b.push(r);
    }
    Ok(b.value())
}

/// Least squares `½(w·x − y)²` spread over devices, with known curvature and
/// minimizer.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub data: Dataset,
    pub partition: Partition,
    pub lipschitz: f64,
    pub optimum: Vec<f64>,
    pub optimal_loss: f64,
}

impl QuadraticProblem {
    /// Gaussian design whitened so that `(1/n) Σ x xᵀ = L·I`, targets from a
    /// random linear model plus Gaussian noise of standard deviation
    /// `noise_std`, dealt i.i.d. to `devices` equal shards.
    pub fn isotropic<R: Rng + ?Sized>(
        devices: usize,
        per_device: usize,
        dim: usize,
        lipschitz: f64,
        noise_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = devices * per_device;
        if n <= dim || dim == 0 {
            return Err(Error::Config(format!("need more than {dim} samples, have {n}")));
        }
        if !(lipschitz > 0.0) {
            return Err(Error::Config("curvature must be positive".into()));
        }
        let raw = DMatrix::<f64>::from_fn(n, dim, |_, _| rng.sample(StandardNormal));
        let second = raw.transpose() * &raw / n as f64;
        let chol = second.cholesky().ok_or_else(|| Error::Config("singular design".into()))?;
        // X L⁻ᵀ has identity second moment.
        let l_inv = chol.l().try_inverse().ok_or_else(|| Error::Config("singular design".into()))?;
        let x = &raw * l_inv.transpose() * lipschitz.sqrt();
        let truth = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let y = &x * &truth + DVector::<f64>::from_fn(n, |_, _| noise_std * rng.sample::<f64, _>(StandardNormal));

        let gram = x.transpose() * &x;
        let optimum = gram.cholesky().ok_or_else(|| Error::Config("singular design".into()))?.solve(&(x.transpose() * &y));
        let inputs: Vec<f64> = (0..n).flat_map(|i| x.row(i).iter().copied().collect::<Vec<_>>()).collect();
        let data = Dataset::regression(inputs, dim, y.iter().copied().collect())?;
        let partition = partition_data(&data, devices, PartitionMode::Iid, rng)?;
        let mut problem = Self { data, partition, lipschitz, optimum: optimum.iter().copied().collect(), optimal_loss: 0.0 };
        problem.optimal_loss = problem.loss(&problem.optimum);
        Ok(problem)
    }

    fn targets(&self) -> &[f64] {
        match self.data.targets() {
            Targets::Real(t) => t,
            Targets::Classes { .. } => unreachable!("regression data"),
        }
    }

    fn residual(&self, w: &[f64], row: usize) -> f64 {
        crate::model::dot(w, self.data.input(row)) - self.targets()[row]
    }

    /// Global loss: the average of the device losses.
    pub fn loss(&self, w: &[f64]) -> f64 {
        let k = self.partition.shards.len() as f64;
        self.partition
            .shards
            .iter()
            .map(|s| s.iter().map(|&r| 0.5 * self.residual(w, r).powi(2)).sum::<f64>() / s.len() as f64)
            .sum::<f64>()
            / k
    }

    fn device_gradient(&self, w: &[f64], shard: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        for &r in shard {
            crate::model::axpy(self.residual(w, r) / shard.len() as f64, self.data.input(r), &mut g);
        }
        g
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let k = self.partition.shards.len() as f64;
        let mut g = vec![0.0; w.len()];
        for s in &self.partition.shards {
            crate::model::axpy(1.0 / k, &self.device_gradient(w, s), &mut g);
        }
        g
    }

    pub fn gap(&self, w: &[f64]) -> f64 {
        self.loss(w) - self.optimal_loss
    }

    /// `‖δ‖²` at `w`: per coordinate, `batch` times the largest (over devices)
    /// mean squared deviation of a without-replacement mini-batch gradient from
    /// the global gradient.
    pub fn delta_sq(&self, w: &[f64], batch: usize) -> f64 {
        let k = self.partition.shards.len() as f64;
        let mut residuals = Vec::with_capacity(self.partition.shards.len());
        let mut locals = Vec::with_capacity(self.partition.shards.len());
        let mut global = vec![0.0; w.len()];
        // Same arithmetic as `device_gradient` and `gradient`, one residual pass.
        for s in &self.partition.shards {
            let r: Vec<f64> = s.iter().map(|&row| self.residual(w, row)).collect();
            let mut local = vec![0.0; w.len()];
            for (&row, &res) in s.iter().zip(&r) {
                crate::model::axpy(res / s.len() as f64, self.data.input(row), &mut local);
            }
            crate::model::axpy(1.0 / k, &local, &mut global);
            residuals.push(r);
            locals.push(local);
        }
        let mut worst = vec![0.0f64; w.len()];
        for ((s, r), local) in self.partition.shards.iter().zip(&residuals).zip(&locals) {
            let d = s.len() as f64;
            let mut var = vec![0.0; w.len()];
            for (&row, &res) in s.iter().zip(r) {
                for (m, x) in self.data.input(row).iter().enumerate() {
                    var[m] += (res * x - local[m]).powi(2) / d;
                }
            }
            let shrink = if s.len() > 1 { (d - batch as f64) / (d - 1.0) } else { 0.0 };
            for m in 0..w.len() {
                let e = var[m] / batch as f64 * shrink + (local[m] - global[m]).powi(2);
                worst[m] = worst[m].max(e);
            }
        }
        batch as f64 * worst.iter().sum::<f64>()
    }
}

/// Checks `‖∇F(w)‖² ≤ 2L (F(w) − F*)` up to rounding.
pub fn curvature_premise_holds(problem: &QuadraticProblem, w: &[f64]) -> bool {
    let g = problem.gradient(w);
    let lhs = crate::model::dot(&g, &g);
    let l2 = 2.0 * problem.lipschitz;
    let rhs = l2 * problem.gap(w) * (1.0 + 1e-9) + l2 * 1e-14 * (1.0 + problem.optimal_loss.abs());
    lhs <= rhs
}
