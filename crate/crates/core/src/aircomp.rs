//! Gradient normalization and two-hop over-the-air aggregation.
//!
//! Subordinates transmit normalized gradients to their cluster lead, the leads
//! amplify-and-forward the superposition to the PS, and the PS rescales what it
//! receives back into gradient units. Leads relay only; their own gradients are
//! never transmitted.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};

/// Relative tolerance used when cross-checking the two error formulas.
pub const ERROR_IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientStats {
    pub device_means: Vec<f64>,
    pub device_vars: Vec<f64>,
    pub mean: f64,
    pub var: f64,
}

impl GradientStats {
    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn devices(&self) -> usize {
        self.device_means.len()
    }
}

/// Per-device mean and population variance over the `M` entries, and their
/// averages across devices.
pub fn compute_stats(gradients: &[Vec<f64>]) -> Result<GradientStats> {
    let first = gradients.first().ok_or(Error::NoGradients)?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    let mut device_means = Vec::with_capacity(gradients.len());
    let mut device_vars = Vec::with_capacity(gradients.len());
    for g in gradients {
        if g.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: g.len() });
        }
        let mean = g.iter().sum::<f64>() / dim as f64;
        let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / dim as f64;
        device_means.push(mean);
        device_vars.push(var);
    }
    let k = gradients.len() as f64;
    let mean = device_means.iter().sum::<f64>() / k;
    let var = device_vars.iter().sum::<f64>() / k;
    Ok(GradientStats { device_means, device_vars, mean, var })
}

/// `s[m] = (g[m] − ḡ)/ν` with the global statistics.
pub fn normalize(gradient: &[f64], stats: &GradientStats) -> Result<Vec<f64>> {
    let nu = stats.std();
    if !(nu > 0.0) {
        return Err(Error::DegenerateNormalization);
    }
    Ok(gradient.iter().map(|g| (g - stats.mean) / nu).collect())
}

pub fn denormalize(symbols: &[f64], stats: &GradientStats) -> Vec<f64> {
    let nu = stats.std();
    symbols.iter().map(|s| nu * s + stats.mean).collect()
}

/// A non-lead cluster member as seen by its lead.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub device: usize,
    pub gain: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub lead: usize,
    pub lead_gain: f64,
    pub lead_noise: f64,
    pub lead_budget: f64,
    pub members: Vec<Member>,
}

impl Cluster {
    /// Received signal power at the lead excluding noise, `Σ h'²α`.
    pub fn received_power(&self, alpha: &[f64]) -> f64 {
        self.members.iter().zip(alpha).map(|(m, a)| m.gain * m.gain * a).sum()
    }

    /// Largest forwarding gain the lead can afford for the given member powers.
    pub fn max_beta(&self, alpha: &[f64]) -> f64 {
        let load = self.received_power(alpha) + self.lead_noise;
        if load > 0.0 {
            self.lead_budget / load
        } else {
            f64::INFINITY
        }
    }

    pub fn lead_power(&self, alpha: &[f64], beta: f64) -> f64 {
        beta * (self.received_power(alpha) + self.lead_noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relay {
    /// Leads forward their members' superposition and drop their own gradient.
    TwoTier,
    /// Every device reaches the PS directly; modelled as a lossless,
    /// noiseless self-link with member power fixed at 1.
    Direct,
}

/// Everything the aggregation and the power solver need about one round's
/// links: clusters with amplitudes, noise powers and budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub clusters: Vec<Cluster>,
    pub ps_noise: f64,
    pub devices: usize,
    pub relay: Relay,
}

impl Topology {
    pub fn two_tier(chan: &ChannelRealization, budgets: &[f64]) -> Self {
        let clusters = chan
            .clusters
            .iter()
            .map(|c| Cluster {
                lead: c.lead,
                lead_gain: c.lead_gain,
                lead_noise: chan.lead_noise,
                lead_budget: budgets[c.lead],
                members: c.members.iter().map(|&(device, gain)| Member { device, gain, budget: budgets[device] }).collect(),
            })
            .collect();
        Self { clusters, ps_noise: chan.ps_noise, devices: budgets.len(), relay: Relay::TwoTier }
    }

    pub fn direct(ps_gains: &[f64], budgets: &[f64], ps_noise: f64) -> Self {
        let clusters = ps_gains
            .iter()
            .zip(budgets)
            .enumerate()
            .map(|(k, (&gain, &budget))| Cluster {
                lead: k,
                lead_gain: gain,
                lead_noise: 0.0,
                lead_budget: budget,
                members: vec![Member { device: k, gain: 1.0, budget: 1.0 }],
            })
            .collect();
        Self { clusters, ps_noise, devices: ps_gains.len(), relay: Relay::Direct }
    }

    /// Whether member powers are fixed rather than optimized.
    pub fn alpha_fixed(&self) -> bool {
        self.relay == Relay::Direct
    }

    /// Devices whose gradients never reach the PS.
    pub fn omitted(&self) -> Vec<usize> {
        match self.relay {
            Relay::TwoTier => self.clusters.iter().map(|c| c.lead).collect(),
            Relay::Direct => Vec::new(),
        }
    }

    pub fn transmitters(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }
}

/// Member powers `α` (per cluster, aligned with `members`), lead forwarding
/// gains `β`, and the PS de-noising factor `ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub zeta: f64,
}

impl PowerAllocation {
    /// `ζ h √β h' √α` for member `j` of cluster `n`.
    pub fn alignment(&self, topo: &Topology, n: usize, j: usize) -> f64 {
        let c = &topo.clusters[n];
        self.zeta * c.lead_gain * self.beta[n].sqrt() * c.members[j].gain * self.alpha[n][j].sqrt()
    }

    pub fn alignments(&self, topo: &Topology) -> Vec<f64> {
        let mut out = Vec::with_capacity(topo.transmitters());
        for (n, c) in topo.clusters.iter().enumerate() {
            for j in 0..c.members.len() {
                out.push(self.alignment(topo, n, j));
            }
        }
        out
    }

    /// `Σ_n h_n² β_n σ_n²`, the lead noise power arriving at the PS.
    pub fn forwarded_noise(&self, topo: &Topology) -> f64 {
        topo.clusters.iter().zip(&self.beta).map(|(c, b)| c.lead_gain * c.lead_gain * b * c.lead_noise).sum()
    }

    /// Exact check of every member and lead power constraint.
    pub fn check(&self, topo: &Topology) -> Result<()> {
        if self.alpha.len() != topo.clusters.len() || self.beta.len() != topo.clusters.len() {
            return Err(Error::DimensionMismatch { expected: topo.clusters.len(), got: self.beta.len() });
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::InvalidZeta(self.zeta));
        }
        for (n, c) in topo.clusters.iter().enumerate() {
            check_members(c, &self.alpha[n])?;
            check_lead(c, &self.alpha[n], self.beta[n])?;
        }
        Ok(())
    }
}

fn check_members(cluster: &Cluster, alpha: &[f64]) -> Result<()> {
    if alpha.len() != cluster.members.len() {
        return Err(Error::DimensionMismatch { expected: cluster.members.len(), got: alpha.len() });
    }
    for (m, &a) in cluster.members.iter().zip(alpha) {
        if !(a >= 0.0 && a <= m.budget) {
            return Err(Error::PowerConstraint { device: m.device, used: a, budget: m.budget });
        }
    }
    Ok(())
}

fn check_lead(cluster: &Cluster, alpha: &[f64], beta: f64) -> Result<()> {
    let used = cluster.lead_power(alpha, beta);
    if !(beta >= 0.0 && used <= cluster.lead_budget) {
        return Err(Error::PowerConstraint { device: cluster.lead, used, budget: cluster.lead_budget });
    }
    Ok(())
}

/// Receiver noise realizations for one round, kept so the error can be
/// recomputed on identical randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraws {
    pub lead: Vec<Vec<f64>>,
    pub ps: Vec<f64>,
}

impl NoiseDraws {
    pub fn sample<R: Rng + ?Sized>(topo: &Topology, dim: usize, rng: &mut R) -> Self {
        let mut draw = |var: f64| -> Vec<f64> {
            if var > 0.0 {
                let normal = Normal::new(0.0, var.sqrt()).expect("finite noise power");
                normal.sample_iter(&mut *rng).take(dim).collect()
            } else {
                vec![0.0; dim]
            }
        };
        let lead = topo.clusters.iter().map(|c| draw(c.lead_noise)).collect();
        let ps = draw(topo.ps_noise);
        Self { lead, ps }
    }

    pub fn zeros(topo: &Topology, dim: usize) -> Self {
        Self { lead: vec![vec![0.0; dim]; topo.clusters.len()], ps: vec![0.0; dim] }
    }
}

/// Signal received by a lead: `v = Σ h' √α s + z`. `symbols` is indexed by
/// device id.
pub fn intra_cluster_aggregate(cluster: &Cluster, alpha: &[f64], symbols: &[Vec<f64>], noise: &[f64]) -> Result<Vec<f64>> {
    check_members(cluster, alpha)?;
    let mut v = noise.to_vec();
    for (m, &a) in cluster.members.iter().zip(alpha) {
        let s = &symbols[m.device];
        if s.len() != v.len() {
            return Err(Error::DimensionMismatch { expected: v.len(), got: s.len() });
        }
        crate::model::axpy(m.gain * a.sqrt(), s, &mut v);
    }
    Ok(v)
}

/// Signal received by the PS: `v = Σ_n h_n √β_n v_n + z`.
pub fn inter_cluster_aggregate(
    topo: &Topology,
    alpha: &[Vec<f64>],
    beta: &[f64],
    lead_signals: &[Vec<f64>],
    noise: &[f64],
) -> Result<Vec<f64>> {
    let mut v = noise.to_vec();
    for (n, c) in topo.clusters.iter().enumerate() {
        check_lead(c, &alpha[n], beta[n])?;
        if lead_signals[n].len() != v.len() {
            return Err(Error::DimensionMismatch { expected: v.len(), got: lead_signals[n].len() });
        }
        crate::model::axpy(c.lead_gain * beta[n].sqrt(), &lead_signals[n], &mut v);
    }
    Ok(v)
}

/// De-noise and de-normalize: `g̃ = ν (ζ/K) v + ḡ`.
pub fn estimate_global(ps_signal: &[f64], stats: &GradientStats, zeta: f64, devices: usize) -> Result<Vec<f64>> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::InvalidZeta(zeta));
    }
    let scale = stats.std() * zeta / devices as f64;
    Ok(ps_signal.iter().map(|v| scale * v + stats.mean).collect())
}

pub fn mean_gradient(gradients: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; gradients[0].len()];
    let w = 1.0 / gradients.len() as f64;
    for g in gradients {
        crate::model::axpy(w, g, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub estimate: Vec<f64>,
    pub ideal: Vec<f64>,
    pub error: Vec<f64>,
    pub noise: NoiseDraws,
    /// See [`identity_gap`]; zero when nothing was transmitted.
    pub identity_gap: f64,
}

/// Runs both hops and the PS post-processing for one round, then cross-checks
/// the error against its closed form. With zero gradient spread nothing is
/// transmitted and the PS uses `ḡ` directly.
pub fn aggregate<R: Rng + ?Sized>(
    topo: &Topology,
    alloc: &PowerAllocation,
    gradients: &[Vec<f64>],
    stats: &GradientStats,
    rng: &mut R,
) -> Result<AggregationOutcome> {
    let dim = gradients.first().ok_or(Error::NoGradients)?.len();
    let ideal = mean_gradient(gradients);
    if !(stats.var > 0.0) {
        let estimate = vec![stats.mean; dim];
        let error = estimate.iter().zip(&ideal).map(|(a, b)| a - b).collect();
        return Ok(AggregationOutcome { estimate, ideal, error, noise: NoiseDraws::zeros(topo, dim), identity_gap: 0.0 });
    }
    let noise = NoiseDraws::sample(topo, dim, rng);
    let estimate = transmit(topo, alloc, gradients, stats, &noise)?;
    let identity_gap = identity_gap(topo, alloc, gradients, stats, &noise, &estimate);
    if !(identity_gap <= ERROR_IDENTITY_TOL) {
        return Err(Error::ErrorIdentity(identity_gap));
    }
    let error = estimate.iter().zip(&ideal).map(|(a, b)| a - b).collect();
    Ok(AggregationOutcome { estimate, ideal, error, noise, identity_gap })
}

/// The PS estimate for given noise realizations.
pub fn transmit(
    topo: &Topology,
    alloc: &PowerAllocation,
    gradients: &[Vec<f64>],
    stats: &GradientStats,
    noise: &NoiseDraws,
) -> Result<Vec<f64>> {
    alloc.check(topo)?;
    let mut symbols = vec![Vec::new(); gradients.len()];
    for c in &topo.clusters {
        for m in &c.members {
            symbols[m.device] = normalize(&gradients[m.device], stats)?;
        }
    }
    let lead_signals = topo
        .clusters
        .iter()
        .enumerate()
        .map(|(n, c)| intra_cluster_aggregate(c, &alloc.alpha[n], &symbols, &noise.lead[n]))
        .collect::<Result<Vec<_>>>()?;
    let v = inter_cluster_aggregate(topo, &alloc.alpha, &alloc.beta, &lead_signals, &noise.ps)?;
    estimate_global(&v, stats, alloc.zeta, topo.devices)
}

/// Closed-form error: misalignment of every transmitted centered gradient,
/// forwarded lead noise, PS noise, and the centered gradients that were never
/// sent.
pub fn closed_form_error(
    topo: &Topology,
    alloc: &PowerAllocation,
    gradients: &[Vec<f64>],
    stats: &GradientStats,
    noise: &NoiseDraws,
) -> Vec<f64> {
    let k = topo.devices as f64;
    let dim = gradients[0].len();
    let mut eps = error_mean(topo, alloc, gradients, stats);
    let zn = alloc.zeta * stats.std() / k;
    for (n, c) in topo.clusters.iter().enumerate() {
        crate::model::axpy(zn * c.lead_gain * alloc.beta[n].sqrt(), &noise.lead[n], &mut eps);
    }
    crate::model::axpy(zn, &noise.ps, &mut eps);
    debug_assert_eq!(eps.len(), dim);
    eps
}

/// Noise-free part of the error, which is also its expectation over noise.
pub fn error_mean(topo: &Topology, alloc: &PowerAllocation, gradients: &[Vec<f64>], stats: &GradientStats) -> Vec<f64> {
    let k = topo.devices as f64;
    let mut eps = vec![0.0; gradients[0].len()];
    let add_centered = |device: usize, weight: f64, eps: &mut Vec<f64>| {
        for (e, g) in eps.iter_mut().zip(&gradients[device]) {
            *e += weight * (g - stats.mean);
        }
    };
    for (n, c) in topo.clusters.iter().enumerate() {
        for (j, m) in c.members.iter().enumerate() {
            add_centered(m.device, (alloc.alignment(topo, n, j) - 1.0) / k, &mut eps);
        }
    }
    for d in topo.omitted() {
        add_centered(d, -1.0 / k, &mut eps);
    }
    eps
}

/// Largest entrywise gap between the directly computed error and its closed
/// form, relative to `1 + max |entry|` of the estimate and the ideal mean.
pub fn identity_gap(
    topo: &Topology,
    alloc: &PowerAllocation,
    gradients: &[Vec<f64>],
    stats: &GradientStats,
    noise: &NoiseDraws,
    estimate: &[f64],
) -> f64 {
    let ideal = mean_gradient(gradients);
    let closed = closed_form_error(topo, alloc, gradients, stats, noise);
    let scale = 1.0 + estimate.iter().chain(&ideal).fold(0.0f64, |m, x| m.max(x.abs()));
    let gap = estimate.iter().zip(&ideal).zip(&closed).fold(0.0f64, |m, ((e, i), c)| m.max((e - i - c).abs()));
    gap / scale
}

/// `g̃ − (1/K)Σ g_k`, verified against [`closed_form_error`].
pub fn aggregation_error(
    topo: &Topology,
    alloc: &PowerAllocation,
    gradients: &[Vec<f64>],
    stats: &GradientStats,
    noise: &NoiseDraws,
    estimate: &[f64],
) -> Result<Vec<f64>> {
    let gap = identity_gap(topo, alloc, gradients, stats, noise, estimate);
    if !(gap <= ERROR_IDENTITY_TOL) {
        return Err(Error::ErrorIdentity(gap));
    }
    let ideal = mean_gradient(gradients);
    Ok(estimate.iter().zip(&ideal).map(|(a, b)| a - b).collect())
}

/// Exact first and second moments of the error over receiver noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMoments {
    pub mean: Vec<f64>,
    /// `‖E[ε]‖²`
    pub bias_sq: f64,
    /// `E‖ε‖²`
    pub mse: f64,
}

pub fn error_moments(topo: &Topology, alloc: &PowerAllocation, gradients: &[Vec<f64>], stats: &GradientStats) -> ErrorMoments {
    let mean = if stats.var > 0.0 {
        error_mean(topo, alloc, gradients, stats)
    } else {
        let ideal = mean_gradient(gradients);
        ideal.iter().map(|g| stats.mean - g).collect()
    };
    let bias_sq = mean.iter().map(|x| x * x).sum::<f64>();
    let noise = if stats.var > 0.0 {
        let zn = alloc.zeta * stats.std() / topo.devices as f64;
        zn * zn * mean.len() as f64 * (alloc.forwarded_noise(topo) + topo.ps_noise)
    } else {
        0.0
    };
    ErrorMoments { mean, bias_sq, mse: bias_sq + noise }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn stats_examples() {
        let s = compute_stats(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.var - 2.0 / 3.0).abs() < 1e-15);
        let c = compute_stats(&[vec![4.0; 5]]).unwrap();
        assert_eq!(c.device_vars[0], 0.0);
        let two = compute_stats(&[vec![-1.0, 1.0], vec![-3f64.sqrt(), 3f64.sqrt()]]).unwrap();
        assert!((two.var - 2.0).abs() < 1e-12);
        assert!(matches!(compute_stats(&[]), Err(Error::NoGradients)));
    }

    #[test]
    fn normalize_examples() {
        let s = compute_stats(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let n = normalize(&[1.0, 2.0, 3.0], &s).unwrap();
        assert!(close(&n, &[-1.224744871391589, 0.0, 1.224744871391589], 1e-12));
        assert!(close(&normalize(&[2.0, 2.0], &s).unwrap(), &[0.0, 0.0], 0.0));
        assert!(close(&denormalize(&n, &s), &[1.0, 2.0, 3.0], 1e-12));
        let flat = compute_stats(&[vec![1.0; 3]]).unwrap();
        assert!(matches!(normalize(&[1.0; 3], &flat), Err(Error::DegenerateNormalization)));
    }

    fn one_cluster(gains: &[f64], noise: f64) -> Cluster {
        Cluster {
            lead: 0,
            lead_gain: 1.0,
            lead_noise: noise,
            lead_budget: 1e9,
            members: gains.iter().enumerate().map(|(i, &g)| Member { device: i + 1, gain: g, budget: 1e9 }).collect(),
        }
    }

    #[test]
    fn intra_examples() {
        let c = one_cluster(&[1.0], 0.0);
        let symbols = vec![vec![], vec![1.0, -1.0]];
        assert_eq!(intra_cluster_aggregate(&c, &[1.0], &symbols, &[0.0, 0.0]).unwrap(), vec![1.0, -1.0]);

        let c = one_cluster(&[0.5, 0.25], 0.0);
        let s = vec![0.3, -0.7];
        let symbols = vec![vec![], s.clone(), s.clone()];
        let v = intra_cluster_aggregate(&c, &[1.0, 4.0], &symbols, &[0.0, 0.0]).unwrap();
        assert!(close(&v, &s, 1e-15));

        let c = one_cluster(&[1.0, 1.0], 0.5);
        let topo = Topology { clusters: vec![c.clone()], ps_noise: 0.0, devices: 3, relay: Relay::TwoTier };
        let noise = NoiseDraws::sample(&topo, 10_000, &mut ChaCha8Rng::seed_from_u64(1));
        let symbols = vec![vec![], vec![1.0; 10_000], vec![1.0; 10_000]];
        let v = intra_cluster_aggregate(&c, &[0.0, 0.0], &symbols, &noise.lead[0]).unwrap();
        let var = v.iter().map(|x| x * x).sum::<f64>() / 1e4;
        assert!((var / 0.5 - 1.0).abs() < 0.05);

        let tight = Cluster { members: vec![Member { device: 1, gain: 1.0, budget: 0.5 }], ..c };
        assert!(matches!(intra_cluster_aggregate(&tight, &[0.6], &symbols, &[0.0; 10_000]), Err(Error::PowerConstraint { device: 1, .. })));
    }

    #[test]
    fn inter_examples() {
        let c = one_cluster(&[1.0], 0.0);
        let topo = Topology {
            clusters: vec![c.clone(), Cluster { lead: 2, ..one_cluster(&[1.0], 0.0) }],
            ps_noise: 0.0,
            devices: 4,
            relay: Relay::TwoTier,
        };
        let alpha = vec![vec![1.0], vec![1.0]];
        let s = vec![1.0, -1.0];
        let v = inter_cluster_aggregate(&topo, &alpha, &[0.25, 0.25], &[s.clone(), s.clone()], &[0.0, 0.0]).unwrap();
        assert!(close(&v, &s, 1e-15));
        let mut over = topo.clone();
        over.clusters[0].lead_budget = 0.1;
        assert!(inter_cluster_aggregate(&over, &alpha, &[0.25, 0.25], &[s.clone(), s], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn estimate_examples() {
        let s = GradientStats { device_means: vec![2.0], device_vars: vec![1.0], mean: 2.0, var: 1.0 };
        assert_eq!(estimate_global(&[0.0; 3], &s, 1.0, 1).unwrap(), vec![2.0; 3]);
        let s = GradientStats { device_means: vec![0.0; 4], device_vars: vec![1.0; 4], mean: 0.0, var: 1.0 };
        assert_eq!(estimate_global(&[1.5, -2.0], &s, 4.0, 4).unwrap(), vec![1.5, -2.0]);
        assert!(matches!(estimate_global(&[1.0], &s, 0.0, 4), Err(Error::InvalidZeta(_))));
    }

    /// One cluster: lead 0, subordinate 1.
    fn pair() -> (Topology, Vec<Vec<f64>>) {
        let c = Cluster {
            lead: 0,
            lead_gain: 0.5,
            lead_noise: 0.0,
            lead_budget: 100.0,
            members: vec![Member { device: 1, gain: 2.0, budget: 100.0 }],
        };
        let topo = Topology { clusters: vec![c], ps_noise: 0.0, devices: 2, relay: Relay::TwoTier };
        (topo, vec![vec![1.0, 3.0, -2.0], vec![0.5, 4.0, 1.5]])
    }

    #[test]
    fn perfect_alignment_leaves_only_lead_omission() {
        let (topo, grads) = pair();
        let stats = compute_stats(&grads).unwrap();
        // ζ·0.5·√β·2·√α = 1 with α = 1, β = 4, ζ = 0.5.
        let alloc = PowerAllocation { alpha: vec![vec![1.0]], beta: vec![4.0], zeta: 0.5 };
        let out = aggregate(&topo, &alloc, &grads, &stats, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // Hand expansion: g̃ = (1/2)(g₁ − ḡ) + ḡ.
        let expected: Vec<f64> = grads[1].iter().map(|g| 0.5 * (g - stats.mean) + stats.mean).collect();
        assert!(close(&out.estimate, &expected, 1e-12));
        let omission: Vec<f64> = grads[0].iter().map(|g| -(g - stats.mean) / 2.0).collect();
        assert!(close(&out.error, &omission, 1e-12));
    }

    #[test]
    fn identical_gradients_have_no_error() {
        let c = one_cluster(&[1.0], 0.0);
        let topo = Topology { clusters: vec![c], ps_noise: 0.0, devices: 2, relay: Relay::TwoTier };
        let alloc = PowerAllocation { alpha: vec![vec![1.0]], beta: vec![1.0], zeta: 2.0 };
        let flat = vec![vec![3.0; 4], vec![3.0; 4]];
        let stats = compute_stats(&flat).unwrap();
        let out = aggregate(&topo, &alloc, &flat, &stats, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.estimate, vec![3.0; 4]);
        assert!(out.error.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn silent_transmitters_leave_noise_and_full_omission() {
        let (mut topo, grads) = pair();
        topo.ps_noise = 0.3;
        let stats = compute_stats(&grads).unwrap();
        let alloc = PowerAllocation { alpha: vec![vec![0.0]], beta: vec![0.0], zeta: 1.5 };
        let out = aggregate(&topo, &alloc, &grads, &stats, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let k = 2.0;
        for m in 0..3 {
            let centered: f64 = grads.iter().map(|g| g[m] - stats.mean).sum();
            let expected = -centered / k + 1.5 * stats.std() / k * out.noise.ps[m];
            assert!((out.error[m] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_topology_with_inversion_is_exact() {
        let gains = [0.3, 1.2, 0.7];
        let topo = Topology::direct(&gains, &[10.0; 3], 0.0);
        let grads = vec![vec![1.0, -1.0, 0.5], vec![2.0, 0.0, 0.1], vec![-0.5, 0.25, 3.0]];
        let stats = compute_stats(&grads).unwrap();
        let zeta = 2.0;
        let beta = gains.iter().map(|h| (1.0 / (zeta * h)).powi(2)).collect();
        let alloc = PowerAllocation { alpha: vec![vec![1.0]; 3], beta, zeta };
        let out = aggregate(&topo, &alloc, &grads, &stats, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(close(&out.estimate, &mean_gradient(&grads), 1e-9));
    }

    #[test]
    fn moments_without_noise_are_deterministic() {
        let (topo, grads) = pair();
        let stats = compute_stats(&grads).unwrap();
        let alloc = PowerAllocation { alpha: vec![vec![0.7]], beta: vec![2.0], zeta: 0.9 };
        let out = aggregate(&topo, &alloc, &grads, &stats, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let m = error_moments(&topo, &alloc, &grads, &stats);
        assert!(close(&m.mean, &out.error, 1e-12));
        assert!((m.mse - m.bias_sq).abs() < 1e-15);
    }
}
