#![allow(dead_code)]

use rand::Rng;
use twotier::aircomp::{compute_stats, error_mean, mean_gradient, transmit, Cluster, Member, NoiseDraws, PowerAllocation, Relay, Topology};
use twotier::channel::{sample_channels, sample_ring_geometry, Geometry, PathLoss};
use twotier::clustering::{cluster, select_leads, ClusterAssignment};
use twotier::power::{bias_bound, deviation_energy, mse_bound, noise_energy, Coefficients};

/// Ring placement, minimax clusters and fading links at the default physical
/// scale, with learning weights drawn over a few decades.
pub fn physical_instance<R: Rng>(rng: &mut R, devices: usize, clusters: usize) -> (Topology, Coefficients) {
    let geometry = sample_ring_geometry(devices, 150.0, 200.0, rng).unwrap();
    let groups = cluster(&geometry, &vec![0.0; devices], clusters, 0.0).unwrap();
    let leads = select_leads(&groups, &geometry, &vec![0.0; devices], 0.5, 0.0);
    let assignment = ClusterAssignment { clusters: groups, leads, round: 1 };
    let path_loss = PathLoss::from_db(-37.0, 3.5).unwrap();
    let chan = sample_channels(&geometry, &assignment, &path_loss, 1e-11, rng).unwrap();
    let budget = 10f64.powf(rng.random_range(-1.5..0.0));
    let topo = Topology::two_tier(&chan, &vec![budget; devices]);
    (topo, learning_weights(rng, devices))
}

pub fn learning_weights<R: Rng>(rng: &mut R, devices: usize) -> Coefficients {
    let dim = rng.random_range(50..500);
    let nu_sq = 10f64.powf(rng.random_range(-4.0..-1.0));
    let spread = (devices * dim) as f64 * nu_sq * rng.random_range(0.5..2.0);
    let lr = 10f64.powf(rng.random_range(-3.5..-2.0));
    Coefficients::learning(lr, 10.0, spread, dim, devices, nu_sq)
}

/// Order-one gains, budgets and noise on a random partition.
pub fn unit_instance<R: Rng>(rng: &mut R, devices: usize, clusters: usize) -> (Topology, Coefficients) {
    let mut ids: Vec<usize> = (0..devices).collect();
    for i in (1..devices).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let mut groups: Vec<Vec<usize>> = ids[..clusters].iter().map(|&d| vec![d]).collect();
    for &d in &ids[clusters..] {
        let g = rng.random_range(0..clusters);
        groups[g].push(d);
    }
    let lead_noise = rng.random_range(0.0..0.5);
    let clusters = groups
        .iter()
        .map(|g| Cluster {
            lead: g[0],
            lead_gain: rng.random_range(0.2..2.0),
            lead_noise,
            lead_budget: rng.random_range(0.5..5.0),
            members: g[1..]
                .iter()
                .map(|&d| Member { device: d, gain: rng.random_range(0.05..2.0), budget: rng.random_range(0.1..3.0) })
                .collect(),
        })
        .collect();
    let topo = Topology { clusters, ps_noise: rng.random_range(0.0..0.5), devices, relay: Relay::TwoTier };
    let coeffs = Coefficients { c1: rng.random_range(0.1..2.0), c2: rng.random_range(0.01..1.0), nu_sq: rng.random_range(0.1..2.0) };
    (topo, coeffs)
}

pub fn random_instance<R: Rng>(rng: &mut R, max_devices: usize, max_clusters: usize) -> (Topology, Coefficients) {
    let devices = rng.random_range(2..=max_devices);
    let clusters = rng.random_range(1..=max_clusters.min(devices));
    if rng.random_bool(0.5) {
        physical_instance(rng, devices, clusters)
    } else {
        unit_instance(rng, devices, clusters)
    }
}

/// Minimizer of a convex function on `[lo, hi]` by golden-section search.
pub fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    [(x1, f1), (x2, f2), (lo, f(lo)), (hi, f(hi))].into_iter().fold((f64::NAN, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
}

/// Euclidean projection onto `{0 ≤ x ≤ upper} ∩ {‖x‖ ≤ radius}` by Dykstra's
/// alternating projections.
pub fn project_box_ball(y: &[f64], upper: &[f64], radius: f64) -> Vec<f64> {
    let n = y.len();
    let mut x = y.to_vec();
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..10_000 {
        let z: Vec<f64> = (0..n).map(|i| (x[i] + p[i]).clamp(0.0, upper[i])).collect();
        for i in 0..n {
            p[i] += x[i] - z[i];
        }
        let w: Vec<f64> = (0..n).map(|i| z[i] + q[i]).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let next: Vec<f64> = if norm > radius { w.iter().map(|v| v * radius / norm).collect() } else { w.clone() };
        for i in 0..n {
            q[i] = w[i] - next[i];
        }
        let change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if change < 1e-15 {
            break;
        }
    }
    x
}

/// Minimum of `Σ (a − 1)²` over the box and ball by projected gradient.
fn misalignment_floor(upper: &[f64], radius: f64) -> f64 {
    let mut a = vec![0.0; upper.len()];
    let step = 0.5;
    for _ in 0..50 {
        let trial: Vec<f64> = a.iter().map(|x| x - step * 2.0 * (x - 1.0)).collect();
        let next = project_box_ball(&trial, upper, radius);
        let change = next.iter().zip(&a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        a = next;
        if change < 1e-15 {
            break;
        }
    }
    a.iter().map(|x| (x - 1.0).powi(2)).sum()
}

/// Optimal power-control objective computed without the library solver.
///
/// With `s = ζ²`, `b_n = ζ²β_n` and per-member alignments as variables the
/// problem is jointly convex: alignments live in a box (member budgets) and a
/// ball (lead budget) that depend on `(b_n, s)`. Nested golden-section
/// searches over `s` and each `b_n` wrap a projected-gradient solve for the
/// alignments.
pub fn oracle_objective(topo: &Topology, coeffs: &Coefficients) -> f64 {
    let weight = coeffs.c2 * coeffs.nu_sq;
    let full_align = |c: &Cluster| {
        c.members
            .iter()
            .filter(|m| m.gain > 0.0 && m.budget > 0.0)
            .map(|m| 1.0 / (c.lead_gain * c.lead_gain * m.gain * m.gain * m.budget))
            .fold(0.0, f64::max)
    };
    let cluster_value = |c: &Cluster, s: f64| -> f64 {
        if c.members.is_empty() {
            return 0.0;
        }
        let h2 = c.lead_gain * c.lead_gain;
        let mut b_hi = full_align(c);
        if c.lead_noise > 0.0 {
            b_hi = b_hi.min(c.lead_budget * s / c.lead_noise);
        }
        let chi = |b: f64| {
            let upper: Vec<f64> = c.members.iter().map(|m| (h2 * b * m.gain * m.gain * m.budget).sqrt()).collect();
            let radius = (h2 * (c.lead_budget * s - b * c.lead_noise)).max(0.0).sqrt();
            coeffs.c1 * misalignment_floor(&upper, radius) + weight * h2 * c.lead_noise * b
        };
        golden(chi, 0.0, b_hi, 90).1
    };
    let s_hi = topo
        .clusters
        .iter()
        .filter(|c| !c.members.is_empty())
        .map(|c| (full_align(c) * c.lead_noise + c.members.len() as f64 / (c.lead_gain * c.lead_gain)) / c.lead_budget)
        .fold(0.0, f64::max);
    let psi = |s: f64| weight * topo.ps_noise * s + topo.clusters.iter().map(|c| cluster_value(c, s)).sum::<f64>();
    golden(psi, 0.0, s_hi, 90).1
}

/// Minimax radius plus `rho` times the top importance for every subset of up
/// to 16 devices, indexed by bitmask.
pub fn subset_costs(geometry: &Geometry, importances: &[f64], rho: f64) -> Vec<f64> {
    let k = geometry.len();
    assert!(k <= 16);
    let mut table = vec![f64::NAN; 1 << k];
    for (mask, slot) in table.iter_mut().enumerate().skip(1) {
        let members: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let mut radius = f64::INFINITY;
        for &p in &members {
            let mut far = 0.0f64;
            for &q in &members {
                far = far.max(geometry.distance(p, q));
            }
            radius = radius.min(far);
        }
        let top = members.iter().map(|&p| importances[p]).fold(f64::NEG_INFINITY, f64::max);
        *slot = radius + rho * top;
    }
    table
}

pub fn mask_of(set: &[usize]) -> usize {
    set.iter().fold(0, |m, &d| m | 1 << d)
}

/// Greedy merge sequence recomputed from the exhaustive table: each step picks
/// the cheapest union of two current groups, ties to the earliest pair.
pub fn exhaustive_merges(devices: usize, clusters: usize, table: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut groups: Vec<usize> = (0..devices).map(|d| 1 << d).collect();
    let mut out = Vec::new();
    while groups.len() > clusters {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let c = table[groups[i] | groups[j]];
                if c < best.0 {
                    best = (c, i, j);
                }
            }
        }
        let (c, i, j) = best;
        out.push((groups[i], groups[j], c));
        groups[i] |= groups[j];
        groups.remove(j);
    }
    out
}

/// Gradients with per-device offsets so the spread across devices dominates.
pub fn random_gradients<R: Rng>(rng: &mut R, devices: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..devices)
        .map(|_| {
            let offset = rng.random_range(-2.0..2.0);
            (0..dim).map(|_| offset + rng.random_range(-1.0..1.0)).collect()
        })
        .collect()
}

/// Sample moments of the aggregation error over repeated noise draws, next to
/// their closed forms and the library's upper bounds.
#[derive(Debug)]
pub struct MonteCarlo {
    /// `‖E[ε]‖` from the noise-free terms alone.
    pub bias_norm: f64,
    /// Mean of `ε·u` with `u` the unit vector along the analytic mean.
    pub projected_mean: f64,
    pub projected_se: f64,
    pub mse: f64,
    pub sample_mse: f64,
    pub mse_se: f64,
    /// `‖mean ε‖²` with the `tr(Cov)/n` sampling excess removed.
    pub sample_bias: f64,
    pub bias_bound: f64,
    pub mse_bound: f64,
}

impl MonteCarlo {
    pub fn run<R: Rng>(topo: &Topology, alloc: &PowerAllocation, gradients: &[Vec<f64>], draws: usize, rng: &mut R) -> Self {
        let dim = gradients[0].len();
        let k = topo.devices as f64;
        let stats = compute_stats(gradients).unwrap();
        let ideal = mean_gradient(gradients);
        let mean = error_mean(topo, alloc, gradients, &stats);
        let bias_norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        let unit: Vec<f64> = mean.iter().map(|x| x / bias_norm.max(f64::MIN_POSITIVE)).collect();
        let noise_part = dim as f64 * (alloc.zeta * stats.std() / k).powi(2) * noise_energy(topo, alloc);
        let mse = bias_norm * bias_norm + noise_part;

        let (mut proj, mut proj_sq, mut sq, mut sq_sq) = (0.0, 0.0, 0.0, 0.0);
        let mut sum = vec![0.0; dim];
        let mut spread = 0.0;
        for _ in 0..draws {
            let noise = NoiseDraws::sample(topo, dim, rng);
            let est = transmit(topo, alloc, gradients, &stats, &noise).unwrap();
            let eps: Vec<f64> = est.iter().zip(&ideal).map(|(a, b)| a - b).collect();
            let p: f64 = eps.iter().zip(&unit).map(|(a, b)| a * b).sum();
            let n2: f64 = eps.iter().map(|x| x * x).sum();
            proj += p;
            proj_sq += p * p;
            sq += n2;
            sq_sq += n2 * n2;
            for (s, e) in sum.iter_mut().zip(&eps) {
                *s += e;
            }
            spread += eps.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let n = draws as f64;
        let se = |total: f64, total_sq: f64| ((total_sq / n - (total / n).powi(2)).max(0.0) / (n - 1.0)).sqrt();
        let mean_norm_sq = sum.iter().map(|s| (s / n).powi(2)).sum::<f64>();
        let dev = deviation_energy(gradients, &stats);
        Self {
            bias_norm,
            projected_mean: proj / n,
            projected_se: se(proj, proj_sq),
            mse,
            sample_mse: sq / n,
            mse_se: se(sq, sq_sq),
            sample_bias: mean_norm_sq - spread / n / n,
            bias_bound: bias_bound(topo, alloc, dev),
            mse_bound: mse_bound(topo, alloc, dev, stats.var, dim),
        }
    }

    pub fn bias_z(&self) -> f64 {
        // Without noise both sides are deterministic and differ by rounding only.
        (self.projected_mean - self.bias_norm).abs() / self.projected_se.max(1e-9 * (1.0 + self.bias_norm))
    }

    pub fn mse_z(&self) -> f64 {
        (self.sample_mse - self.mse).abs() / self.mse_se.max(1e-9 * (1.0 + self.mse))
    }
}

/// Optimality gap and its bound after every round of quadratic-mode runs,
/// averaged over seeds: `(mean gap, mean bound)` per prefix.
pub fn quadratic_gap_curve(seeds: std::ops::Range<u64>, rounds: usize) -> Vec<(f64, f64)> {
    use twotier::convergence::contraction;
    use twotier::harness::{Experiment, ExperimentConfig, ModelKind};

    let mut sums = vec![(0.0, 0.0); rounds];
    let count = seeds.end - seeds.start;
    for seed in seeds {
        let cfg = ExperimentConfig { model: ModelKind::Quadratic, rounds, seed, ..Default::default() };
        let eta = contraction(cfg.lipschitz, cfg.learning_rate()).unwrap();
        let mut exp = Experiment::new(cfg).unwrap();
        let p = exp.quadratic().unwrap().clone();
        let mut decay = p.gap(exp.model().params());
        for s in sums.iter_mut() {
            let rec = exp.step().unwrap();
            decay *= eta;
            s.0 += p.gap(exp.model().params());
            s.1 += decay + rec.metrics.bound;
        }
    }
    sums.into_iter().map(|(g, b)| (g / count as f64, b / count as f64)).collect()
}
