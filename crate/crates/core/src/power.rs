//! Per-round power control.
//!
//! The objective trades the misalignment of every transmitted gradient against
//! the receiver noise that reaches the PS:
//!
//! `f = c1 Σ (ζ h √β h' √α − 1)² + c2 ζ² ν² (Σ h² β σ_n² + σ²)`
//!
//! It is minimized block-wise: member powers with a per-cluster multiplier for
//! the lead's budget, then lead gains in closed form, then the de-noising
//! factor in closed form.

use crate::aircomp::{Cluster, GradientStats, PowerAllocation, Topology};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub c1: f64,
    pub c2: f64,
    /// Global gradient variance `ν²`.
    pub nu_sq: f64,
}

impl Coefficients {
    /// Weights of the optimality-gap terms: `(γ/2 + Lγ²)·S/K²` on misalignment
    /// and `M·Lγ²/K²` on noise, with `S = Σ_k ‖g_k − ḡ‖²`.
    pub fn learning(lr: f64, lipschitz: f64, deviation_energy: f64, dim: usize, devices: usize, nu_sq: f64) -> Self {
        let a = lr / 2.0;
        let b = lipschitz * lr * lr;
        let k2 = (devices * devices) as f64;
        Self { c1: (a + b) * deviation_energy / k2, c2: dim as f64 * b / k2, nu_sq }
    }

    /// Weights of the plain MSE of the normalized aggregate.
    pub fn mse(deviation_energy: f64, dim: usize, nu_sq: f64) -> Self {
        let c2 = if deviation_energy > 0.0 { dim as f64 / deviation_energy } else { 0.0 };
        Self { c1: 1.0, c2, nu_sq }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { c1: self.c1 * factor, c2: self.c2 * factor, nu_sq: self.nu_sq }
    }
}

/// `Σ_k ‖g_k − ḡ‖²` with the scalar global mean.
pub fn deviation_energy(gradients: &[Vec<f64>], stats: &GradientStats) -> f64 {
    gradients.iter().flatten().map(|g| (g - stats.mean).powi(2)).sum()
}

/// `Σ (alignment − 1)²` over every transmitting member.
pub fn misalignment(topo: &Topology, alloc: &PowerAllocation) -> f64 {
    alloc.alignments(topo).iter().map(|a| (a - 1.0).powi(2)).sum()
}

/// `Σ h² β σ_n² + σ²`.
pub fn noise_energy(topo: &Topology, alloc: &PowerAllocation) -> f64 {
    alloc.forwarded_noise(topo) + topo.ps_noise
}

/// Upper bound on `‖E[ε]‖²`.
pub fn bias_bound(topo: &Topology, alloc: &PowerAllocation, deviation_energy: f64) -> f64 {
    let k2 = (topo.devices * topo.devices) as f64;
    deviation_energy / k2 * (misalignment(topo, alloc) + topo.omitted().len() as f64)
}

/// Upper bound on `E‖ε‖²`.
pub fn mse_bound(topo: &Topology, alloc: &PowerAllocation, deviation_energy: f64, nu_sq: f64, dim: usize) -> f64 {
    let k2 = (topo.devices * topo.devices) as f64;
    bias_bound(topo, alloc, deviation_energy) + dim as f64 * alloc.zeta.powi(2) * nu_sq * noise_energy(topo, alloc) / k2
}

pub fn objective(topo: &Topology, alloc: &PowerAllocation, coeffs: &Coefficients) -> f64 {
    coeffs.c1 * misalignment(topo, alloc) + coeffs.c2 * alloc.zeta.powi(2) * coeffs.nu_sq * noise_energy(topo, alloc)
}

/// Member powers of one cluster for fixed `β` and `ζ`, and the multiplier of
/// the lead budget.
///
/// Every unclamped member ends at the same alignment `c1w²/(c1w² + μ)` with
/// `w = ζ h √β`; when the lead budget binds, `μ` follows from water-filling
/// the members' received power.
pub fn solve_alpha_cluster(cluster: &Cluster, index: usize, beta: f64, zeta: f64, c1: f64) -> Result<(Vec<f64>, f64)> {
    if beta * cluster.lead_noise > cluster.lead_budget {
        return Err(Error::InfeasibleLeadBudget(index));
    }
    let w = zeta * cluster.lead_gain * beta.sqrt();
    let full: Vec<f64> = cluster.members.iter().map(|m| m.budget).collect();
    if !(w > 0.0 && c1 > 0.0) {
        // Nothing the members send reaches the PS; their power is irrelevant.
        let alpha = if cluster.lead_power(&full, beta) <= cluster.lead_budget { full } else { vec![0.0; full.len()] };
        return Ok((alpha, 0.0));
    }
    let cw2 = c1 * w * w;
    let powers = |mu: f64, out: &mut Vec<f64>| {
        let amp = c1 * w / (cw2 + mu);
        out.clear();
        out.extend(cluster.members.iter().map(|m| if m.gain > 0.0 { (amp / m.gain).powi(2).min(m.budget) } else { 0.0 }));
    };
    let mut alpha = Vec::with_capacity(cluster.members.len());
    let over = |mu: f64, alpha: &mut Vec<f64>| {
        powers(mu, alpha);
        cluster.lead_power(alpha, beta) > cluster.lead_budget
    };

    if !over(0.0, &mut alpha) {
        return Ok((alpha, 0.0));
    }
    // At amplitude `a` a member adds `min(a², h'²·budget)` to the received
    // power, so the binding level is a water-filling over the sorted caps.
    let room = cluster.lead_budget / beta - cluster.lead_noise;
    let mut caps: Vec<f64> = cluster.members.iter().filter(|m| m.gain > 0.0).map(|m| m.gain * m.gain * m.budget).collect();
    caps.sort_by(f64::total_cmp);
    let mut rest = room;
    let mut level = caps.last().copied().unwrap_or(0.0);
    for (i, &cap) in caps.iter().enumerate() {
        let share = rest / (caps.len() - i) as f64;
        if share <= cap {
            level = share;
            break;
        }
        rest -= cap;
    }
    if !(level > 0.0) {
        return Ok((vec![0.0; cluster.members.len()], f64::INFINITY));
    }
    let mut mu = (c1 * w / level.sqrt() - cw2).max(0.0);
    // Rounding may leave the budget a few ulps short; step up until it holds.
    let mut step = (f64::EPSILON * (mu + cw2)).max(f64::MIN_POSITIVE);
    while over(mu, &mut alpha) {
        mu += step;
        step *= 2.0;
        if !mu.is_finite() {
            return Ok((vec![0.0; cluster.members.len()], f64::INFINITY));
        }
    }
    Ok((alpha, mu))
}

pub fn solve_alpha(topo: &Topology, beta: &[f64], zeta: f64, coeffs: &Coefficients) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut alpha = Vec::with_capacity(topo.clusters.len());
    let mut mu = Vec::with_capacity(topo.clusters.len());
    for (n, c) in topo.clusters.iter().enumerate() {
        let (a, m) = solve_alpha_cluster(c, n, beta[n], zeta, coeffs.c1)?;
        alpha.push(a);
        mu.push(m);
    }
    Ok((alpha, mu))
}

/// Largest representable `β ≤ limit` that keeps the lead within budget.
fn feasible_beta(cluster: &Cluster, alpha: &[f64], limit: f64) -> f64 {
    let mut beta = limit.min(cluster.max_beta(alpha));
    if !beta.is_finite() {
        return 0.0;
    }
    while beta > 0.0 && cluster.lead_power(alpha, beta) > cluster.lead_budget {
        beta = beta.next_down();
    }
    beta.max(0.0)
}

pub fn solve_beta(topo: &Topology, alpha: &[Vec<f64>], zeta: f64, coeffs: &Coefficients) -> Vec<f64> {
    topo.clusters
        .iter()
        .zip(alpha)
        .map(|(c, a)| {
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for (m, &p) in c.members.iter().zip(a) {
                sum += m.gain * p.sqrt();
                sum_sq += m.gain * m.gain * p;
            }
            let zh = zeta * c.lead_gain;
            let den = coeffs.c1 * zh * zh * sum_sq + coeffs.c2 * coeffs.nu_sq * zh * zh * c.lead_noise;
            if !(den > 0.0) {
                return 0.0;
            }
            let amp = coeffs.c1 * zh * sum / den;
            feasible_beta(c, a, amp * amp)
        })
        .collect()
}

pub fn solve_zeta(topo: &Topology, alpha: &[Vec<f64>], beta: &[f64], coeffs: &Coefficients) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for ((c, a), &b) in topo.clusters.iter().zip(alpha).zip(beta) {
        let hb = c.lead_gain * b.sqrt();
        for (m, &p) in c.members.iter().zip(a) {
            let chain = hb * m.gain * p.sqrt();
            num += chain;
            den += chain * chain;
        }
    }
    let noise = beta.iter().zip(&topo.clusters).map(|(b, c)| c.lead_gain * c.lead_gain * b * c.lead_noise).sum::<f64>() + topo.ps_noise;
    let num = coeffs.c1 * num;
    let den = coeffs.c1 * den + coeffs.c2 * coeffs.nu_sq * noise;
    let zeta = num / den;
    if den > 0.0 && zeta > 0.0 && zeta.is_finite() {
        Ok(zeta)
    } else {
        Err(Error::UndefinedZeta)
    }
}

/// Minimizer of a convex function on `[0, hi]`, with the endpoints checked.
fn golden_min(f: impl Fn(f64) -> Result<f64>, hi: f64) -> Result<(f64, f64)> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, hi);
    let cap = hi;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..200 {
        if !(x1 > lo && x2 < hi && x1 < x2) || hi - lo <= 1e-10 * hi {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for x in [0.0, cap, lo, hi] {
        let fx = f(x)?;
        if fx < best.1 {
            best = (x, fx);
        }
    }
    Ok(best)
}

/// Lead gains and de-noising factor jointly for fixed member powers.
///
/// Only `w_n = ζ√β_n` reaches the alignments, and each lead's budget reads
/// `w_n² ≤ ζ² P̂_n`. For a given `ζ²` every cluster takes its unconstrained
/// best `w_n` or the cap, and what is left is convex in `ζ²`.
pub fn solve_beta_zeta(topo: &Topology, alpha: &[Vec<f64>], coeffs: &Coefficients) -> Result<(Vec<f64>, f64)> {
    let noise_weight = coeffs.c2 * coeffs.nu_sq;
    // Per cluster: (alignment per unit w, forwarded-noise weight, best w, P̂).
    let parts: Vec<(Vec<f64>, f64, f64, f64)> = topo
        .clusters
        .iter()
        .zip(alpha)
        .map(|(c, a)| {
            let k: Vec<f64> = c.members.iter().zip(a).map(|(m, &p)| c.lead_gain * m.gain * p.sqrt()).collect();
            let fwd = noise_weight * c.lead_gain * c.lead_gain * c.lead_noise;
            let den = coeffs.c1 * k.iter().map(|x| x * x).sum::<f64>() + fwd;
            let best = if den > 0.0 { coeffs.c1 * k.iter().sum::<f64>() / den } else { 0.0 };
            (k, fwd, best, c.max_beta(a))
        })
        .collect();
    let cluster_value = |k: &[f64], fwd: f64, w: f64| coeffs.c1 * k.iter().map(|x| (w * x - 1.0).powi(2)).sum::<f64>() + fwd * w * w;
    let amplitude = |best: f64, cap: f64, tau: f64| if cap.is_finite() { best.min((tau * cap).sqrt()) } else { best };
    let value = |tau: f64| -> Result<f64> {
        let mut total = noise_weight * topo.ps_noise * tau;
        for (k, fwd, best, cap) in &parts {
            total += cluster_value(k, *fwd, amplitude(*best, *cap, tau));
        }
        Ok(total)
    };
    let top = parts
        .iter()
        .filter(|(_, _, best, cap)| *best > 0.0 && cap.is_finite())
        .map(|(_, _, best, cap)| if *cap > 0.0 { best * best / cap } else { 0.0 })
        .fold(0.0, f64::max);
    if !(top > 0.0 && top.is_finite()) {
        return Err(Error::UndefinedZeta);
    }
    let (tau, _) = golden_min(value, top)?;
    if !(tau > 0.0) {
        return Err(Error::UndefinedZeta);
    }
    let beta = topo
        .clusters
        .iter()
        .zip(alpha)
        .zip(&parts)
        .map(|((c, a), (_, _, best, cap))| {
            let w = amplitude(*best, *cap, tau);
            feasible_beta(c, a, w * w / tau)
        })
        .collect();
    Ok((beta, tau.sqrt()))
}

/// Coordinates in which the problem is jointly convex: per-member amplitudes
/// `ζ√(βα)`, per-cluster `ζ²β`, and `ζ²`.
struct Lifted {
    amp: Vec<Vec<f64>>,
    gain: Vec<f64>,
    scale: f64,
}

impl Lifted {
    fn from_alloc(alloc: &PowerAllocation) -> Self {
        let scale = alloc.zeta * alloc.zeta;
        let amp = alloc.alpha.iter().zip(&alloc.beta).map(|(a, &b)| a.iter().map(|&p| alloc.zeta * (b * p).sqrt()).collect()).collect();
        Self { amp, gain: alloc.beta.iter().map(|b| scale * b).collect(), scale }
    }

    fn along(&self, other: &Self, t: f64) -> Self {
        let lerp = |x: f64, y: f64| x + t * (y - x);
        Self {
            amp: self.amp.iter().zip(&other.amp).map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| lerp(x, y)).collect()).collect(),
            gain: self.gain.iter().zip(&other.gain).map(|(&x, &y)| lerp(x, y)).collect(),
            scale: lerp(self.scale, other.scale),
        }
    }

    /// Back to powers, clamped onto the budgets; `None` for negative values.
    fn to_alloc(&self, topo: &Topology) -> Option<PowerAllocation> {
        if !(self.scale > 0.0) {
            return None;
        }
        let mut alpha = Vec::with_capacity(self.amp.len());
        let mut beta = Vec::with_capacity(self.amp.len());
        for ((c, amp), &g) in topo.clusters.iter().zip(&self.amp).zip(&self.gain) {
            if g < 0.0 || amp.iter().any(|&v| v < 0.0) {
                return None;
            }
            let a: Vec<f64> = c.members.iter().zip(amp).map(|(m, &v)| if g > 0.0 { (v * v / g).min(m.budget) } else { 0.0 }).collect();
            beta.push(feasible_beta(c, &a, g / self.scale));
            alpha.push(a);
        }
        Some(PowerAllocation { alpha, beta, zeta: self.scale.sqrt() })
    }
}

/// Exact line search past `cur` along the step that led from `prev` to it.
fn extrapolate(topo: &Topology, prev: &PowerAllocation, cur: &PowerAllocation, coeffs: &Coefficients) -> Option<PowerAllocation> {
    let (p, c) = (Lifted::from_alloc(prev), Lifted::from_alloc(cur));
    let at = |t: f64| c.along(&p, -t).to_alloc(topo);
    let mut hi = 1.0;
    while at(2.0 * hi).is_some() && hi < 1e6 {
        hi *= 2.0;
    }
    let lo = if at(hi).is_some() { hi } else { 0.0 };
    if !(lo > 0.0) {
        return None;
    }
    let value = |t: f64| Ok(at(t).map_or(f64::INFINITY, |a| objective(topo, &a, coeffs)));
    let (t, _) = golden_min(value, lo).ok()?;
    at(t)
}

/// Member powers and lead gain of one cluster jointly for a fixed `ζ`.
///
/// With the member powers minimized out, the cluster's share of the objective
/// is convex in `β` (it is convex in `ζ²β` and the amplitudes `ζ√(βα)`), so a
/// golden-section search over `β` with the exact member step inside finds the
/// joint optimum. Past `max_j 1/(ζ h h'_j)² / P_j` every member can align
/// exactly and a larger `β` only adds forwarded noise, which bounds the search.
pub fn solve_cluster(cluster: &Cluster, index: usize, zeta: f64, coeffs: &Coefficients) -> Result<(Vec<f64>, f64, f64)> {
    let zh = zeta * cluster.lead_gain;
    let mut cap = cluster
        .members
        .iter()
        .filter(|m| m.gain > 0.0 && m.budget > 0.0)
        .map(|m| 1.0 / ((zh * m.gain).powi(2) * m.budget))
        .fold(0.0, f64::max);
    if cluster.lead_noise > 0.0 {
        cap = cap.min(cluster.lead_budget / cluster.lead_noise);
        while cap > 0.0 && cap * cluster.lead_noise > cluster.lead_budget {
            cap = cap.next_down();
        }
    }
    if !(cap > 0.0 && cap.is_finite()) {
        let (alpha, mu) = solve_alpha_cluster(cluster, index, 0.0, zeta, coeffs.c1)?;
        return Ok((alpha, 0.0, mu));
    }
    let noise_weight = coeffs.c2 * coeffs.nu_sq * zh * zh * cluster.lead_noise;
    let value = |beta: f64| -> Result<f64> {
        let (alpha, _) = solve_alpha_cluster(cluster, index, beta, zeta, coeffs.c1)?;
        let w = zh * beta.sqrt();
        let mis: f64 = cluster.members.iter().zip(&alpha).map(|(m, &a)| (w * m.gain * a.sqrt() - 1.0).powi(2)).sum();
        Ok(coeffs.c1 * mis + noise_weight * beta)
    };
    let best = golden_min(value, cap)?;
    let (alpha, mu) = solve_alpha_cluster(cluster, index, best.0, zeta, coeffs.c1)?;
    Ok((alpha, best.0, mu))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    /// Objective after each completed sweep.
    pub objective: Vec<f64>,
    pub converged: bool,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub alloc: PowerAllocation,
    /// Lead-budget multipliers from the last member-power update.
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub trace: SolverTrace,
}

fn fixed_alpha(topo: &Topology) -> Vec<Vec<f64>> {
    topo.clusters.iter().map(|c| c.members.iter().map(|m| m.budget).collect()).collect()
}

/// Half of every member budget, half of the resulting lead headroom, and the
/// best `ζ` for those powers.
pub fn initial_allocation(topo: &Topology, coeffs: &Coefficients) -> PowerAllocation {
    let alpha: Vec<Vec<f64>> = if topo.alpha_fixed() {
        fixed_alpha(topo)
    } else {
        topo.clusters.iter().map(|c| c.members.iter().map(|m| m.budget / 2.0).collect()).collect()
    };
    let beta = topo
        .clusters
        .iter()
        .zip(&alpha)
        .map(|(c, a)| if c.members.is_empty() { 0.0 } else { feasible_beta(c, a, c.max_beta(a) / 2.0) })
        .collect::<Vec<_>>();
    let zeta = solve_zeta(topo, &alpha, &beta, coeffs).unwrap_or(1.0);
    PowerAllocation { alpha, beta, zeta }
}

/// Every member at full power, every lead at full budget.
pub fn max_power_allocation(topo: &Topology, coeffs: &Coefficients) -> PowerAllocation {
    let alpha = fixed_alpha(topo);
    let beta = topo
        .clusters
        .iter()
        .zip(&alpha)
        .map(|(c, a)| if c.members.is_empty() { 0.0 } else { feasible_beta(c, a, f64::INFINITY) })
        .collect::<Vec<_>>();
    let zeta = solve_zeta(topo, &alpha, &beta, coeffs).unwrap_or(1.0);
    PowerAllocation { alpha, beta, zeta }
}

/// Rounding allowance for the final member-power refit of a sweep: relative
/// for objectives below one, absolute above.
const REFIT_SLACK: f64 = 1e-12;

/// Alternates between the clusters' member powers and lead gains, solved
/// jointly per cluster, and the lead gains with the de-noising factor, solved
/// jointly, then refits the member powers to the result. Cycling the three
/// blocks one at a time stalls along directions where a lead's gain and its
/// members' powers trade off against each other; the joint blocks and a line
/// search along the last sweep's step remove that. Stops when the relative
/// objective change of a sweep falls to `tol`.
///
/// A block update that would raise the objective is discarded, except that the
/// refit may cost up to [`REFIT_SLACK`], so the trace never rises by more than
/// rounding and the returned member powers are, up to that rounding, the exact
/// minimizer for the returned lead gains and factor.
pub fn alternating_minimize(
    topo: &Topology,
    coeffs: &Coefficients,
    opts: &SolverOptions,
    init: Option<PowerAllocation>,
) -> Result<Solution> {
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::SolverOptions(format!("max_iter={} tol={}", opts.max_iter, opts.tol)));
    }
    let mut alloc = init.unwrap_or_else(|| initial_allocation(topo, coeffs));
    alloc.check(topo)?;
    let mut f = objective(topo, &alloc, coeffs);
    let mut multipliers = vec![0.0; topo.clusters.len()];
    let mut trace = SolverTrace::default();

    let accept = |candidate: PowerAllocation, alloc: &mut PowerAllocation, f: &mut f64| -> bool {
        let fc = objective(topo, &candidate, coeffs);
        if fc <= *f {
            *alloc = candidate;
            *f = fc;
            true
        } else {
            false
        }
    };

    for _ in 0..opts.max_iter {
        let start = f;
        let prev = alloc.clone();
        if topo.alpha_fixed() {
            let b = solve_beta(topo, &alloc.alpha, alloc.zeta, coeffs);
            accept(PowerAllocation { beta: b, ..alloc.clone() }, &mut alloc, &mut f);
        } else {
            let mut cand = alloc.clone();
            let mut mu = vec![0.0; topo.clusters.len()];
            for (n, c) in topo.clusters.iter().enumerate() {
                let (a, b, m) = solve_cluster(c, n, alloc.zeta, coeffs)?;
                cand.alpha[n] = a;
                cand.beta[n] = b;
                mu[n] = m;
            }
            if accept(cand, &mut alloc, &mut f) {
                multipliers = mu;
            }
        }
        if let Ok((b, z)) = solve_beta_zeta(topo, &alloc.alpha, coeffs) {
            accept(PowerAllocation { beta: b, zeta: z, ..alloc.clone() }, &mut alloc, &mut f);
        }
        if let Ok(z) = solve_zeta(topo, &alloc.alpha, &alloc.beta, coeffs) {
            accept(PowerAllocation { zeta: z, ..alloc.clone() }, &mut alloc, &mut f);
        }
        if !topo.alpha_fixed() {
            if let Some(jump) = extrapolate(topo, &prev, &alloc, coeffs) {
                accept(jump, &mut alloc, &mut f);
            }
            // The refit is the exact minimizer for the final β and ζ; it may
            // differ from the current powers only by rounding in f.
            let (a, mu) = solve_alpha(topo, &alloc.beta, alloc.zeta, coeffs)?;
            let refit = PowerAllocation { alpha: a, ..alloc.clone() };
            let fr = objective(topo, &refit, coeffs);
            if fr <= f + REFIT_SLACK * f.abs().min(1.0) {
                alloc = refit;
                f = fr;
                multipliers = mu;
            }
        }
        trace.objective.push(f);
        if (start - f).abs() <= opts.tol * start.abs() {
            trace.converged = true;
            break;
        }
    }
    Ok(Solution { alloc, multipliers, objective: f, trace })
}

/// Scale-free optimality residuals of the member-power block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// Largest relative derivative of the Lagrangian at an interior power.
    pub stationarity: f64,
    /// Largest `μ̃·|slack|` with both factors made dimensionless.
    pub complementarity: f64,
    pub dual_feasible: bool,
}

pub fn kkt_residuals(topo: &Topology, alloc: &PowerAllocation, multipliers: &[f64], coeffs: &Coefficients) -> KktResiduals {
    let mut out = KktResiduals { dual_feasible: true, ..Default::default() };
    for (n, c) in topo.clusters.iter().enumerate() {
        let mu = multipliers[n];
        out.dual_feasible &= mu >= 0.0;
        let w = alloc.zeta * c.lead_gain * alloc.beta[n].sqrt();
        let cw2 = coeffs.c1 * w * w;
        if !(cw2 > 0.0) {
            continue;
        }
        for (m, &a) in c.members.iter().zip(&alloc.alpha[n]) {
            if a <= 0.0 || a >= m.budget {
                continue;
            }
            let x = a.sqrt();
            let grad = coeffs.c1 * w * m.gain * (w * m.gain * x - 1.0) + mu * m.gain * m.gain * x;
            let scale = coeffs.c1 * w * m.gain * (w * m.gain * x + 1.0) + mu * m.gain * m.gain * x;
            out.stationarity = out.stationarity.max(grad.abs() / scale);
        }
        if mu.is_finite() && mu > 0.0 {
            let slack = (c.lead_power(&alloc.alpha[n], alloc.beta[n]) - c.lead_budget) / c.lead_budget;
            out.complementarity = out.complementarity.max(mu / cw2 * slack.abs());
        }
    }
    out
}
