//! Agglomerative device clustering and lead selection.
//!
//! Clusters are grown greedily from singletons. The cost of a candidate union
//! is its minimax radius (the smallest, over members, of the largest distance
//! to another member) plus `ϱ` times the highest data importance it contains,
//! so important devices resist being absorbed early.

use serde::{Deserialize, Serialize};

use crate::channel::Geometry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Member ids of each cluster, ascending; clusters ordered by smallest id.
    pub clusters: Vec<Vec<usize>>,
    pub leads: Vec<usize>,
    pub round: usize,
}

impl ClusterAssignment {
    /// Checks that the clusters partition `0..devices` and that every lead
    /// belongs to its own cluster.
    pub fn validate(&self, devices: usize) -> Result<()> {
        if self.leads.len() != self.clusters.len() {
            return Err(Error::Partition(format!("{} leads for {} clusters", self.leads.len(), self.clusters.len())));
        }
        let mut seen = vec![false; devices];
        for (c, &lead) in self.clusters.iter().zip(&self.leads) {
            if c.is_empty() {
                return Err(Error::Partition("empty cluster".into()));
            }
            if !c.contains(&lead) {
                return Err(Error::Partition(format!("lead {lead} outside its cluster")));
            }
            for &d in c {
                if d >= devices || seen[d] {
                    return Err(Error::Partition(format!("device {d} duplicated or out of range")));
                }
                seen[d] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Partition("clusters do not cover every device".into()));
        }
        Ok(())
    }

    pub fn subordinate_count(&self) -> usize {
        self.clusters.iter().map(|c| c.len() - 1).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageParams {
    /// Meters per nat of importance in the merge cost.
    pub rho: f64,
    /// Weight of the distance to the PS in lead selection.
    pub rho1: f64,
    /// Weight of data importance in lead selection.
    pub rho2: f64,
}

impl LinkageParams {
    /// Scales importance (bounded by `ln classes`) to the typical inter-device
    /// distance. A positive `rho2` favours leads holding less informative
    /// data, since a lead's own gradient is never uploaded.
    pub fn scaled(geometry: &Geometry, classes: usize) -> Self {
        let scale = median_pairwise_distance(geometry) / (classes.max(2) as f64).ln();
        Self { rho: scale, rho1: 0.5, rho2: scale }
    }
}

pub fn median_pairwise_distance(geometry: &Geometry) -> f64 {
    let k = geometry.len();
    let mut d = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            d.push(geometry.distance(i, j));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

/// `min_p max_q dist(p, q)` over the set.
pub fn minimax_radius(geometry: &Geometry, set: &[usize]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(set.iter().map(|&p| set.iter().map(|&q| geometry.distance(p, q)).fold(0.0, f64::max)).fold(f64::INFINITY, f64::min))
}

/// Minimax radius plus `rho` times the largest importance in the set.
pub fn set_objective(geometry: &Geometry, set: &[usize], importances: &[f64], rho: f64) -> Result<f64> {
    let r = minimax_radius(geometry, set)?;
    let top = set.iter().map(|&p| importances[p]).fold(f64::NEG_INFINITY, f64::max);
    Ok(r + rho * top)
}

/// Cost of merging two clusters; the engine always merges the cheapest pair.
pub trait Linkage {
    fn link(&self, a: &[usize], b: &[usize]) -> f64;

    /// Called after `merged` has become one cluster.
    fn on_merge(&mut self, _merged: &[usize]) {}
}

/// The joint distance/importance merge cost of [`set_objective`], evaluated
/// incrementally: each device caches its largest distance to a member of its
/// own cluster.
pub struct MinimaxLinkage<'a> {
    importances: &'a [f64],
    rho: f64,
    devices: usize,
    /// Row-major pairwise distances.
    distances: Vec<f64>,
    eccentricity: Vec<f64>,
}

impl<'a> MinimaxLinkage<'a> {
    pub fn new(geometry: &Geometry, importances: &'a [f64], rho: f64) -> Self {
        let k = geometry.len();
        let distances = (0..k * k).map(|i| geometry.distance(i / k, i % k)).collect();
        Self { importances, rho, devices: k, distances, eccentricity: vec![0.0; k] }
    }

    fn distance(&self, p: usize, q: usize) -> f64 {
        self.distances[p * self.devices + q]
    }

    fn radius_term(&self, own: &[usize], other: &[usize]) -> f64 {
        own.iter().map(|&p| other.iter().map(|&q| self.distance(p, q)).fold(self.eccentricity[p], f64::max)).fold(f64::INFINITY, f64::min)
    }
}

impl Linkage for MinimaxLinkage<'_> {
    fn link(&self, a: &[usize], b: &[usize]) -> f64 {
        let r = self.radius_term(a, b).min(self.radius_term(b, a));
        let top = a.iter().chain(b).map(|&p| self.importances[p]).fold(f64::NEG_INFINITY, f64::max);
        r + self.rho * top
    }

    fn on_merge(&mut self, merged: &[usize]) {
        for &p in merged {
            self.eccentricity[p] = merged.iter().map(|&q| self.distance(p, q)).fold(0.0, f64::max);
        }
    }
}

/// Complete linkage on cosine similarity: a union costs minus the smallest
/// pairwise similarity it contains.
pub struct SimilarityLinkage {
    similarity: Vec<Vec<f64>>,
    floor: Vec<f64>,
}

impl SimilarityLinkage {
    pub fn new(vectors: &[Vec<f64>]) -> Self {
        let norms: Vec<f64> = vectors.iter().map(|v| crate::model::dot(v, v).sqrt()).collect();
        let similarity = (0..vectors.len())
            .map(|i| {
                (0..vectors.len())
                    .map(|j| {
                        if norms[i] > 0.0 && norms[j] > 0.0 {
                            crate::model::dot(&vectors[i], &vectors[j]) / (norms[i] * norms[j])
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self { similarity, floor: vec![f64::INFINITY; vectors.len()] }
    }
}

impl Linkage for SimilarityLinkage {
    fn link(&self, a: &[usize], b: &[usize]) -> f64 {
        let mut lowest = self.floor[a[0]].min(self.floor[b[0]]);
        for &p in a {
            for &q in b {
                lowest = lowest.min(self.similarity[p][q]);
            }
        }
        -lowest
    }

    fn on_merge(&mut self, merged: &[usize]) {
        let mut lowest = f64::INFINITY;
        for &p in merged {
            for &q in merged {
                if p != q {
                    lowest = lowest.min(self.similarity[p][q]);
                }
            }
        }
        for &p in merged {
            self.floor[p] = lowest;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub cost: f64,
}

/// Greedy agglomeration of `devices` singletons down to `clusters` groups.
/// Ties go to the pair whose smallest member ids are lowest.
pub fn agglomerate<L: Linkage>(devices: usize, clusters: usize, linkage: &mut L) -> Result<(Vec<Vec<usize>>, Vec<Merge>)> {
    if clusters == 0 || clusters > devices {
        return Err(Error::InvalidClusterCount { clusters, devices });
    }
    let mut groups: Vec<Vec<usize>> = (0..devices).map(|d| vec![d]).collect();
    let mut merges = Vec::with_capacity(devices - clusters);
    while groups.len() > clusters {
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let cost = linkage.link(&groups[i], &groups[j]);
                if cost < best.0 {
                    best = (cost, i, j);
                }
            }
        }
        let (cost, i, j) = best;
        let right = groups.remove(j);
        let left = groups[i].clone();
        groups[i].extend_from_slice(&right);
        groups[i].sort_unstable();
        linkage.on_merge(&groups[i]);
        merges.push(Merge { left, right, cost });
    }
    Ok((groups, merges))
}

/// Partitions devices into `clusters` groups by the joint distance/importance
/// cost.
pub fn cluster(geometry: &Geometry, importances: &[f64], clusters: usize, rho: f64) -> Result<Vec<Vec<usize>>> {
    if importances.len() != geometry.len() {
        return Err(Error::DimensionMismatch { expected: geometry.len(), got: importances.len() });
    }
    let mut linkage = MinimaxLinkage::new(geometry, importances, rho);
    Ok(agglomerate(geometry.len(), clusters, &mut linkage)?.0)
}

/// Score minimized by a cluster's lead: mean distance to the other members,
/// plus `rho1` times the distance to the PS, plus `rho2` times importance.
pub fn lead_score(geometry: &Geometry, members: &[usize], device: usize, importances: &[f64], rho1: f64, rho2: f64) -> f64 {
    let spread = if members.len() > 1 {
        members.iter().map(|&q| geometry.distance(device, q)).sum::<f64>() / (members.len() - 1) as f64
    } else {
        0.0
    };
    spread + rho1 * geometry.distance_to_ps(device) + rho2 * importances[device]
}

/// Lowest-scoring member of each cluster; ties go to the lowest id.
pub fn select_leads(clusters: &[Vec<usize>], geometry: &Geometry, importances: &[f64], rho1: f64, rho2: f64) -> Vec<usize> {
    clusters
        .iter()
        .map(|members| {
            let mut best = (f64::INFINITY, usize::MAX);
            for &d in members {
                let s = lead_score(geometry, members, d, importances, rho1, rho2);
                if s < best.0 || (s == best.0 && d < best.1) {
                    best = (s, d);
                }
            }
            best.1
        })
        .collect()
}
