//! Device placement and distance-dependent Rayleigh fading.
//!
//! Only link magnitudes are simulated: transmitters pre-compensate phases, so
//! every received signal is treated as real with noise variance `σ²` per sample.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub devices: Vec<Point>,
    pub ps: Point,
}

impl Geometry {
    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.devices[a].distance(&self.devices[b])
    }

    pub fn distance_to_ps(&self, a: usize) -> f64 {
        self.devices[a].distance(&self.ps)
    }
}

/// Places `count` devices uniformly (in area) over an annulus around a PS at
/// the origin.
pub fn sample_ring_geometry<R: Rng + ?Sized>(count: usize, inner: f64, outer: f64, rng: &mut R) -> Result<Geometry> {
    if !(inner > 0.0 && inner < outer && outer.is_finite()) {
        return Err(Error::InvalidRing { inner, outer });
    }
    let (a2, b2) = (inner * inner, outer * outer);
    let devices = (0..count)
        .map(|_| {
            let u: f64 = rng.random();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            let r = (u * (b2 - a2) + a2).sqrt().clamp(inner, outer);
            Point::new(r * theta.cos(), r * theta.sin())
        })
        .collect();
    Ok(Geometry { devices, ps: Point::ORIGIN })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss {
    /// Linear gain at one meter.
    pub omega0: f64,
    pub kappa: f64,
}

impl PathLoss {
    pub fn new(omega0: f64, kappa: f64) -> Result<Self> {
        if !(omega0 > 0.0 && omega0.is_finite() && kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidPathLoss { omega0, kappa });
        }
        Ok(Self { omega0, kappa })
    }

    pub fn from_db(omega0_db: f64, kappa: f64) -> Result<Self> {
        Self::new(db_to_linear(omega0_db), kappa)
    }

    /// Mean power gain `Ω₀ d^{−κ}` at distance `d`.
    pub fn mean_gain(&self, distance: f64) -> f64 {
        self.omega0 * distance.powf(-self.kappa)
    }

    /// One Rayleigh amplitude draw `sqrt(Ω₀ d^{−κ})·|h₀|`, `h₀ ~ CN(0, 1)`.
    pub fn sample<R: Rng + ?Sized>(&self, distance: f64, rng: &mut R) -> f64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let h0 = ((re * re + im * im) / 2.0).sqrt();
        self.mean_gain(distance).sqrt() * h0
    }
}

/// Link magnitudes of one cluster for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLinks {
    pub lead: usize,
    pub lead_gain: f64,
    /// `(device, amplitude to the lead)` for every non-lead member.
    pub members: Vec<(usize, f64)>,
}

/// Quasi-static channel state for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub clusters: Vec<ClusterLinks>,
    pub lead_noise: f64,
    pub ps_noise: f64,
}

fn checked_distance(geometry: &Geometry, from: usize, to: Option<usize>) -> Result<f64> {
    let d = match to {
        Some(to) => geometry.distance(from, to),
        None => geometry.distance_to_ps(from),
    };
    if d > 0.0 {
        Ok(d)
    } else {
        Err(Error::DegenerateLink { from, to })
    }
}

/// Draws every subordinate→lead and lead→PS amplitude for the given clusters.
/// Clusters are visited in order, the lead's PS link first, then members by id.
pub fn sample_channels<R: Rng + ?Sized>(
    geometry: &Geometry,
    assignment: &ClusterAssignment,
    path_loss: &PathLoss,
    noise_power: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let mut clusters = Vec::with_capacity(assignment.clusters.len());
    for (members, &lead) in assignment.clusters.iter().zip(&assignment.leads) {
        let lead_gain = path_loss.sample(checked_distance(geometry, lead, None)?, rng);
        let mut links = Vec::with_capacity(members.len().saturating_sub(1));
        for &m in members.iter().filter(|&&m| m != lead) {
            links.push((m, path_loss.sample(checked_distance(geometry, m, Some(lead))?, rng)));
        }
        clusters.push(ClusterLinks { lead, lead_gain, members: links });
    }
    Ok(ChannelRealization { clusters, lead_noise: noise_power, ps_noise: noise_power })
}

/// Draws a direct device→PS amplitude for every device.
pub fn sample_direct_channels<R: Rng + ?Sized>(geometry: &Geometry, path_loss: &PathLoss, rng: &mut R) -> Result<Vec<f64>> {
    (0..geometry.len()).map(|k| Ok(path_loss.sample(checked_distance(geometry, k, None)?, rng))).collect()
}
