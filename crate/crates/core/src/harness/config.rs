use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Importance-aware clustering every round plus optimized powers.
    Proposed,
    /// Location-only clustering fixed at the first round.
    Static,
    /// Clustering by cosine similarity of the round's gradients.
    Similarity,
    /// Every transmitter at full power.
    MaxPower,
    /// Single hop: every device transmits straight to the PS.
    Direct,
    /// Powers chosen to minimize the aggregate's MSE alone.
    Mse,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Proposed, Scheme::Static, Scheme::Similarity, Scheme::MaxPower, Scheme::Direct, Scheme::Mse];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Static => "static",
            Scheme::Similarity => "similarity",
            Scheme::MaxPower => "maxpower",
            Scheme::Direct => "direct",
            Scheme::Mse => "mse",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    Iid,
    NonIid,
}

impl FromStr for DataMode {
    type Err = Error;

    /// `synthetic` is accepted as a synonym of `iid` over the generated blobs.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" | "synthetic" => Ok(DataMode::Iid),
            "noniid" | "non-iid" => Ok(DataMode::NonIid),
            _ => Err(Error::Config(format!("unknown data mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Softmax,
    Hidden { width: usize },
    Quadratic,
}

impl FromStr for ModelKind {
    type Err = Error;

    /// `softmax`, `quadratic`, or `hidden` / `hidden:<width>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "softmax" => Ok(ModelKind::Softmax),
            None if s == "quadratic" => Ok(ModelKind::Quadratic),
            None if s == "hidden" => Ok(ModelKind::Hidden { width: 32 }),
            Some(("hidden", w)) => Ok(ModelKind::Hidden { width: parse_num("model", w)? }),
            _ => Err(Error::Config(format!("unknown model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Clusters,
    Power,
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clusters" => Ok(Sweep::Clusters),
            "power" => Ok(Sweep::Power),
            _ => Err(Error::Config(format!("unknown sweep '{s}'"))),
        }
    }
}

pub const CLUSTER_SWEEP: [usize; 5] = [2, 4, 6, 8, 10];
pub const POWER_SWEEP: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub devices: usize,
    pub clusters: usize,
    pub rounds: usize,
    pub batch: usize,
    /// Defaults to `1/(100 L)` when unset.
    pub lr: Option<f64>,
    pub lipschitz: f64,
    pub power_w: f64,
    pub noise_dbm: f64,
    pub omega0_db: f64,
    pub kappa: f64,
    pub ring_inner_m: f64,
    pub ring_outer_m: f64,
    pub data: DataMode,
    pub scheme: Scheme,
    pub model: ModelKind,
    /// Merge-cost weight of importance; defaults to the median inter-device
    /// distance per nat.
    pub rho: Option<f64>,
    pub rho1: f64,
    pub rho2: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Rounds between re-clustering for the importance-aware schemes.
    pub cluster_period: usize,
    pub samples_per_device: usize,
    pub classes: usize,
    pub features: usize,
    pub spread: f64,
    /// Ratio of the largest to the smallest per-feature spread.
    pub anisotropy: f64,
    /// Seed of the synthetic class centers. The task stays fixed while `seed`
    /// varies sampling, placement, channels and noise.
    pub task_seed: u64,
    pub test_fraction: f64,
    /// Target noise of the least-squares model.
    pub label_noise: f64,
    pub idx_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            devices: 50,
            clusters: 5,
            rounds: 300,
            batch: 20,
            lr: None,
            lipschitz: 10.0,
            power_w: 0.2,
            noise_dbm: -80.0,
            omega0_db: -37.0,
            kappa: 3.5,
            ring_inner_m: 150.0,
            ring_outer_m: 200.0,
            data: DataMode::Iid,
            scheme: Scheme::Proposed,
            model: ModelKind::Softmax,
            rho: None,
            rho1: 0.5,
            rho2: None,
            max_iter: 100,
            tol: 1e-6,
            seed: 1,
            cluster_period: 1,
            samples_per_device: 400,
            classes: 10,
            features: 20,
            spread: 0.3,
            anisotropy: 30.0,
            task_seed: 0,
            test_fraction: 0.1,
            label_noise: 0.5,
            idx_dir: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

impl ExperimentConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(1.0 / (100.0 * self.lipschitz))
    }

    /// Sets one option by name; dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "devices" => self.devices = parse_num(key, value)?,
            "clusters" => self.clusters = parse_num(key, value)?,
            "rounds" => self.rounds = parse_num(key, value)?,
            "batch" => self.batch = parse_num(key, value)?,
            "lr" => self.lr = Some(parse_num(key, value)?),
            "lipschitz" => self.lipschitz = parse_num(key, value)?,
            "power_w" => self.power_w = parse_num(key, value)?,
            "noise_dbm" => self.noise_dbm = parse_num(key, value)?,
            "omega0_db" => self.omega0_db = parse_num(key, value)?,
            "kappa" => self.kappa = parse_num(key, value)?,
            "ring_inner_m" => self.ring_inner_m = parse_num(key, value)?,
            "ring_outer_m" => self.ring_outer_m = parse_num(key, value)?,
            "data" => self.data = value.parse()?,
            "scheme" => self.scheme = value.parse()?,
            "model" => self.model = value.parse()?,
            "rho" => self.rho = Some(parse_num(key, value)?),
            "rho1" => self.rho1 = parse_num(key, value)?,
            "rho2" => self.rho2 = Some(parse_num(key, value)?),
            "max_iter" => self.max_iter = parse_num(key, value)?,
            "tol" => self.tol = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "cluster_period" => self.cluster_period = parse_num(key, value)?,
            "samples_per_device" => self.samples_per_device = parse_num(key, value)?,
            "classes" => self.classes = parse_num(key, value)?,
            "features" => self.features = parse_num(key, value)?,
            "spread" => self.spread = parse_num(key, value)?,
            "anisotropy" => self.anisotropy = parse_num(key, value)?,
            "task_seed" => self.task_seed = parse_num(key, value)?,
            "test_fraction" => self.test_fraction = parse_num(key, value)?,
            "label_noise" => self.label_noise = parse_num(key, value)?,
            "idx_dir" => self.idx_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown option '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.devices == 0 {
            return fail("need at least one device");
        }
        if self.scheme != Scheme::Direct && (self.clusters == 0 || self.clusters > self.devices) {
            return Err(Error::InvalidClusterCount { clusters: self.clusters, devices: self.devices });
        }
        if self.batch == 0 {
            return Err(Error::ZeroBatch);
        }
        if !(self.power_w > 0.0 && self.power_w.is_finite()) {
            return fail("power budget must be positive");
        }
        if !(self.lipschitz > 0.0) {
            return fail("lipschitz constant must be positive");
        }
        if !(self.learning_rate() > 0.0) {
            return fail("learning rate must be positive");
        }
        if self.cluster_period == 0 {
            return fail("cluster period must be at least 1");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return fail("test fraction must lie in [0, 1)");
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::SolverOptions(format!("max_iter={} tol={}", self.max_iter, self.tol)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!((c.devices, c.clusters), (50, 5));
        assert_eq!(c.power_w, 0.2);
        assert_eq!(c.noise_dbm, -80.0);
        assert_eq!(c.lipschitz, 10.0);
        assert!((c.learning_rate() - 1e-3).abs() < 1e-18);
        assert_eq!((c.ring_inner_m, c.ring_outer_m), (150.0, 200.0));
        c.validate().unwrap();
    }

    #[test]
    fn file_then_overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_file("# comment\ndevices = 20\npower-w=0.5\nscheme = maxpower\n\nmodel = hidden:8\n").unwrap();
        assert_eq!(c.devices, 20);
        assert_eq!(c.power_w, 0.5);
        assert_eq!(c.scheme, Scheme::MaxPower);
        assert_eq!(c.model, ModelKind::Hidden { width: 8 });
        c.set("devices", "30").unwrap();
        assert_eq!(c.devices, 30);
        assert!(c.apply_file("nonsense").is_err());
        assert!(c.set("colour", "red").is_err());
        assert!(c.set("devices", "many").is_err());
    }

    #[test]
    fn validation_catches_bad_counts() {
        let c = ExperimentConfig { clusters: 60, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::InvalidClusterCount { .. })));
        let c = ExperimentConfig { batch: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("synthetic".parse::<DataMode>().unwrap(), DataMode::Iid);
        assert_eq!("noniid".parse::<DataMode>().unwrap(), DataMode::NonIid);
    }
}
