//! Datasets, device shards, and the synthetic generators used at desk scale.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    Real(Vec<f64>),
}

/// Row-major sample matrix with either class labels or real-valued targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    targets: Targets,
}

impl Dataset {
    pub fn classification(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        check_shape(&inputs, dim, labels.len())?;
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, classes: num_classes });
        }
        Ok(Self { inputs, dim, targets: Targets::Classes { labels, num_classes } })
    }

    pub fn regression(inputs: Vec<f64>, dim: usize, targets: Vec<f64>) -> Result<Self> {
        check_shape(&inputs, dim, targets.len())?;
        Ok(Self { inputs, dim, targets: Targets::Real(targets) })
    }

    pub fn len(&self) -> usize {
        match &self.targets {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Real(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { num_classes, .. } => Some(*num_classes),
            Targets::Real(_) => None,
        }
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels[i]),
            Targets::Real(_) => None,
        }
    }

    pub fn target(&self, i: usize) -> Option<f64> {
        match &self.targets {
            Targets::Real(t) => Some(t[i]),
            Targets::Classes { .. } => None,
        }
    }

    pub fn all(&self) -> Shard<'_> {
        Shard { data: self, indices: ShardIndices::Range(self.len()) }
    }

    pub fn shard<'a>(&'a self, indices: &'a [usize]) -> Shard<'a> {
        Shard { data: self, indices: ShardIndices::List(indices) }
    }

    /// Copies the listed rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        let targets = match &self.targets {
            Targets::Classes { labels, num_classes } => {
                Targets::Classes { labels: indices.iter().map(|&i| labels[i]).collect(), num_classes: *num_classes }
            }
            Targets::Real(t) => Targets::Real(indices.iter().map(|&i| t[i]).collect()),
        };
        Dataset { inputs, dim: self.dim, targets }
    }

    /// Random held-out split; returns `(train, test)`.
    pub fn split<R: Rng + ?Sized>(&self, test_fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let (test, train) = order.split_at(n_test.min(self.len()));
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        (self.subset(&train), self.subset(&test))
    }
}

fn check_shape(inputs: &[f64], dim: usize, n: usize) -> Result<()> {
    if dim == 0 || inputs.len() != dim * n {
        return Err(Error::DimensionMismatch { expected: dim * n, got: inputs.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum ShardIndices<'a> {
    Range(usize),
    List(&'a [usize]),
}

/// A borrowed view over a subset of a dataset's rows.
#[derive(Debug, Clone, Copy)]
pub struct Shard<'a> {
    data: &'a Dataset,
    indices: ShardIndices<'a>,
}

impl<'a> Shard<'a> {
    pub fn len(&self) -> usize {
        match self.indices {
            ShardIndices::Range(n) => n,
            ShardIndices::List(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.data
    }

    /// Row index in the underlying dataset of the `pos`-th shard element.
    pub fn row(&self, pos: usize) -> usize {
        match self.indices {
            ShardIndices::Range(_) => pos,
            ShardIndices::List(l) => l[pos],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).map(move |p| self.row(p))
    }
}

/// Per-device index sets into a training dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Iid,
    NonIid,
}

/// Number of label-pair groups used by the non-i.i.d. split.
pub const NONIID_GROUPS: usize = 5;

/// Splits a labelled dataset across `devices`.
///
/// `Iid` shuffles all rows and deals them out in contiguous, near-equal chunks.
/// `NonIid` forms five groups of two consecutive labels and hands each group's
/// rows to its own `devices / 5` devices, so every device sees exactly two classes.
pub fn partition_data<R: Rng + ?Sized>(data: &Dataset, devices: usize, mode: PartitionMode, rng: &mut R) -> Result<Partition> {
    if devices == 0 {
        return Err(Error::Partition("need at least one device".into()));
    }
    if data.len() < devices {
        return Err(Error::Partition(format!("{} samples cannot cover {devices} devices", data.len())));
    }
    match mode {
        PartitionMode::Iid => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(rng);
            Ok(Partition { shards: deal(&order, devices) })
        }
        PartitionMode::NonIid => {
            let num_classes = data.num_classes().ok_or_else(|| Error::Partition("non-iid split needs class labels".into()))?;
            if num_classes != 2 * NONIID_GROUPS {
                return Err(Error::Partition(format!("non-iid split needs {} classes, found {num_classes}", 2 * NONIID_GROUPS)));
            }
            if !devices.is_multiple_of(NONIID_GROUPS) {
                return Err(Error::Partition(format!("{devices} devices not divisible by {NONIID_GROUPS}")));
            }
            let per_group = devices / NONIID_GROUPS;
            let mut shards = Vec::with_capacity(devices);
            for group in 0..NONIID_GROUPS {
                let mut rows: Vec<usize> = (0..data.len()).filter(|&i| data.label(i).map(|l| l / 2) == Some(group)).collect();
                if rows.len() < per_group {
                    return Err(Error::Partition(format!("label group {group} has too few samples")));
                }
                rows.shuffle(rng);
                shards.extend(deal(&rows, per_group));
            }
            Ok(Partition { shards })
        }
    }
}

fn deal(order: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = order.len() / parts;
    let extra = order.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        let mut shard = order[start..start + len].to_vec();
        shard.sort_unstable();
        out.push(shard);
        start += len;
    }
    out
}

/// Gaussian class blobs: centers drawn from N(0, I), samples scattered with
/// standard deviation `spread` along the first feature, growing geometrically
/// to `spread · anisotropy` along the last. Classes are balanced. The centers
/// come from their own seed so that one task can be sampled many times.
///
/// With `anisotropy > 1` the nearest-mean rule, which is what a linear model
/// starts from, is no longer optimal, so accuracy keeps improving with
/// training instead of saturating after a few steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub anisotropy: f64,
    pub samples: usize,
    pub seed: u64,
    pub center_seed: u64,
}

impl BlobSpec {
    pub fn generate(&self) -> Result<Dataset> {
        use rand::SeedableRng;
        if !(self.anisotropy >= 1.0) {
            return Err(Error::Config(format!("anisotropy must be at least 1, got {}", self.anisotropy)));
        }
        if self.classes == 0 || self.dim == 0 {
            return Err(Error::Config("blobs need at least one class and one dimension".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.center_seed);
        let centers: Vec<f64> = (0..self.classes * self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let scales: Vec<f64> = (0..self.dim)
            .map(|j| {
                let t = if self.dim > 1 { j as f64 / (self.dim - 1) as f64 } else { 0.0 };
                self.spread * self.anisotropy.powf(t)
            })
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let mut inputs = Vec::with_capacity(self.samples * self.dim);
        let mut labels = Vec::with_capacity(self.samples);
        for i in 0..self.samples {
            let c = i % self.classes;
            labels.push(c);
            for j in 0..self.dim {
                let z: f64 = rng.sample(StandardNormal);
                inputs.push(centers[c * self.dim + j] + scales[j] * z);
            }
        }
        Dataset::classification(inputs, self.dim, labels, self.classes)
    }
}
