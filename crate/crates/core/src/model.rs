//! Trainable models and the per-device learning primitives: local loss,
//! mini-batch gradients, the global SGD step, and entropy-based data importance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Shard, Targets};
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on a probability vector's sum.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SoftmaxRegression,
    OneHiddenLayer {
        width: usize,
    },
    /// Scalar-output least squares, `f = ½(w·x − y)²`.
    Quadratic,
}

impl Architecture {
    pub fn param_count(&self, input_dim: usize, num_classes: usize) -> usize {
        match *self {
            Architecture::SoftmaxRegression => num_classes * input_dim + num_classes,
            Architecture::OneHiddenLayer { width } => width * input_dim + width + num_classes * width + num_classes,
            Architecture::Quadratic => input_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

enum Target {
    Class(usize),
    Real(f64),
}

impl Model {
    pub fn zeros(arch: Architecture, input_dim: usize, num_classes: usize) -> Self {
        let num_classes = if arch == Architecture::Quadratic { 1 } else { num_classes };
        let params = vec![0.0; arch.param_count(input_dim, num_classes)];
        Self { arch, input_dim, num_classes, params }
    }

    /// Zero weights for the linear models; scaled Gaussian weights for the
    /// hidden layer (zero hidden weights would keep every unit identical).
    pub fn init<R: Rng + ?Sized>(arch: Architecture, input_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        let mut model = Self::zeros(arch, input_dim, num_classes);
        if let Architecture::OneHiddenLayer { width } = arch {
            let s1 = 1.0 / (input_dim as f64).sqrt();
            let s2 = 1.0 / (width as f64).sqrt();
            let (w1, rest) = model.params.split_at_mut(width * input_dim);
            for w in w1.iter_mut() {
                *w = s1 * rng.sample::<f64, _>(StandardNormal);
            }
            let w2 = &mut rest[width..width + num_classes * width];
            for w in w2.iter_mut() {
                *w = s2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        model
    }

    pub fn with_params(arch: Architecture, input_dim: usize, num_classes: usize, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(arch, input_dim, num_classes);
        if params.len() != model.params.len() {
            return Err(Error::DimensionMismatch { expected: model.params.len(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Flattened parameter count `M`.
    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn is_probabilistic(&self) -> bool {
        self.arch != Architecture::Quadratic
    }

    fn logits(&self, x: &[f64], hidden: Option<&mut Vec<f64>>) -> Vec<f64> {
        let d = self.input_dim;
        let c = self.num_classes;
        match self.arch {
            Architecture::SoftmaxRegression => {
                let mut z = vec![0.0; c];
                self.linear_logits(x, &mut z);
                z
            }
            Architecture::OneHiddenLayer { width } => {
                let (w1, rest) = self.params.split_at(width * d);
                let (b1, rest) = rest.split_at(width);
                let (w2, b2) = rest.split_at(c * width);
                let h: Vec<f64> = (0..width).map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh()).collect();
                let z = (0..c).map(|k| dot(&w2[k * width..(k + 1) * width], &h) + b2[k]).collect();
                if let Some(out) = hidden {
                    *out = h;
                }
                z
            }
            Architecture::Quadratic => vec![dot(&self.params, x)],
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !self.is_probabilistic() {
            return Err(Error::NotProbabilistic);
        }
        Ok(softmax(&self.logits(x, None)))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let z = self.logits(x, None);
        argmax(&z)
    }

    /// Softmax-regression logits, accumulated feature by feature so the
    /// classes form independent sums.
    fn linear_logits(&self, x: &[f64], out: &mut [f64]) {
        let d = self.input_dim;
        let (w, b) = self.params.split_at(self.num_classes * d);
        out.fill(0.0);
        for (j, &xj) in x.iter().enumerate() {
            for (k, o) in out.iter_mut().enumerate() {
                *o += w[k * d + j] * xj;
            }
        }
        for (o, bk) in out.iter_mut().zip(b) {
            *o += bk;
        }
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        if self.arch == Architecture::SoftmaxRegression {
            self.linear_logits(x, out);
        } else {
            out.copy_from_slice(&self.logits(x, None));
        }
    }

    /// Adds `scale · ∇f(w; (x, target))` into `out`.
    fn accumulate_gradient(&self, x: &[f64], target: Target, scale: f64, out: &mut [f64]) {
        let d = self.input_dim;
        let c = self.num_classes;
        match (self.arch, target) {
            (Architecture::Quadratic, Target::Real(y)) => {
                let r = (dot(&self.params, x) - y) * scale;
                axpy(r, x, out);
            }
            (Architecture::SoftmaxRegression, Target::Class(y)) => {
                let mut delta = softmax(&self.logits(x, None));
                delta[y] -= 1.0;
                let (gw, gb) = out.split_at_mut(c * d);
                for k in 0..c {
                    axpy(scale * delta[k], x, &mut gw[k * d..(k + 1) * d]);
                    gb[k] += scale * delta[k];
                }
            }
            (Architecture::OneHiddenLayer { width }, Target::Class(y)) => {
                let mut h = Vec::new();
                let mut delta = softmax(&self.logits(x, Some(&mut h)));
                delta[y] -= 1.0;
                let w2 = &self.params[width * d + width..width * d + width + c * width];
                let (gw1, rest) = out.split_at_mut(width * d);
                let (gb1, rest) = rest.split_at_mut(width);
                let (gw2, gb2) = rest.split_at_mut(c * width);
                let mut back = vec![0.0; width];
                for k in 0..c {
                    let dk = scale * delta[k];
                    axpy(dk, &h, &mut gw2[k * width..(k + 1) * width]);
                    gb2[k] += dk;
                    axpy(delta[k], &w2[k * width..(k + 1) * width], &mut back);
                }
                for j in 0..width {
                    let pre = scale * back[j] * (1.0 - h[j] * h[j]);
                    axpy(pre, x, &mut gw1[j * d..(j + 1) * d]);
                    gb1[j] += pre;
                }
            }
            _ => unreachable!("target kind checked by caller"),
        }
    }

    fn target_at(&self, shard: &Shard<'_>, row: usize) -> Result<Target> {
        match (shard.dataset().targets(), self.arch) {
            (Targets::Real(t), Architecture::Quadratic) => Ok(Target::Real(t[row])),
            (Targets::Classes { labels, num_classes }, arch) if arch != Architecture::Quadratic => {
                if *num_classes != self.num_classes {
                    return Err(Error::DimensionMismatch { expected: self.num_classes, got: *num_classes });
                }
                Ok(Target::Class(labels[row]))
            }
            _ => Err(Error::Config("model and dataset target kinds differ".into())),
        }
    }

    fn check_input(&self, shard: &Shard<'_>) -> Result<()> {
        if shard.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if shard.dataset().dim() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: shard.dataset().dim() });
        }
        Ok(())
    }

    /// Gradient of a single shard element, used for variance estimates.
    pub fn sample_gradient(&self, shard: &Shard<'_>, pos: usize) -> Result<Vec<f64>> {
        self.check_input(shard)?;
        let row = shard.row(pos);
        let mut g = vec![0.0; self.dim()];
        self.accumulate_gradient(shard.dataset().input(row), self.target_at(shard, row)?, 1.0, &mut g);
        Ok(g)
    }

    fn mean_gradient(&self, shard: &Shard<'_>, positions: impl ExactSizeIterator<Item = usize>) -> Result<Vec<f64>> {
        let scale = 1.0 / positions.len() as f64;
        let mut g = vec![0.0; self.dim()];
        for pos in positions {
            let row = shard.row(pos);
            self.accumulate_gradient(shard.dataset().input(row), self.target_at(shard, row)?, scale, &mut g);
        }
        Ok(g)
    }
}

/// Mean sample loss over the shard.
pub fn local_loss(model: &Model, shard: &Shard<'_>) -> Result<f64> {
    Ok(evaluate(model, shard)?.0)
}

/// Mean loss and mean predictive entropy over the shard from one pass; the
/// entropy is zero for the least-squares model.
pub fn evaluate(model: &Model, shard: &Shard<'_>) -> Result<(f64, f64)> {
    model.check_input(shard)?;
    let cap = -PROB_FLOOR.ln();
    let mut z = vec![0.0; model.num_classes];
    let (mut loss, mut spread) = (0.0, 0.0);
    for row in shard.rows() {
        let x = shard.dataset().input(row);
        match model.target_at(shard, row)? {
            Target::Real(y) => {
                let r = dot(&model.params, x) - y;
                loss += 0.5 * r * r;
            }
            Target::Class(y) => {
                model.logits_into(x, &mut z);
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let (mut sum, mut weighted) = (0.0, 0.0);
                for &v in &z {
                    let e = (v - max).exp();
                    sum += e;
                    weighted += e * (v - max);
                }
                // log-sum-exp and H = lse − Σ p z, both relative to the max logit
                let lse = sum.ln();
                loss += (lse - (z[y] - max)).min(cap);
                spread += (lse - weighted / sum).max(0.0);
            }
        }
    }
    let n = shard.len() as f64;
    if !(loss.is_finite() && spread.is_finite()) {
        return Err(Error::InvalidProbabilities(f64::NAN));
    }
    Ok((loss / n, spread / n))
}

/// Mini-batch gradient over `batch` shard elements drawn without replacement.
/// A batch equal to the shard size uses every element in order, so no
/// randomness is consumed.
pub fn local_gradient<R: Rng + ?Sized>(model: &Model, shard: &Shard<'_>, batch: usize, rng: &mut R) -> Result<Vec<f64>> {
    model.check_input(shard)?;
    if batch == 0 {
        return Err(Error::ZeroBatch);
    }
    if batch > shard.len() {
        return Err(Error::BatchExceedsShard { batch, shard: shard.len() });
    }
    if batch == shard.len() {
        return model.mean_gradient(shard, 0..shard.len());
    }
    let picks = rand::seq::index::sample(rng, shard.len(), batch);
    model.mean_gradient(shard, picks.into_iter())
}

pub fn full_gradient(model: &Model, shard: &Shard<'_>) -> Result<Vec<f64>> {
    model.check_input(shard)?;
    model.mean_gradient(shard, 0..shard.len())
}

/// One SGD step `w ← w − γ·g`.
pub fn global_update(model: &Model, aggregated: &[f64], learning_rate: f64) -> Result<Model> {
    if aggregated.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: aggregated.len() });
    }
    if !(learning_rate > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
    }
    let params = model.params.iter().zip(aggregated).map(|(w, g)| w - learning_rate * g).collect();
    Ok(Model { params, ..model.clone() })
}

/// Shannon entropy in nats of a probability vector.
pub fn entropy(p: &[f64]) -> Result<f64> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL || p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidProbabilities(sum));
    }
    Ok(-p.iter().map(|&v| v * v.max(PROB_FLOOR).ln()).sum::<f64>())
}

/// Mean predictive entropy of the model over the shard.
pub fn data_importance(model: &Model, shard: &Shard<'_>) -> Result<f64> {
    if !model.is_probabilistic() {
        return Err(Error::NotProbabilistic);
    }
    Ok(evaluate(model, shard)?.1)
}

pub fn accuracy(model: &Model, shard: &Shard<'_>) -> Result<f64> {
    model.check_input(shard)?;
    let mut hits = 0usize;
    let mut z = vec![0.0; model.num_classes];
    for row in shard.rows() {
        match model.target_at(shard, row)? {
            Target::Class(y) => {
                model.logits_into(shard.dataset().input(row), &mut z);
                hits += usize::from(argmax(&z) == y);
            }
            Target::Real(_) => return Err(Error::NotProbabilistic),
        }
    }
    Ok(hits as f64 / shard.len() as f64)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
