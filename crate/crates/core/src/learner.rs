//! Weighted logistic regression, the CTR model every technique feeds.
//!
//! The objective is
//! `(1 / sum w) * sum_i w_i * logloss(y_i, sigmoid(theta . x_i + b)) + (l2 / 2) * |theta|^2`
//! on standardized features, minimized by full-batch gradient descent
//! (preconditioned by a fixed curvature bound) with Armijo backtracking. All sums run sequentially in instance order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub features: Vec<f64>,
    pub label: u8,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once the relative loss decrease of an iteration falls below this.
    pub tolerance: f64,
    /// Initial step; adapted by backtracking.
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2: 1e-4,
            max_iters: 500,
            tolerance: 1e-8,
            learning_rate: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("train.l2", "must be finite and >= 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("train.max_iters", "must be >= 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::config("train.tolerance", "must be > 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
}

impl CtrModel {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        predict(self, features)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: CtrModel = serde_json::from_str(&text)?;
        let d = m.coefficients.len();
        if m.feature_means.len() != d || m.feature_stds.len() != d {
            return Err(Error::Validation("model vectors have inconsistent lengths".into()));
        }
        if m.feature_stds.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation("model feature_stds must be > 0".into()));
        }
        Ok(m)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln s(z) + (1-y) ln(1-s(z))]` without overflow.
fn logistic_loss(label: u8, z: f64) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - if label == 1 { z } else { 0.0 }
}

/// The regularized weighted objective over a fixed design matrix.
///
/// Parameters are laid out as `[theta_0, .., theta_{d-1}, intercept]`; the
/// intercept is not regularized.
#[derive(Debug, Clone)]
pub struct WeightedObjective {
    rows: Vec<f64>,
    dim: usize,
    labels: Vec<u8>,
    /// Weights divided by their sum.
    weights: Vec<f64>,
    l2: f64,
}

impl WeightedObjective {
    pub fn new(features: &[Vec<f64>], labels: &[u8], weights: &[f64], l2: f64) -> Result<Self> {
        let n = features.len();
        if labels.len() != n || weights.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: labels.len().min(weights.len()),
            });
        }
        let dim = features.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(n * dim);
        for f in features {
            if f.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: f.len(),
                });
            }
            rows.extend_from_slice(f);
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Validation("weights must sum to > 0".into()));
        }
        Ok(WeightedObjective {
            rows,
            dim,
            labels: labels.to_vec(),
            weights: weights.iter().map(|w| w / total).collect(),
            l2,
        })
    }

    pub fn num_params(&self) -> usize {
        self.dim + 1
    }

    fn margin(&self, i: usize, params: &[f64]) -> f64 {
        let row = &self.rows[i * self.dim..(i + 1) * self.dim];
        row.iter().zip(params).map(|(x, t)| x * t).sum::<f64>() + params[self.dim]
    }

    fn penalty(&self, params: &[f64]) -> f64 {
        0.5 * self.l2 * params[..self.dim].iter().map(|t| t * t).sum::<f64>()
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.labels.len() {
            total += self.weights[i] * logistic_loss(self.labels[i], self.margin(i, params));
        }
        total + self.penalty(params)
    }

    /// `sum_i w_i [x_i, 1] [x_i, 1]^T / 4 + l2 * diag(1, .., 1, 0)`: the
    /// Hessian of the loss never exceeds this matrix, since
    /// `sigmoid' <= 1/4`.
    pub fn curvature_bound(&self) -> Vec<f64> {
        let p = self.dim + 1;
        let mut m = vec![0.0; p * p];
        let mut row = vec![1.0; p];
        for i in 0..self.labels.len() {
            row[..self.dim].copy_from_slice(&self.rows[i * self.dim..(i + 1) * self.dim]);
            let w = 0.25 * self.weights[i];
            for a in 0..p {
                let wa = w * row[a];
                for b in a..p {
                    m[a * p + b] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            if a < self.dim {
                m[a * p + a] += self.l2;
            }
            for b in 0..a {
                m[a * p + b] = m[b * p + a];
            }
        }
        m
    }

    /// Loss and its gradient with respect to `params`.
    pub fn loss_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim;
        let mut grad = vec![0.0; d + 1];
        let mut total = 0.0;
        for i in 0..self.labels.len() {
            let z = self.margin(i, params);
            let w = self.weights[i];
            total += w * logistic_loss(self.labels[i], z);
            let r = w * (sigmoid(z) - self.labels[i] as f64);
            let row = &self.rows[i * d..(i + 1) * d];
            for (g, x) in grad[..d].iter_mut().zip(row) {
                *g += r * x;
            }
            grad[d] += r;
        }
        for (g, t) in grad[..d].iter_mut().zip(&params[..d]) {
            *g += self.l2 * t;
        }
        (total + self.penalty(params), grad)
    }
}

/// Weighted mean and std per column; constant columns get std 1 and an
/// exact mean so they standardize to exactly 0.
fn standardization(instances: &[TrainingInstance], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = instances.iter().map(|t| t.weight).sum();
    let mut means = vec![0.0; dim];
    for t in instances {
        for (m, x) in means.iter_mut().zip(&t.features) {
            *m += t.weight * x;
        }
    }
    for m in &mut means {
        *m /= total;
    }
    let mut vars = vec![0.0; dim];
    for t in instances {
        for ((v, x), m) in vars.iter_mut().zip(&t.features).zip(&means) {
            *v += t.weight * (x - m) * (x - m);
        }
    }
    let first = &instances[0].features;
    let mut stds = vec![1.0; dim];
    for j in 0..dim {
        if instances.iter().all(|t| t.features[j] == first[j]) {
            means[j] = first[j];
        } else {
            let sd = (vars[j] / total).sqrt();
            stds[j] = if sd > 0.0 { sd } else { 1.0 };
        }
    }
    (means, stds)
}

/// Loss after every accepted iteration, starting with the initial loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub converged: bool,
}

pub fn train(instances: &[TrainingInstance], config: &TrainConfig) -> Result<CtrModel> {
    train_with_trace(instances, config).map(|(m, _)| m)
}

pub fn train_with_trace(
    instances: &[TrainingInstance],
    config: &TrainConfig,
) -> Result<(CtrModel, TrainTrace)> {
    config.validate()?;
    let Some(first) = instances.first() else {
        return Err(Error::DegenerateLabels);
    };
    let dim = first.features.len();
    for (i, t) in instances.iter().enumerate() {
        if t.features.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: t.features.len(),
            });
        }
        if t.features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!("instance {i} has a non-finite feature")));
        }
        if !(t.weight > 0.0 && t.weight.is_finite()) {
            return Err(Error::Validation(format!("instance {i} has non-positive weight")));
        }
        if t.label > 1 {
            return Err(Error::Validation(format!("instance {i} label must be 0 or 1")));
        }
    }
    let positives = instances.iter().filter(|t| t.label == 1).count();
    if positives == 0 || positives == instances.len() {
        return Err(Error::DegenerateLabels);
    }

    let (means, stds) = standardization(instances, dim);
    let standardized: Vec<Vec<f64>> = instances
        .iter()
        .map(|t| {
            t.features
                .iter()
                .zip(means.iter().zip(&stds))
                .map(|(x, (m, s))| (x - m) / s)
                .collect()
        })
        .collect();
    let labels: Vec<u8> = instances.iter().map(|t| t.label).collect();
    let weights: Vec<f64> = instances.iter().map(|t| t.weight).collect();
    let objective = WeightedObjective::new(&standardized, &labels, &weights, config.l2)?;
    drop(standardized);

    let (params, trace) = minimize(&objective, config);
    Ok((
        CtrModel {
            coefficients: params[..dim].to_vec(),
            intercept: params[dim],
            feature_means: means,
            feature_stds: stds,
        },
        trace,
    ))
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Steps up to 2 in the metric of the curvature bound are non-expansive.
const MAX_STEP: f64 = 2.0;

/// Lower Cholesky factor of a symmetric positive semi-definite matrix,
/// with a small diagonal shift if needed so the factor exists.
fn cholesky(m: &[f64], p: usize) -> Vec<f64> {
    let scale = (0..p).map(|a| m[a * p + a]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut shift = 0.0;
    loop {
        let mut l = vec![0.0; p * p];
        let mut ok = true;
        'outer: for a in 0..p {
            for b in 0..=a {
                let mut sum = m[a * p + b] + if a == b { shift } else { 0.0 };
                for k in 0..b {
                    sum -= l[a * p + k] * l[b * p + k];
                }
                if a == b {
                    if !(sum > 1e-13 * scale) {
                        ok = false;
                        break 'outer;
                    }
                    l[a * p + a] = sum.sqrt();
                } else {
                    l[a * p + b] = sum / l[b * p + b];
                }
            }
        }
        if ok {
            return l;
        }
        shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
    }
}

/// Solves `L L^T x = g`.
fn cholesky_solve(l: &[f64], p: usize, g: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for a in 0..p {
        let mut sum = g[a];
        for k in 0..a {
            sum -= l[a * p + k] * y[k];
        }
        y[a] = sum / l[a * p + a];
    }
    for a in (0..p).rev() {
        let mut sum = y[a];
        for k in a + 1..p {
            sum -= l[k * p + a] * y[k];
        }
        y[a] = sum / l[a * p + a];
    }
    y
}

/// Gradient descent preconditioned by the fixed curvature bound `A`
/// (direction `-A^-1 g`), with Armijo backtracking. A unit step is the
/// classic majorize-minimize update and always decreases the loss; each
/// iteration starts from the Barzilai-Borwein step of the previous move in
/// the `A` metric, capped at 2 so the update stays non-expansive and runs
/// whose inputs differ only by rounding (rescaled or duplicated weights)
/// stay together.
fn minimize(objective: &WeightedObjective, config: &TrainConfig) -> (Vec<f64>, TrainTrace) {
    let p = objective.num_params();
    let bound = objective.curvature_bound();
    let factor = cholesky(&bound, p);
    let mut params = vec![0.0; p];
    let (mut loss, mut grad) = objective.loss_and_gradient(&params);
    let mut losses = vec![loss];
    let mut step = config.learning_rate.min(MAX_STEP);
    let mut converged = false;
    let mut candidate = params.clone();
    for _ in 0..config.max_iters {
        let direction = cholesky_solve(&factor, p, &grad);
        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
        if !(slope > 0.0) {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            for ((c, x), d) in candidate.iter_mut().zip(&params).zip(&direction) {
                *c = x - step * d;
            }
            let (trial, trial_grad) = objective.loss_and_gradient(&candidate);
            if trial <= loss - ARMIJO * step * slope {
                accepted = Some((trial, trial_grad));
                break;
            }
            step *= 0.5;
        }
        let Some((new_loss, new_grad)) = accepted else {
            converged = true;
            break;
        };
        let delta: Vec<f64> = candidate.iter().zip(&params).map(|(c, x)| c - x).collect();
        let mut s_a_s = 0.0;
        for a in 0..p {
            let row: f64 = (0..p).map(|b| bound[a * p + b] * delta[b]).sum();
            s_a_s += delta[a] * row;
        }
        let s_y: f64 = (0..p).map(|a| delta[a] * (new_grad[a] - grad[a])).sum();
        std::mem::swap(&mut params, &mut candidate);
        let decrease = (loss - new_loss) / loss.abs().max(f64::MIN_POSITIVE);
        loss = new_loss;
        grad = new_grad;
        losses.push(loss);
        step = if s_y > 0.0 { s_a_s / s_y } else { MAX_STEP }.clamp(1e-10, MAX_STEP);
        if decrease < config.tolerance {
            converged = true;
            break;
        }
    }
    (params, TrainTrace { losses, converged })
}

/// `sigmoid(theta . standardize(x) + b)`, clamped strictly inside (0, 1).
pub fn predict(model: &CtrModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: features.len(),
        });
    }
    let z: f64 = features
        .iter()
        .zip(&model.coefficients)
        .zip(model.feature_means.iter().zip(&model.feature_stds))
        .map(|((x, t), (m, s))| t * (x - m) / s)
        .sum::<f64>()
        + model.intercept;
    let p = sigmoid(z);
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}
