use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SegError;
use crate::par;
use crate::raster::{FeatureStack, Raster};

/// Multiclass linear model: `score_k(x) = weights[k] · x + bias[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    pub num_classes: usize,
    pub feature_names: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl SoftmaxModel {
    pub fn zeros(num_classes: usize, feature_names: Vec<String>) -> Self {
        let d = feature_names.len();
        Self { num_classes, feature_names, weights: vec![vec![0.0; d]; num_classes], bias: vec![0.0; num_classes] }
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn scores(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.num_classes {
            out[k] = self.weights[k].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[k];
        }
    }

    pub fn validate(&self) -> Result<(), SegError> {
        if self.weights.len() != self.num_classes || self.bias.len() != self.num_classes {
            return Err(SegError::InvalidParameter("class count does not match weights".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| w.len() != self.dim()) {
            return Err(SegError::DimensionMismatch { expected: self.dim(), got: w.len() });
        }
        if !self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(SegError::InvalidParameter("non-finite weight".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierParams {
    pub num_classes: usize,
    /// L2 penalty on all parameters.
    pub lambda: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self { num_classes: 9, lambda: 1e-4, max_iters: 500, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model: SoftmaxModel,
    /// Training loss on standardized features, one entry per accepted step
    /// after the initial value.
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

const CHUNK: usize = 1024;

/// Mean cross-entropy plus `lambda/2 |theta|²` and its gradient.
///
/// `theta` holds `num_classes` rows of `dim + 1` values (weights, then bias);
/// `xs` is row-major with `dim` columns.
pub fn loss_and_gradient(theta: &[f64], xs: &[f64], ys: &[u8], dim: usize, num_classes: usize, lambda: f64) -> (f64, Vec<f64>) {
    let n = ys.len();
    let row = dim + 1;
    let chunks = n.div_ceil(CHUNK);
    // Fixed chunking keeps the summation order independent of thread count.
    let partial: Vec<(f64, Vec<f64>)> = par::map_range(chunks, |c| {
        let mut loss = 0.0;
        let mut grad = vec![0.0; theta.len()];
        let mut s = vec![0.0; num_classes];
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            let x = &xs[i * dim..(i + 1) * dim];
            for k in 0..num_classes {
                let t = &theta[k * row..(k + 1) * row];
                s[k] = t[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + t[dim];
            }
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            let y = ys[i] as usize;
            loss += lse - s[y];
            for k in 0..num_classes {
                let p = (s[k] - lse).exp() - if k == y { 1.0 } else { 0.0 };
                let g = &mut grad[k * row..(k + 1) * row];
                for (gj, xj) in g[..dim].iter_mut().zip(x) {
                    *gj += p * xj;
                }
                g[dim] += p;
            }
        }
        (loss, grad)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (l, g) in partial {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    loss = loss * inv + 0.5 * lambda * theta.iter().map(|t| t * t).sum::<f64>();
    for (g, t) in grad.iter_mut().zip(theta) {
        *g = *g * inv + lambda * t;
    }
    (loss, grad)
}

/// Multinomial logistic regression by full-batch gradient descent with
/// backtracking. Features are standardized internally; the returned model
/// acts on raw features.
pub fn train_pixel_classifier(
    xs: &[f64],
    ys: &[u8],
    feature_names: &[String],
    params: &ClassifierParams,
) -> Result<TrainSummary, SegError> {
    let dim = feature_names.len();
    let k = params.num_classes;
    if ys.is_empty() || xs.len() != ys.len() * dim {
        return Err(SegError::DimensionMismatch { expected: ys.len() * dim, got: xs.len() });
    }
    if let Some(&y) = ys.iter().find(|&&y| usize::from(y) >= k) {
        return Err(SegError::InvalidParameter(format!("label {y} outside {k} classes")));
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(SegError::SingleClass);
    }
    if !(params.lambda >= 0.0) {
        return Err(SegError::InvalidParameter("lambda must be non-negative".into()));
    }
    let n = ys.len();
    let mut mean = vec![0.0; dim];
    let mut scale = vec![0.0; dim];
    for i in 0..n {
        for j in 0..dim {
            mean[j] += xs[i * dim + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for i in 0..n {
        for j in 0..dim {
            scale[j] += (xs[i * dim + j] - mean[j]).powi(2);
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let zs: Vec<f64> = (0..n * dim).map(|i| (xs[i] - mean[i % dim]) / scale[i % dim]).collect();

    let mut theta = vec![0.0; k * (dim + 1)];
    let (mut loss, mut grad) = loss_and_gradient(&theta, &zs, ys, dim, k, params.lambda);
    let mut history = vec![loss];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut gnorm = norm(&grad);
    while iterations < params.max_iters && gnorm >= params.grad_tol {
        iterations += 1;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (l, g) = loss_and_gradient(&cand, &zs, ys, dim, k, params.lambda);
            if l <= loss - 1e-4 * step * gnorm * gnorm {
                theta = cand;
                loss = l;
                grad = g;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        history.push(loss);
        gnorm = norm(&grad);
        step *= 2.0;
    }

    let mut model = SoftmaxModel::zeros(k, feature_names.to_vec());
    for c in 0..k {
        let t = &theta[c * (dim + 1)..(c + 1) * (dim + 1)];
        let mut b = t[dim];
        for j in 0..dim {
            model.weights[c][j] = t[j] / scale[j];
            b -= t[j] * mean[j] / scale[j];
        }
        model.bias[c] = b;
    }
    Ok(TrainSummary { model, loss_history: history, iterations, grad_norm: gnorm })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Arg-max class per pixel (ties to the lower class) and the class scores,
/// pixel-major.
pub fn predict_labels(model: &SoftmaxModel, stack: &FeatureStack) -> Result<(Raster<u8>, Vec<f64>), SegError> {
    if stack.channels() != model.dim() {
        return Err(SegError::DimensionMismatch { expected: model.dim(), got: stack.channels() });
    }
    let k = model.num_classes;
    let n = stack.width * stack.height;
    let per_pixel: Vec<(u8, Vec<f64>)> = par::map_range(n, |i| {
        let mut s = vec![0.0; k];
        model.scores(stack.pixel(i), &mut s);
        let mut best = 0;
        for c in 1..k {
            if s[c] > s[best] {
                best = c;
            }
        }
        (best as u8, s)
    });
    let mut labels = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n * k);
    for (l, s) in per_pixel {
        labels.push(l);
        scores.extend(s);
    }
    Ok((Raster { width: stack.width, height: stack.height, data: labels }, scores))
}

/// Every `stride`-th pixel index starting from a seeded offset.
pub fn subsample_pixels(n: usize, stride: usize, seed: u64) -> Vec<usize> {
    let stride = stride.max(1);
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..stride);
    (offset..n).step_by(stride).collect()
}
