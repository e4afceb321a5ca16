use serde::{Deserialize, Serialize};

use super::DetectError;

/// `score = weights · x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if !self.weights.iter().chain(std::iter::once(&self.bias)).all(|v| v.is_finite()) {
            return Err(DetectError::InvalidParameter("non-finite model weight".into()));
        }
        Ok(())
    }
}

pub fn rescore(model: &LinearModel, x: &[f64]) -> Result<f64, DetectError> {
    if x.len() != model.dim() {
        return Err(DetectError::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    Ok(model.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.bias)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// Cost multiplier for positive examples; negatives use 1.
    pub pos_weight: f64,
    pub max_epochs: usize,
    /// Stop once primal minus dual objective falls below this.
    pub gap_tol: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 4.0, pos_weight: 4.0, max_epochs: 1000, gap_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: LinearModel,
    pub epochs: usize,
    /// `½|w|² - Σα` after each epoch; never increases.
    pub dual_history: Vec<f64>,
    pub primal: f64,
    pub gap: f64,
}

/// Primal objective `½|w|² + ½b² + Σ C_i max(0, 1 - y_i (w·x_i + b))`.
/// The bias is regularized like the weights.
pub fn primal_objective(model: &LinearModel, xs: &[Vec<f64>], ys: &[f64], params: &SvmParams) -> f64 {
    let reg = 0.5 * (model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias);
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let s = model.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.bias;
            cost(y, params) * (1.0 - y * s).max(0.0)
        })
        .sum();
    reg + loss
}

fn cost(y: f64, params: &SvmParams) -> f64 {
    if y > 0.0 {
        params.c * params.pos_weight
    } else {
        params.c
    }
}

/// L2-regularized hinge-loss SVM with class-weighted costs, solved by dual
/// coordinate descent over the examples in input order. The bias enters as
/// a constant feature. Results depend only on the inputs.
pub fn train_rescorer(xs: &[Vec<f64>], ys: &[f64], params: &SvmParams) -> Result<TrainReport, DetectError> {
    if xs.is_empty() {
        return Err(DetectError::Empty);
    }
    if xs.len() != ys.len() {
        return Err(DetectError::DimensionMismatch { expected: xs.len(), got: ys.len() });
    }
    if !(params.c > 0.0 && params.pos_weight > 0.0) {
        return Err(DetectError::InvalidParameter("costs must be positive".into()));
    }
    let d = xs[0].len();
    if let Some(x) = xs.iter().find(|x| x.len() != d) {
        return Err(DetectError::DimensionMismatch { expected: d, got: x.len() });
    }
    if let Some(y) = ys.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(DetectError::InvalidParameter(format!("label {y} is not +1 or -1")));
    }
    if !(ys.contains(&1.0) && ys.contains(&-1.0)) {
        return Err(DetectError::SingleClass);
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DetectError::InvalidParameter("non-finite feature".into()));
    }

    let n = xs.len();
    // Augmented weights: w[d] is the bias.
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let q: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
    let upper: Vec<f64> = ys.iter().map(|&y| cost(y, params)).collect();
    let dot = |w: &[f64], x: &[f64]| w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d];

    let mut history = Vec::new();
    let mut epochs = 0;
    let mut model = LinearModel { weights: vec![0.0; d], bias: 0.0 };
    let mut primal = f64::INFINITY;
    let mut gap = f64::INFINITY;
    while epochs < params.max_epochs {
        epochs += 1;
        for i in 0..n {
            let g = ys[i] * dot(&w, &xs[i]) - 1.0;
            let next = (alpha[i] - g / q[i]).clamp(0.0, upper[i]);
            let delta = next - alpha[i];
            if delta != 0.0 {
                alpha[i] = next;
                let s = delta * ys[i];
                for (wj, xj) in w[..d].iter_mut().zip(&xs[i]) {
                    *wj += s * xj;
                }
                w[d] += s;
            }
        }
        let half_norm = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        let dual_min = half_norm - alpha.iter().sum::<f64>();
        history.push(dual_min);
        model = LinearModel { weights: w[..d].to_vec(), bias: w[d] };
        primal = primal_objective(&model, xs, ys, params);
        gap = primal + dual_min;
        if gap < params.gap_tol {
            break;
        }
    }
    if gap >= params.gap_tol {
        log::info!("svm: stopped after {epochs} epochs with duality gap {gap:.3e}");
    }
    Ok(TrainReport { model, epochs, dual_history: history, primal, gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = vec![vec![2.0, 1.0], vec![3.0, 2.5], vec![2.5, 0.0], vec![-1.0, -1.0], vec![-2.0, 0.5], vec![0.0, -2.0]];
        let ys = vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        (xs, ys)
    }

    #[test]
    fn separable_set_is_fit() {
        let (xs, ys) = toy();
        let r = train_rescorer(&xs, &ys, &SvmParams::default()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!(rescore(&r.model, x).unwrap() * y > 0.0);
        }
        assert!(r.gap < 1e-6);
        assert!(r.dual_history.windows(2).all(|p| p[1] <= p[0] + 1e-12));
    }

    #[test]
    fn rescore_examples() {
        let m = LinearModel { weights: vec![0.0; 3], bias: 0.5 };
        assert_eq!(rescore(&m, &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        let m = LinearModel { weights: vec![1.0, 0.0], bias: 0.0 };
        assert_eq!(rescore(&m, &[0.7, 9.0]).unwrap(), 0.7);
        assert!(rescore(&m, &[1.0]).is_err());
    }

    #[test]
    fn single_class_rejected() {
        let (xs, _) = toy();
        assert_eq!(train_rescorer(&xs, &[1.0; 6], &SvmParams::default()), Err(DetectError::SingleClass));
    }
}
