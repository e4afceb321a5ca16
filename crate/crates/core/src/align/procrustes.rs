use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::geometry::Vec2;

/// `p -> scale * R(theta) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity2D {
    pub scale: f64,
    pub theta: f64,
    pub translation: [f64; 2],
}

impl Similarity2D {
    pub fn identity() -> Self {
        Self { scale: 1.0, theta: 0.0, translation: [0.0, 0.0] }
    }

    pub fn apply(&self, p: &Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(self.scale * (c * p.x - s * p.y) + self.translation[0], self.scale * (s * p.x + c * p.y) + self.translation[1])
    }

    /// Sum of squared residuals over paired points.
    pub fn objective(&self, src: &[Vec2], dst: &[Vec2]) -> f64 {
        src.iter().zip(dst).map(|(a, b)| (self.apply(a) - b).norm_squared()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcrustesFit {
    pub transform: Similarity2D,
    /// Root-mean-square residual, meters.
    pub rms: f64,
}

/// Closed-form least-squares similarity mapping `src[i]` onto `dst[i]`.
///
/// Treating points as complex numbers, the optimal `scale * e^{i theta}` is
/// `Σ conj(a_i) b_i / Σ |a_i|²` over centered coordinates.
pub fn procrustes2d(src: &[Vec2], dst: &[Vec2]) -> Result<ProcrustesFit, AlignError> {
    if src.len() != dst.len() {
        return Err(AlignError::Mismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(AlignError::TooFewPoints { needed: 3, got: src.len() });
    }
    let n = src.len() as f64;
    let mean_a = src.iter().sum::<Vec2>() / n;
    let mean_b = dst.iter().sum::<Vec2>() / n;
    let (mut re, mut im, mut norm) = (0.0, 0.0, 0.0);
    for (a, b) in src.iter().zip(dst) {
        let (a, b) = (a - mean_a, b - mean_b);
        re += a.x * b.x + a.y * b.y;
        im += a.x * b.y - a.y * b.x;
        norm += a.norm_squared();
    }
    let spread = src.iter().map(|p| p.norm_squared()).sum::<f64>().max(1.0);
    if norm <= 1e-20 * spread {
        return Err(AlignError::Degenerate("source points are coincident".into()));
    }
    let (re, im) = (re / norm, im / norm);
    let scale = re.hypot(im);
    if scale <= 0.0 || !scale.is_finite() {
        return Err(AlignError::Degenerate("source and target are uncorrelated".into()));
    }
    let theta = im.atan2(re);
    let rotated = Similarity2D { scale, theta, translation: [0.0, 0.0] }.apply(&mean_a);
    let t = mean_b - rotated;
    let transform = Similarity2D { scale, theta, translation: [t.x, t.y] };
    let rms = (transform.objective(src, dst) / n).sqrt();
    Ok(ProcrustesFit { transform, rms })
}
