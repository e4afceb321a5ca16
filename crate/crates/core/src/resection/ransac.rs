use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::p3p::{reprojection_error, solve_p3p};
use super::refine::refine_pose;
use super::{Correspondence, ResectError};
use crate::geometry::{Intrinsics, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    /// Reprojection threshold, pixels.
    pub inlier_px: f64,
    pub confidence: f64,
    pub max_iters: usize,
    /// A hypothesis needs at least this many inliers (capped at the input
    /// size) to be reported.
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { inlier_px: 4.0, confidence: 0.999, max_iters: 10_000, min_inliers: 8, seed: 0 }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), ResectError> {
        if !(self.inlier_px.is_finite() && self.inlier_px > 0.0) {
            return Err(ResectError::InvalidParameter(format!("inlier_px {} must be > 0", self.inlier_px)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(ResectError::InvalidParameter(format!("confidence {} not in (0, 1)", self.confidence)));
        }
        if self.max_iters == 0 {
            return Err(ResectError::InvalidParameter("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub pose: Pose,
    /// Indices into the input correspondences, ascending.
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

const SAMPLE: usize = 4;

/// P3P inside RANSAC. Each sample draws four correspondences: three feed
/// the minimal solver, the fourth picks among its candidates. The winning
/// hypothesis is refined on its inliers.
///
/// The sample sequence depends only on `params.seed`.
pub fn ransac_resect(
    corrs: &[Correspondence],
    intrinsics: &Intrinsics,
    params: &RansacParams,
) -> Result<RansacResult, ResectError> {
    params.validate()?;
    if corrs.len() < SAMPLE {
        return Err(ResectError::TooFewCorrespondences { needed: SAMPLE, got: corrs.len() });
    }
    let n = corrs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, f64, Pose)> = None;
    let mut needed = params.max_iters;
    let mut iterations = 0;

    while iterations < needed.min(params.max_iters) {
        iterations += 1;
        let sample = index::sample(&mut rng, n, SAMPLE).into_vec();
        let minimal = [corrs[sample[0]], corrs[sample[1]], corrs[sample[2]]];
        let Ok(candidates) = solve_p3p(&minimal, intrinsics) else { continue };
        debug_assert!(candidates.iter().all(|p| minimal.iter().all(|c| reprojection_error(p, intrinsics, c) <= 1e-6)));
        let fourth = &corrs[sample[3]];
        let Some(pose) = candidates
            .into_iter()
            .map(|p| (reprojection_error(&p, intrinsics, fourth), p))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
        else {
            continue;
        };
        let (count, cost) = score(&pose, corrs, intrinsics, params.inlier_px);
        let better = match &best {
            None => count > 0,
            Some((bc, bcost, _)) => count > *bc || (count == *bc && cost < *bcost),
        };
        if better {
            best = Some((count, cost, pose));
            let w = count as f64 / n as f64;
            needed = adaptive_iterations(w, params.confidence, SAMPLE).min(params.max_iters);
        }
    }

    let min_inliers = params.min_inliers.min(n).max(SAMPLE);
    let Some((count, _, pose)) = best.filter(|b| b.0 >= min_inliers) else {
        return Err(ResectError::NoConsensus);
    };
    let inliers = inlier_set(&pose, corrs, intrinsics, params.inlier_px);
    debug_assert_eq!(inliers.len(), count);
    let inlier_corrs: Vec<Correspondence> = inliers.iter().map(|&i| corrs[i]).collect();
    let refined = refine_pose(&pose, &inlier_corrs, intrinsics)?;
    let refined_inliers = inlier_set(&refined, corrs, intrinsics, params.inlier_px);
    // Keep the refined pose unless it lost support.
    let (pose, inliers) = if refined_inliers.len() >= inliers.len() { (refined, refined_inliers) } else { (pose, inliers) };
    Ok(RansacResult { pose, inliers, iterations })
}

/// Iterations needed to draw one all-inlier sample with probability
/// `confidence` given inlier ratio `w`.
pub fn adaptive_iterations(w: f64, confidence: f64, sample: usize) -> usize {
    let p_good = w.powi(sample as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if k.is_finite() {
        k.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

fn score(pose: &Pose, corrs: &[Correspondence], intrinsics: &Intrinsics, thr: f64) -> (usize, f64) {
    let mut count = 0;
    let mut cost = 0.0;
    for c in corrs {
        let e = reprojection_error(pose, intrinsics, c);
        if e < thr {
            count += 1;
            cost += e * e;
        }
    }
    (count, cost)
}

pub(crate) fn inlier_set(pose: &Pose, corrs: &[Correspondence], intrinsics: &Intrinsics, thr: f64) -> Vec<usize> {
    (0..corrs.len()).filter(|&i| reprojection_error(pose, intrinsics, &corrs[i]) < thr).collect()
}
