use nalgebra::{Matrix6, Vector6};

use super::p3p::reprojection_error;
use super::{Correspondence, ResectError};
use crate::geometry::{axis_angle, Intrinsics, Mat3, Pose, Vec3};

const MAX_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub steps: usize,
    pub diagnostic: Option<String>,
}

/// Sum of squared reprojection errors.
pub fn reprojection_cost(pose: &Pose, corrs: &[Correspondence], intrinsics: &Intrinsics) -> f64 {
    corrs.iter().map(|c| reprojection_error(pose, intrinsics, c).powi(2)).sum()
}

/// Damped Gauss-Newton on the reprojection error. See [`refine_pose_detailed`].
pub fn refine_pose(pose: &Pose, corrs: &[Correspondence], intrinsics: &Intrinsics) -> Result<Pose, ResectError> {
    refine_pose_detailed(pose, corrs, intrinsics).map(|r| r.pose)
}

/// Levenberg-Marquardt over a left rotation increment and a translation
/// increment. A step is kept only when the cost drops, so the result is
/// never worse than the input.
pub fn refine_pose_detailed(pose: &Pose, corrs: &[Correspondence], intrinsics: &Intrinsics) -> Result<Refinement, ResectError> {
    if corrs.len() < 4 {
        return Err(ResectError::TooFewCorrespondences { needed: 4, got: corrs.len() });
    }
    let initial_cost = reprojection_cost(pose, corrs, intrinsics);
    if !initial_cost.is_finite() {
        return Ok(Refinement {
            pose: *pose,
            initial_cost,
            final_cost: initial_cost,
            steps: 0,
            diagnostic: Some("a correspondence projects behind the camera".into()),
        });
    }
    let mut current = *pose;
    let mut cost = initial_cost;
    let mut lambda = 1e-3;
    let mut steps = 0;
    let mut diagnostic = None;

    while steps < MAX_STEPS {
        let (jtj, jtr) = normal_equations(&current, corrs, intrinsics);
        if cost <= 1e-24 * corrs.len() as f64 {
            break;
        }
        let scale = jtj.diagonal().max();
        if !(scale > 0.0) || jtj.rank(1e-12 * scale) < 6 {
            diagnostic = Some("rank-deficient normal equations".into());
            log::warn!("refine_pose: rank-deficient normal equations; keeping input pose");
            break;
        }
        steps += 1;
        let mut improved = false;
        // Raise the damping until a step reduces the cost.
        for _ in 0..10 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)];
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = apply_increment(&current, &delta);
            let c = reprojection_cost(&candidate, corrs, intrinsics);
            if c < cost {
                let relative = (cost - c) / cost;
                current = candidate;
                cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = relative > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(Refinement { pose: current, initial_cost, final_cost: cost, steps, diagnostic })
}

fn apply_increment(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let w = Vec3::new(delta[0], delta[1], delta[2]);
    let angle = w.norm();
    let dr = if angle > 0.0 { axis_angle(&(w / angle), angle) } else { Mat3::identity() };
    let t = Vec3::new(delta[3], delta[4], delta[5]);
    // from_approx re-orthonormalizes the product.
    Pose::from_approx(&(dr * pose.rotation()), dr * pose.translation() + t)
}

fn normal_equations(pose: &Pose, corrs: &[Correspondence], intrinsics: &Intrinsics) -> (Matrix6<f64>, Vector6<f64>) {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    let f = intrinsics.f;
    for c in corrs {
        let p = pose.transform(&c.world);
        if p.z <= 0.0 {
            continue;
        }
        let iz = 1.0 / p.z;
        let u = f * p.x * iz + intrinsics.cx;
        let v = f * p.y * iz + intrinsics.cy;
        let r = [u - c.pixel.x, v - c.pixel.y];
        let du = Vec3::new(f * iz, 0.0, -f * p.x * iz * iz);
        let dv = Vec3::new(0.0, f * iz, -f * p.y * iz * iz);
        // p' = exp(w) p + t: dp/dw = -[p]x, dp/dt = I.
        for (row, g) in [(0, du), (1, dv)] {
            let gw = p.cross(&g);
            let jrow = Vector6::new(gw.x, gw.y, gw.z, g.x, g.y, g.z);
            jtj += jrow * jrow.transpose();
            jtr += jrow * r[row];
        }
    }
    (jtj, jtr)
}
