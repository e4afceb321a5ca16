//! Minimal three-point absolute pose.
//!
//! Follows the Lambda Twist formulation (Persson and Nordberg, 2018): the
//! two distance-ratio conics are reduced to a cubic whose sharpest real root
//! yields a degenerate conic, split into two line pairs, each intersected
//! with one conic. Depths are polished by Gauss-Newton before recovering
//! the pose.

use super::{Correspondence, ResectError};
use crate::geometry::{orthonormalize, Intrinsics, Mat3, Pose, Vec3};

/// Up to four poses mapping the three world points onto their pixels.
/// Candidates that do not reproject within `1e-6` px are dropped.
pub fn solve_p3p(corrs: &[Correspondence; 3], intrinsics: &Intrinsics) -> Result<Vec<Pose>, ResectError> {
    let x = corrs.map(|c| c.world);
    let scale = (x[1] - x[0]).norm().max((x[2] - x[0]).norm()).max(1e-300);
    if (x[1] - x[0]).cross(&(x[2] - x[0])).norm() <= 1e-10 * scale * scale {
        return Err(ResectError::Degenerate("world points are collinear".into()));
    }
    let y = corrs.map(|c| intrinsics.bearing(c.pixel.x, c.pixel.y));
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        if 1.0 - y[i].dot(&y[j]) <= 1e-15 {
            return Err(ResectError::Degenerate("bearing vectors coincide".into()));
        }
    }
    let mut out: Vec<Pose> = Vec::with_capacity(4);
    for (r, t) in lambda_twist(&x, &y) {
        if !r.iter().chain(t.iter()).all(|v| v.is_finite()) {
            continue;
        }
        let pose = Pose::from_approx(&r, t);
        let max_err = corrs.iter().map(|c| reprojection_error(&pose, intrinsics, c)).fold(0.0, f64::max);
        if max_err > 1e-6 {
            continue;
        }
        // Drop duplicates from repeated roots.
        if out.iter().any(|p| {
            p.rotation_angle_to(&pose) < 1e-9
                && (p.translation() - pose.translation()).norm() < 1e-9 * (1.0 + pose.translation().norm())
        }) {
            continue;
        }
        out.push(pose);
    }
    Ok(out)
}

/// Pixel distance between the projection of `c.world` and `c.pixel`;
/// infinite when the point is behind the camera.
pub fn reprojection_error(pose: &Pose, intrinsics: &Intrinsics, c: &Correspondence) -> f64 {
    match intrinsics.project_camera_point(&pose.transform(&c.world)) {
        Some(px) => (px - c.pixel).norm(),
        None => f64::INFINITY,
    }
}

fn lambda_twist(x: &[Vec3; 3], y: &[Vec3; 3]) -> Vec<(Mat3, Vec3)> {
    let [x1, x2, x3] = *x;
    let [y1, y2, y3] = *y;
    let d12 = x1 - x2;
    let d13 = x1 - x3;
    let d23 = x2 - x3;
    let d12xd13 = d12.cross(&d13);

    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();

    let c12 = y1.dot(&y2);
    let c23 = y2.dot(&y3);
    let c31 = y3.dot(&y1);
    let blob = c12 * c23 * c31 - 1.0;

    let s12_sq = 1.0 - c12 * c12;
    let s23_sq = 1.0 - c23 * c23;
    let s31_sq = 1.0 - c31 * c31;

    let b12 = -2.0 * c12;
    let b13 = -2.0 * c31;
    let b23 = -2.0 * c23;

    let p3 = a13 * (a23 * s31_sq - a13 * s23_sq);
    let p2 = 2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23_sq + a23 * (a23 - a12) * s31_sq;
    let p1 = a23 * (a13 - a23) * s12_sq - a12 * a12 * s23_sq - 2.0 * a12 * (blob * a23 + a13 * s23_sq);
    let p0 = a12 * (a12 * s23_sq - a23 * s12_sq);

    let g = if p3.abs() > 1e-300 { cubic_root(p2 / p3, p1 / p3, p0 / p3) } else { return Vec::new() };

    #[rustfmt::skip]
    let d0 = Mat3::new(
        a23 * (1.0 - g),  -(a23 * c12),              a23 * c31 * g,
        -(a23 * c12),     a23 - a12 + a13 * g,       -c23 * (a13 * g - a12),
        a23 * c31 * g,    -c23 * (a13 * g - a12),    g * (a13 - a23) - a12,
    );
    let (vecs, vals) = eigen_singular(&d0);
    let ratio = (-vals[1] / vals[0]).max(0.0).sqrt();

    let mut lambdas: Vec<Vec3> = Vec::with_capacity(4);
    for s in [ratio, -ratio] {
        let w2 = 1.0 / (s * vecs[(0, 1)] - vecs[(0, 0)]);
        let w0 = w2 * (vecs[(1, 0)] - s * vecs[(1, 1)]);
        let w1 = w2 * (vecs[(2, 0)] - s * vecs[(2, 1)]);
        let a = 1.0 / ((a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12);
        let b = a * (a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13));
        let c = a * ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13);
        let Some((tau1, tau2)) = quadratic_roots(b, c) else { continue };
        for tau in [tau1, tau2] {
            if tau <= 0.0 {
                continue;
            }
            let d = a23 / (tau * (b23 + tau) + 1.0);
            if d <= 0.0 {
                continue;
            }
            let l2 = d.sqrt();
            let l3 = tau * l2;
            let l1 = w0 * l2 + w1 * l3;
            if l1 >= 0.0 {
                lambdas.push(Vec3::new(l1, l2, l3));
            }
        }
    }

    let xm = Mat3::from_columns(&[d12, d13, d12xd13]);
    let Some(xm_inv) = xm.try_inverse() else { return Vec::new() };
    lambdas
        .into_iter()
        .map(|l| {
            let l = refine_depths(l, a12, a13, a23, b12, b13, b23);
            let (ry1, ry2, ry3) = (y1 * l[0], y2 * l[1], y3 * l[2]);
            let yd1 = ry1 - ry2;
            let yd2 = ry1 - ry3;
            let ym = Mat3::from_columns(&[yd1, yd2, yd1.cross(&yd2)]);
            let r = orthonormalize(&(ym * xm_inv));
            // Translation from the centroid is better conditioned than from one point.
            let t = (ry1 + ry2 + ry3 - r * (x1 + x2 + x3)) / 3.0;
            (r, t)
        })
        .collect()
}

/// Real roots of `r² + b r + c`, computed without cancellation.
fn quadratic_roots(b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return None;
    }
    let y = disc.sqrt();
    Some(if b < 0.0 { (0.5 * (-b + y), 2.0 * c / (-b + y)) } else { (2.0 * c / (-b - y), 0.5 * (-b - y)) })
}

/// One real root of `r³ + b r² + c r + d` with large derivative, by Newton
/// iteration from a start chosen on the monotone side of the stationary points.
fn cubic_root(b: f64, c: f64, d: f64) -> f64 {
    let h = |r: f64| ((r + b) * r + c) * r + d;
    let dh = |r: f64| (3.0 * r + 2.0 * b) * r + c;
    let mut r0;
    if b * b >= 3.0 * c {
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k = h(t1);
        if v < 1e-9 * (1.0 + b.abs()) {
            // Inflection with zero slope: start from the pure cubic root.
            r0 = t1 - k.cbrt();
        } else if k > 0.0 {
            r0 = t1 - (-k / (3.0 * t1 + b)).sqrt();
        } else {
            let t2 = (-b + v) / 3.0;
            let k = h(t2);
            r0 = t2 + (-k / (3.0 * t2 + b)).sqrt();
        }
    } else {
        r0 = -b / 3.0;
        if dh(r0).abs() < 1e-4 {
            r0 += 1.0;
        }
    }
    for i in 0..50 {
        let fx = h(r0);
        if i >= 7 && fx.abs() <= 1e-13 {
            break;
        }
        let step = fx / dh(r0);
        if !step.is_finite() {
            break;
        }
        r0 -= step;
    }
    r0
}

/// Eigen-decomposition of a symmetric 3×3 matrix known to be singular.
/// Columns of the returned matrix are eigenvectors; the third belongs to the
/// zero eigenvalue and the first has the eigenvalue of largest magnitude.
fn eigen_singular(x: &Mat3) -> (Mat3, [f64; 2]) {
    let v3 = x.row(0).transpose().cross(&x.row(1).transpose());
    let v3 = if v3.norm() > 1e-300 { v3.normalize() } else { x.row(0).transpose().cross(&x.row(2).transpose()).normalize() };

    let (m11, m12, m13, m22, m23, m33) = (x[(0, 0)], x[(0, 1)], x[(0, 2)], x[(1, 1)], x[(1, 2)], x[(2, 2)]);
    let b = -m11 - m22 - m33;
    let c = -m12 * m12 - m13 * m13 - m23 * m23 + m11 * (m22 + m33) + m22 * m33;
    let (mut e1, mut e2) = match quadratic_roots(b, c) {
        Some(r) => r,
        None => (-0.5 * b, -0.5 * b),
    };
    if e1.abs() < e2.abs() {
        std::mem::swap(&mut e1, &mut e2);
    }
    let mx0011 = -m11 * m22;
    let prec_0 = m12 * m23 - m13 * m22;
    let prec_1 = m12 * m13 - m11 * m23;
    let vec_for = |e: f64| {
        let tmp = 1.0 / (e * (m11 + m22) + mx0011 - e * e + m12 * m12);
        let a1 = -(e * m13 + prec_0) * tmp;
        let a2 = -(e * m23 + prec_1) * tmp;
        let rnorm = 1.0 / (a1 * a1 + a2 * a2 + 1.0).sqrt();
        Vec3::new(a1 * rnorm, a2 * rnorm, rnorm)
    };
    (Mat3::from_columns(&[vec_for(e1), vec_for(e2), v3]), [e1, e2])
}

/// Gauss-Newton on the three law-of-cosines residuals.
fn refine_depths(l: Vec3, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vec3 {
    let residual = |l: &Vec3| {
        Vec3::new(
            l[0] * l[0] + l[1] * l[1] + b12 * l[0] * l[1] - a12,
            l[0] * l[0] + l[2] * l[2] + b13 * l[0] * l[2] - a13,
            l[1] * l[1] + l[2] * l[2] + b23 * l[1] * l[2] - a23,
        )
    };
    let mut l = l;
    let mut r = residual(&l);
    for _ in 0..10 {
        if r.abs().sum() < 1e-15 * (a12 + a13 + a23) {
            break;
        }
        #[rustfmt::skip]
        let j = Mat3::new(
            2.0 * l[0] + b12 * l[1], 2.0 * l[1] + b12 * l[0], 0.0,
            2.0 * l[0] + b13 * l[2], 0.0,                     2.0 * l[2] + b13 * l[0],
            0.0,                     2.0 * l[1] + b23 * l[2], 2.0 * l[2] + b23 * l[1],
        );
        let Some(step) = j.lu().solve(&r) else { break };
        let next = l - step;
        let rn = residual(&next);
        if rn.abs().sum() >= r.abs().sum() {
            break;
        }
        l = next;
        r = rn;
    }
    l
}
