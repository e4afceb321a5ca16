use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::geometry::{axis_angle, orthonormalize, Mat3, Vec3};
use crate::gis::LabeledMesh;
use crate::par;
use crate::render::{Bvh, ClosestPoint};

/// `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform3D {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform3D {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, AlignError> {
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if ortho > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(AlignError::Degenerate("rotation is not orthonormal".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Rotation by `angle` radians about `axis`, then translation.
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        Self { rotation: axis_angle(axis, angle), translation }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform3D) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RigidRecord {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

impl From<&RigidTransform3D> for RigidRecord {
    fn from(x: &RigidTransform3D) -> Self {
        let m = &x.rotation;
        Self { r: [0, 1, 2, 3, 4, 5, 6, 7, 8].map(|k| m[(k / 3, k % 3)]), t: [x.translation.x, x.translation.y, x.translation.z] }
    }
}

impl Serialize for RigidTransform3D {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RigidRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform3D {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = RigidRecord::deserialize(d)?;
        let m = Mat3::from_row_slice(&r.r);
        RigidTransform3D::new(m, Vec3::from(r.t)).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Stop once an iteration improves the RMS by less than this, meters.
    pub tol: f64,
    /// Fraction of the farthest correspondences dropped each iteration.
    pub trim_fraction: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self { max_iters: 50, tol: 1e-6, trim_fraction: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform3D,
    /// RMS at the initial transform followed by one entry per accepted step.
    pub rms_history: Vec<f64>,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

impl IcpResult {
    pub fn final_rms(&self) -> f64 {
        *self.rms_history.last().expect("history starts with the initial RMS")
    }
}

/// Point-to-point ICP of `cloud` against the mesh surface. Each iteration
/// pairs every transformed point with its closest surface point and solves
/// the rigid update in closed form (SVD). Scale stays fixed. An
/// extrapolated step is taken instead when it lowers the RMS further.
pub fn icp_refine(
    cloud: &[Vec3],
    mesh: &LabeledMesh,
    init: &RigidTransform3D,
    params: &IcpParams,
) -> Result<IcpResult, AlignError> {
    if cloud.len() < 3 {
        return Err(AlignError::TooFewPoints { needed: 3, got: cloud.len() });
    }
    if !(0.0..1.0).contains(&params.trim_fraction) {
        return Err(AlignError::InvalidParameter(format!("trim fraction {} not in [0, 1)", params.trim_fraction)));
    }
    let bvh = Bvh::build(mesh).map_err(|_| AlignError::EmptyMesh)?;
    let keep = ((cloud.len() as f64) * (1.0 - params.trim_fraction)).ceil().max(3.0) as usize;

    let mut current = *init;
    let mut pairs = correspond(cloud, &bvh, mesh, &current, keep);
    let mut rms = pairs.rms;
    let mut history = vec![rms];
    let mut converged = false;
    let mut diagnostic = None;
    // Accepted states and their mean squared errors, for the extrapolation.
    let mut states = vec![state_vector(&current)];
    let mut mses = vec![rms * rms];

    for _ in 0..params.max_iters {
        let Some(delta) = kabsch(&pairs.moved, &pairs.targets) else {
            diagnostic = Some("degenerate correspondence set; keeping previous transform".to_string());
            log::warn!("icp: degenerate correspondence set");
            break;
        };
        let mut candidate = delta.compose(&current);
        candidate.rotation = orthonormalize(&candidate.rotation);
        let mut next = correspond(cloud, &bvh, mesh, &candidate, keep);
        if next.rms > rms {
            // Only reachable through rounding at a fixed point.
            converged = true;
            break;
        }
        states.push(state_vector(&candidate));
        mses.push(next.rms * next.rms);
        if let Some(q) = extrapolate(&states, &mses) {
            let jumped = from_state_vector(&q);
            let trial = correspond(cloud, &bvh, mesh, &jumped, keep);
            if trial.rms < next.rms {
                candidate = jumped;
                next = trial;
                *states.last_mut().unwrap() = q;
                *mses.last_mut().unwrap() = next.rms * next.rms;
            }
        }
        let improvement = rms - next.rms;
        current = candidate;
        rms = next.rms;
        pairs = next;
        history.push(rms);
        if improvement < params.tol {
            converged = true;
            break;
        }
    }
    Ok(IcpResult { transform: current, rms_history: history, converged, diagnostic })
}

type State = nalgebra::SVector<f64, 6>;

fn state_vector(x: &RigidTransform3D) -> State {
    let w = nalgebra::Rotation3::from_matrix_unchecked(x.rotation).scaled_axis();
    State::new(w.x, w.y, w.z, x.translation.x, x.translation.y, x.translation.z)
}

fn from_state_vector(q: &State) -> RigidTransform3D {
    let w = Vec3::new(q[0], q[1], q[2]);
    RigidTransform3D { rotation: *nalgebra::Rotation3::new(w).matrix(), translation: Vec3::new(q[3], q[4], q[5]) }
}

/// Besl-McKay acceleration: when the last two steps point the same way
/// (within 10°), jump along the step direction to the zero of a line or the
/// minimum of a parabola fitted to the last three errors.
fn extrapolate(states: &[State], mses: &[f64]) -> Option<State> {
    let n = states.len();
    if n < 3 {
        return None;
    }
    let d1 = states[n - 1] - states[n - 2];
    let d0 = states[n - 2] - states[n - 3];
    let (l1, l0) = (d1.norm(), d0.norm());
    if l1 < 1e-12 || l0 < 1e-12 || d1.dot(&d0) / (l1 * l0) < 10f64.to_radians().cos() {
        return None;
    }
    // Errors along the arc-length parameter, current state at v = 0.
    let (va, vb) = (-l1 - l0, -l1);
    let (ea, eb, ec) = (mses[n - 3], mses[n - 2], mses[n - 1]);
    let slope = (ec - ea) / (0.0 - va);
    let v_line = if slope < 0.0 { -ec / slope } else { return None };
    // Parabola through the three points.
    let a = ((ec - eb) / (0.0 - vb) - (eb - ea) / (vb - va)) / (0.0 - va);
    let b = (ec - eb) / (0.0 - vb) - a * vb;
    let v_parab = if a > 0.0 { -b / (2.0 * a) } else { f64::INFINITY };
    let v_max = 25.0 * l1;
    let v = if v_parab > 0.0 && v_parab < v_line && v_parab < v_max {
        v_parab
    } else if v_line < v_max {
        v_line
    } else {
        v_max
    };
    Some(states[n - 1] + d1 * (v / l1))
}

struct Pairs {
    moved: Vec<Vec3>,
    targets: Vec<Vec3>,
    rms: f64,
}

fn correspond(cloud: &[Vec3], bvh: &Bvh, mesh: &LabeledMesh, x: &RigidTransform3D, keep: usize) -> Pairs {
    let found: Vec<(Vec3, ClosestPoint)> = par::map_slice(cloud, |p| {
        let q = x.apply(p);
        (q, bvh.closest_point(mesh, &q))
    });
    let mut order: Vec<usize> = (0..found.len()).collect();
    if keep < found.len() {
        order.sort_by(|&a, &b| found[a].1.distance.total_cmp(&found[b].1.distance).then(a.cmp(&b)));
        order.truncate(keep);
        order.sort_unstable();
    }
    let sq: f64 = order.iter().map(|&i| found[i].1.distance.powi(2)).sum();
    Pairs {
        moved: order.iter().map(|&i| found[i].0).collect(),
        targets: order.iter().map(|&i| found[i].1.point).collect(),
        rms: (sq / order.len() as f64).sqrt(),
    }
}

/// Rigid transform minimizing `Σ |R p_i + t - q_i|²`, or `None` when the
/// cross-covariance has rank below two.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Option<RigidTransform3D> {
    let n = src.len() as f64;
    let mp = src.iter().sum::<Vec3>() / n;
    let mq = dst.iter().sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += (p - mp) * (q - mq).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return None;
    }
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let mut d = Mat3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = orthonormalize(&(v * d * u.transpose()));
    Some(RigidTransform3D { rotation: r, translation: mq - r * mp })
}
