use serde::Serialize;

use crate::geometry::{Pose, Ray, Vec3};
use crate::gis::LabeledMesh;
use crate::render::Bvh;

pub const MAX_HEIGHT_M: f64 = 4.0;
pub const MAX_TILT_DEG: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlausibilityReport {
    /// Height above the first surface straight below; NaN without ground.
    pub height_m: f64,
    pub tilt_deg: f64,
    pub below_ground: bool,
    pub verdict: Verdict,
    pub reason: String,
}

impl PlausibilityReport {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

/// Camera down-axis against gravity, degrees.
pub fn tilt_deg(pose: &Pose) -> f64 {
    let down = pose.rotation().transpose() * Vec3::new(0.0, 1.0, 0.0);
    down.dot(&Vec3::new(0.0, 0.0, -1.0)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Checks the pose against the model: the camera must stand above ground,
/// at most 4 m high, with its down-axis within 30° of gravity.
pub fn plausibility_filter(pose: &Pose, bvh: &Bvh, mesh: &LabeledMesh) -> PlausibilityReport {
    let c = pose.center();
    let tilt = tilt_deg(pose);
    let down = bvh.raycast(mesh, &Ray::new(c, Vec3::new(0.0, 0.0, -1.0)));
    let (height, below_ground) = match down {
        Some(hit) => (c.z - hit.point.z, false),
        None => {
            let up = bvh.raycast(mesh, &Ray::new(c, Vec3::new(0.0, 0.0, 1.0)));
            (f64::NAN, up.is_some())
        }
    };
    let reason = if below_ground {
        "camera is below ground".to_string()
    } else if height.is_nan() {
        "no ground below camera".to_string()
    } else if height > MAX_HEIGHT_M {
        format!("height {height:.2} m exceeds {MAX_HEIGHT_M} m")
    } else if tilt > MAX_TILT_DEG {
        format!("tilt {tilt:.1} deg exceeds {MAX_TILT_DEG} deg")
    } else {
        String::new()
    };
    let verdict = if reason.is_empty() { Verdict::Accept } else { Verdict::Reject };
    PlausibilityReport { height_m: height, tilt_deg: tilt, below_ground, verdict, reason }
}
