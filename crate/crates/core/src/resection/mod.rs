//! Camera pose from 2D-3D correspondences.

mod cluster;
mod p3p;
mod plausibility;
mod ransac;
mod refine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{cluster_cameras, sse, ClusterIndex};
pub use p3p::{reprojection_error, solve_p3p};
pub use plausibility::{plausibility_filter, tilt_deg, PlausibilityReport, Verdict, MAX_HEIGHT_M, MAX_TILT_DEG};
pub use ransac::{adaptive_iterations, ransac_resect, RansacParams, RansacResult};
pub use refine::{refine_pose, refine_pose_detailed, reprojection_cost, Refinement};

use crate::geometry::{Intrinsics, Pose, Vec2, Vec3};
use crate::gis::LabeledMesh;
use crate::par;
use crate::render::Bvh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResectError {
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("no hypothesis reached the minimum inlier count")]
    NoConsensus,
    #[error("cannot form {k} clusters from {got} cameras")]
    TooFewCameras { k: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A pixel matched to a world point. Nothing ties the two together; the
/// match may be an outlier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    #[serde(rename = "px", with = "vec2_array")]
    pub pixel: Vec2,
    #[serde(rename = "X", with = "vec3_array")]
    pub world: Vec3,
}

mod vec2_array {
    use super::Vec2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec2, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec2, D::Error> {
        let a = <[f64; 2]>::deserialize(d)?;
        if !a.iter().all(|x| x.is_finite()) {
            return Err(serde::de::Error::custom("non-finite pixel"));
        }
        Ok(Vec2::new(a[0], a[1]))
    }
}

mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        if !a.iter().all(|x| x.is_finite()) {
            return Err(serde::de::Error::custom("non-finite point"));
        }
        Ok(Vec3::from(a))
    }
}

/// Correspondences obtained against one database cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMatches {
    pub id: usize,
    pub matches: Vec<Correspondence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAttempt {
    pub cluster: usize,
    pub result: Result<RansacResult, ResectError>,
    pub report: Option<PlausibilityReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSelection {
    pub pose: Pose,
    pub cluster: usize,
    pub inliers: Vec<usize>,
}

/// Runs RANSAC against every cluster, optionally discards implausible
/// poses, and keeps the estimate with most inliers (ties to the lower id).
pub fn resect_against_clusters(
    clusters: &[ClusterMatches],
    intrinsics: &Intrinsics,
    params: &RansacParams,
    model: Option<(&Bvh, &LabeledMesh)>,
) -> (Option<ClusterSelection>, Vec<ClusterAttempt>) {
    let attempts: Vec<ClusterAttempt> = par::map_slice(clusters, |c| {
        let result = ransac_resect(&c.matches, intrinsics, params);
        let report = match (&result, model) {
            (Ok(r), Some((bvh, mesh))) => Some(plausibility_filter(&r.pose, bvh, mesh)),
            _ => None,
        };
        ClusterAttempt { cluster: c.id, result, report }
    });
    let mut best: Option<ClusterSelection> = None;
    for a in &attempts {
        let Ok(r) = &a.result else { continue };
        if a.report.as_ref().is_some_and(|rep| !rep.accepted()) {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => r.inliers.len() > b.inliers.len() || (r.inliers.len() == b.inliers.len() && a.cluster < b.cluster),
        };
        if better {
            best = Some(ClusterSelection { pose: r.pose, cluster: a.cluster, inliers: r.inliers.clone() });
        }
    }
    (best, attempts)
}
