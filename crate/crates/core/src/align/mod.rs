//! Registration of map-frame data: closed-form 2D similarity from paired
//! points, and rigid ICP of a point cloud against the lifted mesh.

mod icp;
mod procrustes;

use thiserror::Error;

use crate::geometry::Vec3;
use crate::gis::LabeledMesh;
use crate::render::{Bvh, ClosestPoint};

pub use icp::{icp_refine, kabsch, IcpParams, IcpResult, RigidTransform3D};
pub use procrustes::{procrustes2d, ProcrustesFit, Similarity2D};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("point set sizes differ: {0} vs {1}")]
    Mismatch(usize, usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Closest surface point of the mesh to `p`, using the mesh's BVH.
pub fn closest_point_on_mesh(p: &Vec3, bvh: &Bvh, mesh: &LabeledMesh) -> Result<ClosestPoint, AlignError> {
    if mesh.is_empty() {
        return Err(AlignError::EmptyMesh);
    }
    Ok(bvh.closest_point(mesh, p))
}
