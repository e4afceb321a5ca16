//! Ray casting over the lifted mesh and per-pixel context backprojection.

mod bvh;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, Vec3};
use crate::gis::{LabeledMesh, SemanticLabel};
use crate::par;
use crate::raster::{write_pfm, write_pgm, Raster};

pub use bvh::{closest_point_on_triangle, Aabb, Bvh, BvhNode, ClosestPoint, NodeKind};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("normal ({0}, {1}, {2}) is not unit length")]
    NonUnitNormal(f64, f64, f64),
}

/// Discretized surface orientation. Integer codes are used in rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum NormalBin {
    Ground = 0,
    Ceiling = 1,
    Wall = 2,
    None = 3,
}

impl NormalBin {
    pub const ALL: [NormalBin; 4] = [Self::Ground, Self::Ceiling, Self::Wall, Self::None];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ground => "ground",
            Self::Ceiling => "ceiling",
            Self::Wall => "wall",
            Self::None => "none",
        }
    }
}

/// Horizontal within 45° maps to ground / ceiling, vertical within 15° to
/// wall, everything else to none.
pub fn discretize_normal(n: &Vec3) -> Result<NormalBin, RenderError> {
    if !((n.norm() - 1.0).abs() <= 1e-6) {
        return Err(RenderError::NonUnitNormal(n.x, n.y, n.z));
    }
    Ok(discretize_unit_normal(n))
}

pub(crate) fn discretize_unit_normal(n: &Vec3) -> NormalBin {
    let horizontal = std::f64::consts::FRAC_1_SQRT_2;
    let wall = 15f64.to_radians().sin();
    if n.z >= horizontal {
        NormalBin::Ground
    } else if n.z <= -horizontal {
        NormalBin::Ceiling
    } else if n.z.abs() <= wall {
        NormalBin::Wall
    } else {
        NormalBin::None
    }
}

/// Depth, label and normal rasters rendered for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMaps {
    /// Euclidean distance along the pixel ray; `+inf` where nothing is hit.
    pub depth: Raster<f64>,
    /// Principal-axis depth; `+inf` where nothing is hit.
    pub zdepth: Raster<f64>,
    pub labels: Raster<SemanticLabel>,
    pub normals: Raster<NormalBin>,
}

impl ContextMaps {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    pub fn label_codes(&self) -> Raster<u8> {
        self.labels.map(|l| l.code())
    }

    pub fn normal_codes(&self) -> Raster<u8> {
        self.normals.map(|n| n.code())
    }

    pub fn hit_fraction(&self) -> f64 {
        self.depth.data.iter().filter(|d| d.is_finite()).count() as f64 / self.depth.data.len() as f64
    }

    /// Writes `{stem}.depth.pfm`, `{stem}.labels.pgm` and `{stem}.normals.pgm`.
    pub fn write_to(&self, dir: &std::path::Path, stem: &str) -> io::Result<()> {
        let create = |suffix: &str| -> io::Result<io::BufWriter<std::fs::File>> {
            Ok(io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.{suffix}")))?))
        };
        let mut w = create("depth.pfm")?;
        write_pfm(&mut w, &self.depth)?;
        w.flush()?;
        let mut w = create("labels.pgm")?;
        write_pgm(&mut w, &self.label_codes())?;
        w.flush()?;
        let mut w = create("normals.pgm")?;
        write_pgm(&mut w, &self.normal_codes())?;
        w.flush()
    }
}

#[derive(Clone, Copy)]
struct PixelSample {
    depth: f64,
    zdepth: f64,
    label: SemanticLabel,
    normal: NormalBin,
}

const MISS: PixelSample =
    PixelSample { depth: f64::INFINITY, zdepth: f64::INFINITY, label: SemanticLabel::Sky, normal: NormalBin::None };

/// Renders depth, labels and normal bins through pixel centers.
/// Output does not depend on the number of worker threads.
pub fn render_context(camera: &Camera, bvh: &Bvh, mesh: &LabeledMesh) -> ContextMaps {
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let axis = camera.optical_axis();
    let mut samples = vec![MISS; w * h];
    par::for_each_chunk(&mut samples, w, |row, out| {
        for (col, px) in out.iter_mut().enumerate() {
            let ray = camera.pixel_ray(col as u32, row as u32);
            if let Some(hit) = bvh.raycast(mesh, &ray) {
                *px = PixelSample {
                    depth: hit.t,
                    zdepth: hit.t * ray.dir.dot(&axis),
                    label: hit.label,
                    normal: discretize_unit_normal(&hit.normal),
                };
            }
        }
    });
    ContextMaps {
        depth: Raster { width: w, height: h, data: samples.iter().map(|s| s.depth).collect() },
        zdepth: Raster { width: w, height: h, data: samples.iter().map(|s| s.zdepth).collect() },
        labels: Raster { width: w, height: h, data: samples.iter().map(|s| s.label).collect() },
        normals: Raster { width: w, height: h, data: samples.iter().map(|s| s.normal).collect() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_rotation, Intrinsics, Pose};
    use crate::gis::MeshTriangle;

    #[test]
    fn normal_bins() {
        assert_eq!(discretize_normal(&Vec3::new(0.0, 0.0, 1.0)).unwrap(), NormalBin::Ground);
        assert_eq!(discretize_normal(&Vec3::new(1.0, 0.0, 0.0)).unwrap(), NormalBin::Wall);
        assert_eq!(discretize_normal(&Vec3::new(0.6, 0.0, 0.8)).unwrap(), NormalBin::Ground);
        assert_eq!(discretize_normal(&Vec3::new(0.0, 0.0, -1.0)).unwrap(), NormalBin::Ceiling);
        assert_eq!(discretize_normal(&Vec3::new(0.8, 0.0, 0.6)).unwrap(), NormalBin::None);
        assert!(discretize_normal(&Vec3::new(0.0, 0.0, 2.0)).is_err());
    }

    fn big_floor() -> LabeledMesh {
        let mut m = LabeledMesh::default();
        let pid = m.intern_polygon("floor");
        let s = 1e4;
        let v = [(-s, -s), (s, -s), (s, s), (-s, s)].map(|(x, y)| m.add_vertex(Vec3::new(x, y, 0.0)));
        for tri in [[v[0], v[1], v[2]], [v[0], v[2], v[3]]] {
            m.triangles.push(MeshTriangle { v: tri, label: SemanticLabel::Pavement, polygon: pid, walkable: true });
        }
        m
    }

    #[test]
    fn top_down_floor_render() {
        let mesh = big_floor();
        let bvh = Bvh::build(&mesh).unwrap();
        // Looking straight down from 10 m.
        let r = look_rotation(0.0, std::f64::consts::FRAC_PI_2, 0.0);
        let cam =
            Camera::new(Intrinsics::new(8.0, 4.0, 4.0, 8, 8).unwrap(), Pose::from_center(r, Vec3::new(0.0, 0.0, 10.0)).unwrap())
                .unwrap();
        let maps = render_context(&cam, &bvh, &mesh);
        for i in 0..64 {
            assert!((maps.zdepth.data[i] - 10.0).abs() < 1e-9);
            assert!(maps.depth.data[i] >= 10.0);
            assert_eq!(maps.labels.data[i], SemanticLabel::Pavement);
            assert_eq!(maps.normals.data[i], NormalBin::Ground);
        }
    }

    #[test]
    fn sky_render() {
        let mesh = big_floor();
        let bvh = Bvh::build(&mesh).unwrap();
        let r = look_rotation(0.0, -std::f64::consts::FRAC_PI_2, 0.0);
        let cam =
            Camera::new(Intrinsics::new(8.0, 4.0, 4.0, 8, 8).unwrap(), Pose::from_center(r, Vec3::new(0.0, 0.0, 10.0)).unwrap())
                .unwrap();
        let maps = render_context(&cam, &bvh, &mesh);
        assert!(maps.depth.data.iter().all(|d| d.is_infinite()));
        assert!(maps.labels.data.iter().all(|l| *l == SemanticLabel::Sky));
        assert!(maps.normals.data.iter().all(|n| *n == NormalBin::None));
        assert_eq!(maps.hit_fraction(), 0.0);
    }
}
