use std::collections::HashMap;

use nalgebra::Matrix3;

use super::triangulate::triangulate_polygon;
use super::{GisError, GisMap, GisPolygon, LabeledMesh, LiftOp, LiftSpec, MeshTriangle};
use crate::geometry::Vec3;

/// Lifts a 2D map into a labeled mesh.
///
/// Polygons without an op become flat floors at the ground elevation.
/// `extrude` builds a closed prism (top, outward walls, downward bottom cap),
/// `carve` sinks the floor and adds inward-facing pit walls, `tilt` replaces
/// the floor with the plane through its anchors.
pub fn lift(map: &GisMap, spec: &LiftSpec) -> Result<LabeledMesh, GisError> {
    spec.validate(Some(map))?;
    let mut ops: HashMap<&str, &LiftOp> = HashMap::new();
    for ins in &spec.ops {
        if ops.insert(ins.polygon.as_str(), &ins.op).is_some() {
            return Err(GisError::InvalidOp { polygon: ins.polygon.clone(), reason: "more than one op for polygon".into() });
        }
    }

    let mut mesh = LabeledMesh::default();
    let g = spec.ground_elevation;
    for poly in &map.polygons {
        let tris = triangulate_polygon(poly)?;
        let pid = mesh.intern_polygon(&poly.id);
        match ops.get(poly.id.as_str()) {
            None => {
                let ring = add_ring(&mut mesh, poly, |_, _| g);
                add_cap(&mut mesh, &ring, &tris, poly, pid, false);
            }
            Some(LiftOp::Extrude { height }) => {
                let bottom = add_ring(&mut mesh, poly, |_, _| g);
                let top = add_ring(&mut mesh, poly, |_, _| g + height);
                add_cap(&mut mesh, &top, &tris, poly, pid, false);
                add_walls(&mut mesh, &bottom, &top, poly, pid, false);
                add_cap(&mut mesh, &bottom, &tris, poly, pid, true);
            }
            Some(LiftOp::Carve { depth }) => {
                let floor = add_ring(&mut mesh, poly, |_, _| g - depth);
                let rim = add_ring(&mut mesh, poly, |_, _| g);
                add_cap(&mut mesh, &floor, &tris, poly, pid, false);
                add_walls(&mut mesh, &floor, &rim, poly, pid, true);
            }
            Some(LiftOp::Tilt { anchors }) => {
                let plane = plane_through(anchors).ok_or_else(|| GisError::InvalidOp {
                    polygon: poly.id.clone(),
                    reason: "tilt anchors are collinear in (x, y)".into(),
                })?;
                let ring = add_ring(&mut mesh, poly, |x, y| plane[0] * x + plane[1] * y + plane[2]);
                add_cap(&mut mesh, &ring, &tris, poly, pid, false);
            }
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

fn add_ring(mesh: &mut LabeledMesh, poly: &GisPolygon, z: impl Fn(f64, f64) -> f64) -> Vec<u32> {
    poly.ring.iter().map(|p| mesh.add_vertex(Vec3::new(p.x, p.y, z(p.x, p.y)))).collect()
}

fn add_cap(mesh: &mut LabeledMesh, ring: &[u32], tris: &[[usize; 3]], poly: &GisPolygon, pid: u32, facing_down: bool) {
    for t in tris {
        let v = if facing_down { [ring[t[0]], ring[t[2]], ring[t[1]]] } else { [ring[t[0]], ring[t[1]], ring[t[2]]] };
        mesh.triangles.push(MeshTriangle { v, label: poly.label, polygon: pid, walkable: poly.walkable });
    }
}

fn add_walls(mesh: &mut LabeledMesh, lower: &[u32], upper: &[u32], poly: &GisPolygon, pid: u32, inward: bool) {
    let n = lower.len();
    for i in 0..n {
        let j = (i + 1) % n;
        let quads = if inward {
            [[lower[i], upper[j], lower[j]], [lower[i], upper[i], upper[j]]]
        } else {
            [[lower[i], lower[j], upper[j]], [lower[i], upper[j], upper[i]]]
        };
        for v in quads {
            mesh.triangles.push(MeshTriangle { v, label: poly.label, polygon: pid, walkable: false });
        }
    }
}

/// Coefficients `(a, b, c)` of `z = a x + b y + c` through three points.
fn plane_through(anchors: &[Vec3; 3]) -> Option<[f64; 3]> {
    let m = Matrix3::from_fn(|r, c| match c {
        0 => anchors[r].x,
        1 => anchors[r].y,
        _ => 1.0,
    });
    let z = Vec3::new(anchors[0].z, anchors[1].z, anchors[2].z);
    let sol = m.lu().solve(&z)?;
    Some([sol[0], sol[1], sol[2]])
}
