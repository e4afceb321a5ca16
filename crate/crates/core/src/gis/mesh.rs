use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{GisError, SemanticLabel};
use crate::geometry::{face_normal, triangle_area, Hit, Ray, Triangle, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshTriangle {
    pub v: [u32; 3],
    pub label: SemanticLabel,
    /// Index into [`LabeledMesh::polygon_ids`].
    pub polygon: u32,
    pub walkable: bool,
}

/// Triangle soup with shared vertices and per-face semantics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<MeshTriangle>,
    pub polygon_ids: Vec<String>,
}

impl LabeledMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    /// Returns the index of `id` in the polygon table, inserting it if needed.
    pub fn intern_polygon(&mut self, id: &str) -> u32 {
        match self.polygon_ids.iter().position(|p| p == id) {
            Some(i) => i as u32,
            None => {
                self.polygon_ids.push(id.to_string());
                (self.polygon_ids.len() - 1) as u32
            }
        }
    }

    pub fn add_vertex(&mut self, v: Vec3) -> u32 {
        self.vertices.push(v);
        (self.vertices.len() - 1) as u32
    }

    #[inline]
    pub fn corners(&self, i: usize) -> [&Vec3; 3] {
        let t = &self.triangles[i];
        [&self.vertices[t.v[0] as usize], &self.vertices[t.v[1] as usize], &self.vertices[t.v[2] as usize]]
    }

    pub fn normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.corners(i);
        face_normal(a, b, c)
    }

    pub fn area(&self, i: usize) -> f64 {
        let [a, b, c] = self.corners(i);
        triangle_area(a, b, c)
    }

    pub fn polygon_id(&self, i: usize) -> &str {
        &self.polygon_ids[self.triangles[i].polygon as usize]
    }

    pub fn triangle(&self, i: usize) -> Triangle {
        let t = &self.triangles[i];
        let [a, b, c] = self.corners(i);
        Triangle { vertices: [*a, *b, *c], label: t.label, polygon_id: self.polygon_id(i).to_string(), walkable: t.walkable }
    }

    /// Intersection of `ray` with triangle `i`.
    #[inline]
    pub fn intersect(&self, ray: &Ray, i: usize) -> Option<Hit> {
        let [a, b, c] = self.corners(i);
        crate::geometry::ray_triangle(ray, a, b, c).map(|(t, _, _)| self.hit(ray, i, t))
    }

    pub(crate) fn hit(&self, ray: &Ray, i: usize, t: f64) -> Hit {
        let tri = &self.triangles[i];
        Hit { t, point: ray.point_at(t), tri_index: i, label: tri.label, walkable: tri.walkable, normal: self.normal(i) }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.len()).map(|i| self.area(i)).sum()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.vertices.iter();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    pub fn validate(&self) -> Result<(), GisError> {
        let nv = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.v.iter().any(|&k| k >= nv) {
                return Err(GisError::InvalidMesh(format!("triangle {i} references a missing vertex")));
            }
            if t.polygon as usize >= self.polygon_ids.len() {
                return Err(GisError::InvalidMesh(format!("triangle {i} references a missing polygon")));
            }
            if self.area(i) <= 1e-12 {
                return Err(GisError::InvalidMesh(format!("triangle {i} is degenerate")));
            }
        }
        if !self.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(GisError::InvalidMesh("non-finite vertex".into()));
        }
        Ok(())
    }

    /// Concatenates meshes, remapping vertex and polygon indices.
    pub fn append(&mut self, other: &LabeledMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        let remap: Vec<u32> = other.polygon_ids.iter().map(|id| self.intern_polygon(id)).collect();
        self.triangles.extend(other.triangles.iter().map(|t| MeshTriangle {
            v: t.v.map(|k| k + offset),
            polygon: remap[t.polygon as usize],
            ..*t
        }));
    }

    /// Number of triangles sharing each undirected edge.
    pub fn edge_use_counts(&self, tris: impl IntoIterator<Item = usize>) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for i in tris {
            let v = self.triangles[i].v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn to_json(&self) -> String {
        let file = MeshFile {
            vertices: self.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            triangles: self
                .triangles
                .iter()
                .map(|t| TriangleRecord {
                    v: t.v,
                    label: t.label,
                    polygon_id: self.polygon_ids[t.polygon as usize].clone(),
                    walkable: t.walkable,
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("mesh serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GisError> {
        let file: MeshFile = super::from_json_str(text)?;
        let mut mesh = LabeledMesh { vertices: file.vertices.into_iter().map(Vec3::from).collect(), ..Default::default() };
        for r in file.triangles {
            let polygon = mesh.intern_polygon(&r.polygon_id);
            mesh.triangles.push(MeshTriangle { v: r.v, label: r.label, polygon, walkable: r.walkable });
        }
        mesh.validate()?;
        Ok(mesh)
    }

    /// Wavefront OBJ with one material per semantic label.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        let mut current = None;
        for t in &self.triangles {
            if current != Some(t.label) {
                let _ = writeln!(out, "usemtl {}", t.label);
                current = Some(t.label);
            }
            let _ = writeln!(out, "f {} {} {}", t.v[0] + 1, t.v[1] + 1, t.v[2] + 1);
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<TriangleRecord>,
}

#[derive(Serialize, Deserialize)]
struct TriangleRecord {
    v: [u32; 3],
    label: SemanticLabel,
    polygon_id: String,
    walkable: bool,
}
