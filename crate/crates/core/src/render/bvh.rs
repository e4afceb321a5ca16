use std::cmp::Ordering;

use crate::geometry::{ray_triangle, Hit, Ray, Vec3};
use crate::gis::LabeledMesh;

use super::RenderError;

const LEAF_SIZE: usize = 4;
const PAD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn padded(mut self) -> Self {
        let pad = Vec3::repeat(PAD) + (self.max - self.min).abs() * PAD;
        self.min -= pad;
        self.max += pad;
        self
    }

    pub fn contains(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] - tol && other.max[k] <= self.max[k] + tol)
    }

    /// Entry distance of `ray` into the box, if it is entered before `t_max`.
    #[inline]
    fn entry(&self, ray: &Ray, t_max: f64) -> Option<f64> {
        let mut lo = 0.0f64;
        let mut hi = t_max;
        for k in 0..3 {
            let d = ray.dir[k];
            let o = ray.origin[k];
            if d == 0.0 {
                if o < self.min[k] || o > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let mut t0 = (self.min[k] - o) * inv;
            let mut t1 = (self.max[k] - o) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            lo = lo.max(t0);
            hi = hi.min(t1);
            if lo > hi {
                return None;
            }
        }
        Some(lo)
    }

    fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&Vec3::zeros()).sup(&(p - self.max));
        d.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Inner { left: u32, right: u32 },
    Leaf { start: u32, count: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

/// Binary bounding volume hierarchy over the triangles of one mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    /// Leaf ranges index into this permutation of triangle indices.
    order: Vec<u32>,
}

/// Nearest point on a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub distance: f64,
    pub tri_index: usize,
}

impl Bvh {
    /// Median split over the longest axis of each node's bounds; leaves hold
    /// at most four triangles.
    pub fn build(mesh: &LabeledMesh) -> Result<Self, RenderError> {
        if mesh.is_empty() {
            return Err(RenderError::EmptyMesh);
        }
        let n = mesh.len();
        let centroids: Vec<Vec3> = (0..n)
            .map(|i| {
                let [a, b, c] = mesh.corners(i);
                (a + b + c) / 3.0
            })
            .collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        build_node(mesh, &centroids, &mut order, 0, n, &mut nodes);
        Ok(Self { nodes, order })
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    pub fn order(&self) -> &[u32] {
        &self.order
    }

    /// Nearest hit with `t > RAY_EPSILON`; equal `t` resolves to the lower
    /// triangle index.
    pub fn raycast(&self, mesh: &LabeledMesh, ray: &Ray) -> Option<Hit> {
        let mut best: Option<(f64, usize)> = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0u32);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let limit = best.map_or(f64::INFINITY, |b| b.0);
            if node.bounds.entry(ray, limit).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &ti in &self.order[start as usize..(start + count) as usize] {
                        let ti = ti as usize;
                        let [a, b, c] = mesh.corners(ti);
                        if let Some((t, _, _)) = ray_triangle(ray, a, b, c) {
                            let better = match best {
                                None => true,
                                Some((bt, bi)) => t < bt || (t == bt && ti < bi),
                            };
                            if better {
                                best = Some((t, ti));
                            }
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let el = self.nodes[left as usize].bounds.entry(ray, limit);
                    let er = self.nodes[right as usize].bounds.entry(ray, limit);
                    // Push the farther child first so the nearer is visited next.
                    match (el, er) {
                        (Some(l), Some(r)) if l <= r => {
                            stack.push(right);
                            stack.push(left);
                        }
                        (Some(_), Some(_)) => {
                            stack.push(left);
                            stack.push(right);
                        }
                        (Some(_), None) => stack.push(left),
                        (None, Some(_)) => stack.push(right),
                        (None, None) => {}
                    }
                }
            }
        }
        best.map(|(t, i)| mesh.hit(ray, i, t))
    }

    /// Every hit with `t > RAY_EPSILON`, sorted by `(t, triangle index)`.
    pub fn raycast_all(&self, mesh: &LabeledMesh, ray: &Ray) -> Vec<Hit> {
        let mut hits: Vec<(f64, usize)> = Vec::new();
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.entry(ray, f64::INFINITY).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &ti in &self.order[start as usize..(start + count) as usize] {
                        let [a, b, c] = mesh.corners(ti as usize);
                        if let Some((t, _, _)) = ray_triangle(ray, a, b, c) {
                            hits.push((t, ti as usize));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        hits.into_iter().map(|(t, i)| mesh.hit(ray, i, t)).collect()
    }

    /// Closest point on the mesh surface to `p`; ties go to the lower
    /// triangle index.
    pub fn closest_point(&self, mesh: &LabeledMesh, p: &Vec3) -> ClosestPoint {
        let mut best = ClosestPoint { point: Vec3::zeros(), distance: f64::INFINITY, tri_index: usize::MAX };
        let mut best_d2 = f64::INFINITY;
        let mut stack: Vec<(f64, u32)> = vec![(self.nodes[0].bounds.distance_squared(p), 0)];
        while let Some((d2, ni)) = stack.pop() {
            if d2 > best_d2 {
                continue;
            }
            match self.nodes[ni as usize].kind {
                NodeKind::Leaf { start, count } => {
                    for &ti in &self.order[start as usize..(start + count) as usize] {
                        let ti = ti as usize;
                        let [a, b, c] = mesh.corners(ti);
                        let q = closest_point_on_triangle(p, a, b, c);
                        let qd2 = (q - p).norm_squared();
                        if qd2 < best_d2 || (qd2 == best_d2 && ti < best.tri_index) {
                            best_d2 = qd2;
                            best = ClosestPoint { point: q, distance: 0.0, tri_index: ti };
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left as usize].bounds.distance_squared(p);
                    let dr = self.nodes[right as usize].bounds.distance_squared(p);
                    if dl <= dr {
                        stack.push((dr, right));
                        stack.push((dl, left));
                    } else {
                        stack.push((dl, left));
                        stack.push((dr, right));
                    }
                }
            }
        }
        best.distance = best_d2.sqrt();
        best
    }
}

fn build_node(
    mesh: &LabeledMesh,
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<BvhNode>,
) -> u32 {
    let mut bounds = Aabb::empty();
    for &ti in &order[start..end] {
        for v in mesh.corners(ti as usize) {
            bounds.grow(v);
        }
    }
    let bounds = bounds.padded();
    let idx = nodes.len() as u32;
    let count = end - start;
    if count <= LEAF_SIZE {
        nodes.push(BvhNode { bounds, kind: NodeKind::Leaf { start: start as u32, count: count as u32 } });
        return idx;
    }
    let extent = bounds.max - bounds.min;
    let axis = extent.imax();
    let mid = start + count / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a as usize][axis].partial_cmp(&centroids[b as usize][axis]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    nodes.push(BvhNode { bounds, kind: NodeKind::Leaf { start: 0, count: 0 } });
    let left = build_node(mesh, centroids, order, start, mid, nodes);
    let right = build_node(mesh, centroids, order, mid, end, nodes);
    nodes[idx as usize].kind = NodeKind::Inner { left, right };
    idx
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gis::{MeshTriangle, SemanticLabel};

    fn mesh_of(tris: &[[Vec3; 3]]) -> LabeledMesh {
        let mut m = LabeledMesh::default();
        let pid = m.intern_polygon("p");
        for t in tris {
            let v = t.map(|p| m.add_vertex(p));
            m.triangles.push(MeshTriangle { v, label: SemanticLabel::Pavement, polygon: pid, walkable: true });
        }
        m
    }

    fn tri_at(x: f64, z: f64) -> [Vec3; 3] {
        [Vec3::new(x, 0.0, z), Vec3::new(x + 1.0, 0.0, z), Vec3::new(x, 1.0, z)]
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let bvh = Bvh::build(&mesh_of(&[tri_at(0.0, 0.0)])).unwrap();
        assert_eq!(bvh.nodes().len(), 1);
        assert!(matches!(bvh.nodes()[0].kind, NodeKind::Leaf { start: 0, count: 1 }));
    }

    #[test]
    fn empty_mesh_is_an_error() {
        assert!(matches!(Bvh::build(&LabeledMesh::default()), Err(RenderError::EmptyMesh)));
    }

    #[test]
    fn stacked_floors_in_depth_order() {
        let mesh = mesh_of(&[tri_at(0.0, 0.0), tri_at(0.0, 3.0)]);
        let bvh = Bvh::build(&mesh).unwrap();
        let ray = Ray::new(Vec3::new(0.2, 0.2, 10.0), Vec3::new(0.0, 0.0, -1.0));
        let hits = bvh.raycast_all(&mesh, &ray);
        assert_eq!(hits.len(), 2);
        assert_eq!((hits[0].tri_index, hits[0].t), (1, 7.0));
        assert_eq!((hits[1].tri_index, hits[1].t), (0, 10.0));
        assert_eq!(bvh.raycast(&mesh, &ray).unwrap(), hits[0]);
        let miss = Ray::new(Vec3::new(5.0, 5.0, 10.0), Vec3::new(0.0, 0.0, -1.0));
        assert!(bvh.raycast_all(&mesh, &miss).is_empty());
        assert!(bvh.raycast(&mesh, &miss).is_none());
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &a, &b, &c), a);
        assert!((closest_point_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &a, &b, &c) - Vec3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(closest_point_on_triangle(&Vec3::new(0.5, -2.0, 0.0), &a, &b, &c), Vec3::new(0.5, 0.0, 0.0));
        let q = closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }
}
