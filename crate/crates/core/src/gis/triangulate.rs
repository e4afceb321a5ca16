use super::{cross2, signed_area, GisError, GisPolygon};
use crate::geometry::Vec2;

/// Ear-clipping triangulation of a simple counter-clockwise ring.
///
/// Returns `n - 2` index triples into `poly.ring`, each wound
/// counter-clockwise.
pub fn triangulate_polygon(poly: &GisPolygon) -> Result<Vec<[usize; 3]>, GisError> {
    triangulate_ring(&poly.ring).ok_or_else(|| GisError::Degenerate(poly.id.clone()))
}

pub(crate) fn triangulate_ring(ring: &[Vec2]) -> Option<Vec<[usize; 3]>> {
    let n = ring.len();
    if n < 3 || signed_area(ring) <= 1e-12 {
        return None;
    }
    let scale = ring.iter().map(|p| p.norm_squared()).fold(1.0, f64::max);
    let eps = 1e-14 * scale;

    let mut remaining: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n - 2);
    while remaining.len() > 3 {
        let m = remaining.len();
        // Prefer strictly convex ears; fall back to flat ones so collinear
        // runs still terminate.
        let ear = (0..m)
            .find(|&i| is_ear(ring, &remaining, i, eps, false))
            .or_else(|| (0..m).find(|&i| is_ear(ring, &remaining, i, eps, true)))?;
        let prev = remaining[(ear + m - 1) % m];
        let next = remaining[(ear + 1) % m];
        out.push([prev, remaining[ear], next]);
        remaining.remove(ear);
    }
    out.push([remaining[0], remaining[1], remaining[2]]);
    Some(out)
}

fn is_ear(ring: &[Vec2], remaining: &[usize], i: usize, eps: f64, allow_flat: bool) -> bool {
    let m = remaining.len();
    let (ia, ib, ic) = (remaining[(i + m - 1) % m], remaining[i], remaining[(i + 1) % m]);
    let (a, b, c) = (ring[ia], ring[ib], ring[ic]);
    let turn = cross2(&a, &b, &c);
    if turn < -eps || (!allow_flat && turn <= eps) {
        return false;
    }
    remaining.iter().all(|&j| {
        if j == ia || j == ib || j == ic {
            return true;
        }
        let p = ring[j];
        // Points on the ear boundary block it as well.
        !(cross2(&a, &b, &p) >= -eps && cross2(&b, &c, &p) >= -eps && cross2(&c, &a, &p) >= -eps)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gis::SemanticLabel;
    use approx::assert_relative_eq;

    fn poly(pts: &[(f64, f64)]) -> GisPolygon {
        let ring = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        GisPolygon::new("t", ring, SemanticLabel::Pavement, true).unwrap()
    }

    fn total_area(p: &GisPolygon, tris: &[[usize; 3]]) -> f64 {
        tris.iter()
            .map(|t| {
                let area = 0.5 * cross2(&p.ring[t[0]], &p.ring[t[1]], &p.ring[t[2]]);
                assert!(area > 0.0, "triangle must be counter-clockwise and non-degenerate");
                area
            })
            .sum()
    }

    #[test]
    fn unit_square() {
        let p = poly(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let tris = triangulate_polygon(&p).unwrap();
        assert_eq!(tris.len(), 2);
        assert_relative_eq!(total_area(&p, &tris), 1.0);
    }

    #[test]
    fn regular_hexagon() {
        let pts: Vec<_> = (0..6)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 3.0;
                (a.cos(), a.sin())
            })
            .collect();
        let p = poly(&pts);
        let tris = triangulate_polygon(&p).unwrap();
        assert_eq!(tris.len(), 4);
        assert_relative_eq!(total_area(&p, &tris), 3.0 * 3f64.sqrt() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn l_shape_matches_shoelace() {
        let p = poly(&[(0.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0), (1.0, 2.0), (0.0, 2.0)]);
        let tris = triangulate_polygon(&p).unwrap();
        assert_eq!(tris.len(), 4);
        let shoelace = signed_area(&p.ring);
        assert_relative_eq!(shoelace, 3.0);
        assert_relative_eq!(total_area(&p, &tris), shoelace, max_relative = 1e-12);
    }

    #[test]
    fn collinear_vertex_on_edge() {
        let p = poly(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 1.0), (0.0, 1.0)]);
        let tris = triangulate_polygon(&p).unwrap();
        assert_eq!(tris.len(), 3);
        assert_relative_eq!(total_area(&p, &tris), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_ring() {
        assert!(triangulate_ring(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)]).is_none());
    }
}
