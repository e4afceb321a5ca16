//! GIS polygon maps, lift specifications and the labeled meshes they produce.

mod lift;
mod mesh;
mod triangulate;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Vec2, Vec3};

pub use lift::lift;
pub use mesh::{LabeledMesh, MeshTriangle};
pub use triangulate::triangulate_polygon;

#[derive(Debug, Error)]
pub enum GisError {
    #[error("malformed JSON")]
    Json(#[from] serde_path_to_error::Error<serde_json::Error>),
    #[error("malformed JSON: {0}")]
    Trailing(String),
    #[error("map has no polygons")]
    EmptyMap,
    #[error("duplicate polygon id `{0}`")]
    DuplicateId(String),
    #[error("polygon `{0}` has fewer than 3 distinct vertices")]
    TooFewVertices(String),
    #[error("polygon `{0}` ring is self-intersecting")]
    SelfIntersecting(String),
    #[error("polygon `{0}` has zero area")]
    Degenerate(String),
    #[error("polygon `{inner}` is nested inside `{outer}`; holes are not supported")]
    Nested { inner: String, outer: String },
    #[error("unknown semantic label `{0}`")]
    UnknownLabel(String),
    #[error("non-finite coordinate in `{0}`")]
    NonFinite(String),
    #[error("lift op references unknown polygon `{0}`")]
    UnknownPolygon(String),
    #[error("lift op on `{polygon}`: {reason}")]
    InvalidOp { polygon: String, reason: String },
    #[error("mesh: {0}")]
    InvalidMesh(String),
}

/// Semantic class of a GIS region. Integer codes are used in label rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum SemanticLabel {
    Building = 0,
    Plants = 1,
    Pavement = 2,
    Sky = 3,
    Unknown = 4,
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; 5] = [Self::Building, Self::Plants, Self::Pavement, Self::Sky, Self::Unknown];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Building => "building",
            Self::Plants => "plants",
            Self::Pavement => "pavement",
            Self::Sky => "sky",
            Self::Unknown => "unknown",
        }
    }
}

impl fmt::Display for SemanticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SemanticLabel {
    type Err = GisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|l| l.name() == s).ok_or_else(|| GisError::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GisPolygon {
    pub id: String,
    /// Counter-clockwise ring without a repeated closing vertex.
    pub ring: Vec<Vec2>,
    pub label: SemanticLabel,
    pub walkable: bool,
}

impl GisPolygon {
    /// Validates and normalizes a ring: drops a repeated closing vertex,
    /// rejects self-intersections and reverses clockwise rings.
    pub fn new(id: impl Into<String>, ring: Vec<Vec2>, label: SemanticLabel, walkable: bool) -> Result<Self, GisError> {
        let id = id.into();
        let mut ring = ring;
        if !ring.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return Err(GisError::NonFinite(id));
        }
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        ring.dedup();
        if ring.len() < 3 {
            return Err(GisError::TooFewVertices(id));
        }
        if ring_self_intersects(&ring) {
            return Err(GisError::SelfIntersecting(id));
        }
        let area = signed_area(&ring);
        if area.abs() <= 1e-12 {
            return Err(GisError::Degenerate(id));
        }
        if area < 0.0 {
            log::warn!("polygon `{id}` ring is clockwise; reversing");
            ring.reverse();
        }
        Ok(Self { id, ring, label, walkable })
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.ring)
    }

    /// Strict interior test (boundary points are outside).
    pub fn contains_strict(&self, p: &Vec2) -> bool {
        point_in_ring(&self.ring, p) && !on_ring_boundary(&self.ring, p)
    }
}

/// Shoelace signed area, positive for counter-clockwise rings.
pub fn signed_area(ring: &[Vec2]) -> f64 {
    let n = ring.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

pub(crate) fn cross2(o: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(a: &Vec2, b: &Vec2, p: &Vec2) -> bool {
    cross2(a, b, p).abs() <= 1e-12 * (1.0 + (b - a).norm_squared())
        && p.x >= a.x.min(b.x) - 1e-12
        && p.x <= a.x.max(b.x) + 1e-12
        && p.y >= a.y.min(b.y) - 1e-12
        && p.y <= a.y.max(b.y) + 1e-12
}

fn segments_intersect(a: &Vec2, b: &Vec2, c: &Vec2, d: &Vec2) -> bool {
    let d1 = cross2(c, d, a);
    let d2 = cross2(c, d, b);
    let d3 = cross2(a, b, c);
    let d4 = cross2(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(c, d, a) || on_segment(c, d, b) || on_segment(a, b, c) || on_segment(a, b, d)
}

fn ring_self_intersects(ring: &[Vec2]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in i + 1..n {
            // Adjacent edges share exactly one endpoint.
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(&a, &b, &c, &d) {
                return true;
            }
        }
    }
    false
}

fn ring_bounds(ring: &[Vec2]) -> (Vec2, Vec2) {
    let mut lo = ring[0];
    let mut hi = ring[0];
    for p in ring {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

fn point_in_ring(ring: &[Vec2], p: &Vec2) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn on_ring_boundary(ring: &[Vec2], p: &Vec2) -> bool {
    let n = ring.len();
    (0..n).any(|i| on_segment(&ring[i], &ring[(i + 1) % n], p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GisMap {
    pub polygons: Vec<GisPolygon>,
}

impl GisMap {
    pub fn new(polygons: Vec<GisPolygon>) -> Result<Self, GisError> {
        if polygons.is_empty() {
            return Err(GisError::EmptyMap);
        }
        let mut seen = HashSet::new();
        for p in &polygons {
            if !seen.insert(p.id.as_str()) {
                return Err(GisError::DuplicateId(p.id.clone()));
            }
        }
        let boxes: Vec<(Vec2, Vec2)> = polygons.iter().map(|p| ring_bounds(&p.ring)).collect();
        for (i, inner) in polygons.iter().enumerate() {
            for (j, outer) in polygons.iter().enumerate() {
                let (bi, bo) = (&boxes[i], &boxes[j]);
                if i == j || bi.0.x < bo.0.x || bi.0.y < bo.0.y || bi.1.x > bo.1.x || bi.1.y > bo.1.y {
                    continue;
                }
                if inner.ring.iter().all(|v| outer.contains_strict(v)) {
                    return Err(GisError::Nested { inner: inner.id.clone(), outer: outer.id.clone() });
                }
            }
        }
        Ok(Self { polygons })
    }

    pub fn get(&self, id: &str) -> Option<&GisPolygon> {
        self.polygons.iter().find(|p| p.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.polygons.iter().position(|p| p.id == id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MapFile {
    #[serde(default = "default_crs")]
    crs: String,
    polygons: Vec<PolygonRecord>,
}

fn default_crs() -> String {
    "local-meters".to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct PolygonRecord {
    id: String,
    label: String,
    walkable: bool,
    ring: Vec<[f64; 2]>,
}

/// Deserializes JSON, keeping the path of the offending field on error.
pub(crate) fn from_json_str<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T, GisError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de)?;
    de.end().map_err(|e| GisError::Trailing(e.to_string()))?;
    Ok(value)
}

/// Parses a `map.json` document.
pub fn parse_map(text: &str) -> Result<GisMap, GisError> {
    let file: MapFile = from_json_str(text)?;
    if file.crs != "local-meters" {
        log::warn!("map crs `{}` treated as local meters", file.crs);
    }
    let polygons = file
        .polygons
        .into_iter()
        .map(|r| {
            let label = r.label.parse()?;
            let ring = r.ring.iter().map(|p| Vec2::new(p[0], p[1])).collect();
            GisPolygon::new(r.id, ring, label, r.walkable)
        })
        .collect::<Result<Vec<_>, _>>()?;
    GisMap::new(polygons)
}

pub fn map_to_json(map: &GisMap) -> String {
    let file = MapFile {
        crs: default_crs(),
        polygons: map
            .polygons
            .iter()
            .map(|p| PolygonRecord {
                id: p.id.clone(),
                label: p.label.name().to_string(),
                walkable: p.walkable,
                ring: p.ring.iter().map(|v| [v.x, v.y]).collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("map serializes")
}

#[derive(Debug, Clone, PartialEq)]
pub enum LiftOp {
    Extrude { height: f64 },
    Carve { depth: f64 },
    Tilt { anchors: [Vec3; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftInstruction {
    pub polygon: String,
    pub op: LiftOp,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LiftSpec {
    pub ground_elevation: f64,
    pub ops: Vec<LiftInstruction>,
}

impl LiftSpec {
    /// Checks op parameters and, when a map is given, polygon references.
    pub fn validate(&self, map: Option<&GisMap>) -> Result<(), GisError> {
        if !self.ground_elevation.is_finite() {
            return Err(GisError::NonFinite("ground_elevation".into()));
        }
        for ins in &self.ops {
            let invalid = |reason: String| GisError::InvalidOp { polygon: ins.polygon.clone(), reason };
            match &ins.op {
                LiftOp::Extrude { height } if !(height.is_finite() && *height > 0.0) => {
                    return Err(invalid(format!("extrude height {height} must be > 0")));
                }
                LiftOp::Carve { depth } if !(depth.is_finite() && *depth > 0.0) => {
                    return Err(invalid(format!("carve depth {depth} must be > 0")));
                }
                LiftOp::Tilt { anchors } => {
                    if !anchors.iter().all(|a| a.iter().all(|v| v.is_finite())) {
                        return Err(invalid("non-finite tilt anchor".into()));
                    }
                    let [a, b, c] = anchors.map(|a| Vec2::new(a.x, a.y));
                    let scale = (b - a).norm() * (c - a).norm();
                    if cross2(&a, &b, &c).abs() <= 1e-9 * scale.max(1e-300) {
                        return Err(invalid("tilt anchors are collinear in (x, y)".into()));
                    }
                }
                _ => {}
            }
            if let Some(map) = map {
                if map.get(&ins.polygon).is_none() {
                    return Err(GisError::UnknownPolygon(ins.polygon.clone()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LiftFile {
    #[serde(default)]
    ground_elevation: f64,
    ops: Vec<LiftRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LiftRecord {
    polygon: String,
    op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchors: Option<Vec<[f64; 3]>>,
}

/// Parses a `lift.json` document. When `map` is given, polygon references
/// are checked against it.
pub fn parse_liftspec(text: &str, map: Option<&GisMap>) -> Result<LiftSpec, GisError> {
    let file: LiftFile = from_json_str(text)?;
    let ops = file
        .ops
        .into_iter()
        .map(|r| {
            let missing = |field: &str| GisError::InvalidOp {
                polygon: r.polygon.clone(),
                reason: format!("`{}` requires `{field}`", r.op),
            };
            let op = match r.op.as_str() {
                "extrude" => LiftOp::Extrude { height: r.height.ok_or_else(|| missing("height"))? },
                "carve" => LiftOp::Carve { depth: r.depth.ok_or_else(|| missing("depth"))? },
                "tilt" => {
                    let anchors = r.anchors.as_ref().ok_or_else(|| missing("anchors"))?;
                    if anchors.len() != 3 {
                        return Err(GisError::InvalidOp {
                            polygon: r.polygon.clone(),
                            reason: format!("tilt needs 3 anchors, got {}", anchors.len()),
                        });
                    }
                    LiftOp::Tilt { anchors: [0, 1, 2].map(|i| Vec3::from(anchors[i])) }
                }
                other => return Err(GisError::InvalidOp { polygon: r.polygon.clone(), reason: format!("unknown op `{other}`") }),
            };
            Ok(LiftInstruction { polygon: r.polygon, op })
        })
        .collect::<Result<Vec<_>, GisError>>()?;
    let spec = LiftSpec { ground_elevation: file.ground_elevation, ops };
    spec.validate(map)?;
    Ok(spec)
}

pub fn liftspec_to_json(spec: &LiftSpec) -> String {
    let file = LiftFile {
        ground_elevation: spec.ground_elevation,
        ops: spec
            .ops
            .iter()
            .map(|ins| {
                let mut r =
                    LiftRecord { polygon: ins.polygon.clone(), op: String::new(), height: None, depth: None, anchors: None };
                match &ins.op {
                    LiftOp::Extrude { height } => {
                        r.op = "extrude".into();
                        r.height = Some(*height);
                    }
                    LiftOp::Carve { depth } => {
                        r.op = "carve".into();
                        r.depth = Some(*depth);
                    }
                    LiftOp::Tilt { anchors } => {
                        r.op = "tilt".into();
                        r.anchors = Some(anchors.iter().map(|a| [a.x, a.y, a.z]).collect());
                    }
                }
                r
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("lift spec serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const SQUARE: &str = r#"{"crs":"local-meters","polygons":[
        {"id":"P1","label":"pavement","walkable":true,"ring":[[0,0],[1,0],[1,1],[0,1]]}]}"#;

    #[test]
    fn parses_unit_square() {
        let map = parse_map(SQUARE).unwrap();
        assert_eq!(map.polygons.len(), 1);
        let p = &map.polygons[0];
        assert_eq!(p.label, SemanticLabel::Pavement);
        assert!(p.walkable);
        assert_relative_eq!(p.area(), 1.0);
    }

    #[test]
    fn clockwise_ring_is_reversed() {
        let text = r#"{"polygons":[{"id":"a","label":"building","walkable":false,
            "ring":[[0,0],[0,1],[1,1],[1,0]]}]}"#;
        let map = parse_map(text).unwrap();
        let p = &map.polygons[0];
        assert!(p.area() > 0.0);
        assert_eq!(p.ring[0], Vec2::new(1.0, 0.0));
    }

    #[test]
    fn closing_vertex_is_dropped() {
        let text = r#"{"polygons":[{"id":"a","label":"plants","walkable":false,
            "ring":[[0,0],[1,0],[1,1],[0,0]]}]}"#;
        assert_eq!(parse_map(text).unwrap().polygons[0].ring.len(), 3);
    }

    #[test]
    fn rejects_invalid_maps() {
        let bowtie = r#"{"polygons":[{"id":"a","label":"plants","walkable":false,
            "ring":[[0,0],[1,1],[1,0],[0,1]]}]}"#;
        assert!(matches!(parse_map(bowtie), Err(GisError::SelfIntersecting(_))));
        let dup = r#"{"polygons":[
            {"id":"a","label":"plants","walkable":false,"ring":[[0,0],[1,0],[0,1]]},
            {"id":"a","label":"plants","walkable":false,"ring":[[5,0],[6,0],[5,1]]}]}"#;
        assert!(matches!(parse_map(dup), Err(GisError::DuplicateId(_))));
        let label = r#"{"polygons":[{"id":"a","label":"lava","walkable":false,"ring":[[0,0],[1,0],[0,1]]}]}"#;
        assert!(matches!(parse_map(label), Err(GisError::UnknownLabel(_))));
        assert!(matches!(parse_map("{"), Err(GisError::Json(_))));
        assert!(matches!(parse_map(r#"{"polygons":[]}"#), Err(GisError::EmptyMap)));
        let nested = r#"{"polygons":[
            {"id":"out","label":"pavement","walkable":true,"ring":[[0,0],[10,0],[10,10],[0,10]]},
            {"id":"in","label":"building","walkable":false,"ring":[[4,4],[6,4],[6,6],[4,6]]}]}"#;
        assert!(matches!(parse_map(nested), Err(GisError::Nested { .. })));
    }

    #[test]
    fn adjacent_tiles_are_not_nested() {
        let text = r#"{"polygons":[
            {"id":"a","label":"pavement","walkable":true,"ring":[[0,0],[1,0],[1,1],[0,1]]},
            {"id":"b","label":"building","walkable":false,"ring":[[1,0],[2,0],[2,1],[1,1]]}]}"#;
        assert_eq!(parse_map(text).unwrap().polygons.len(), 2);
    }

    #[test]
    fn parses_liftspec() {
        let map = parse_map(SQUARE).unwrap();
        let spec = parse_liftspec(r#"{"ops":[{"polygon":"P1","op":"extrude","height":12.0}]}"#, Some(&map)).unwrap();
        assert_eq!(spec.ops.len(), 1);
        assert_eq!(spec.ground_elevation, 0.0);
        assert_eq!(spec.ops[0].op, LiftOp::Extrude { height: 12.0 });
    }

    #[test]
    fn rejects_invalid_liftspecs() {
        let map = parse_map(SQUARE).unwrap();
        let neg = r#"{"ops":[{"polygon":"P1","op":"extrude","height":-3.0}]}"#;
        assert!(matches!(parse_liftspec(neg, Some(&map)), Err(GisError::InvalidOp { .. })));
        let carve = r#"{"ops":[{"polygon":"P1","op":"carve","depth":0.0}]}"#;
        assert!(matches!(parse_liftspec(carve, Some(&map)), Err(GisError::InvalidOp { .. })));
        let collinear = r#"{"ops":[{"polygon":"P1","op":"tilt","anchors":[[0,0,0],[1,1,0],[2,2,1]]}]}"#;
        assert!(matches!(parse_liftspec(collinear, Some(&map)), Err(GisError::InvalidOp { .. })));
        let missing = r#"{"ops":[{"polygon":"B9","op":"extrude","height":3.0}]}"#;
        assert!(matches!(parse_liftspec(missing, Some(&map)), Err(GisError::UnknownPolygon(_))));
    }

    #[test]
    fn json_round_trip() {
        let map = parse_map(SQUARE).unwrap();
        assert_eq!(parse_map(&map_to_json(&map)).unwrap(), map);
        let spec = LiftSpec {
            ground_elevation: 1.5,
            ops: vec![LiftInstruction {
                polygon: "P1".into(),
                op: LiftOp::Tilt { anchors: [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 1.0)] },
            }],
        };
        assert_eq!(parse_liftspec(&liftspec_to_json(&spec), Some(&map)).unwrap(), spec);
    }
}
