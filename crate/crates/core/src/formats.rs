//! On-disk records shared by the command-line tools.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, GeometryError, Intrinsics, Mat3, Pose, Vec2, Vec3};
use crate::resection::ClusterMatches;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("invalid camera")]
    Camera(#[from] GeometryError),
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// `camera.json`: intrinsics plus the world-to-camera rotation (row-major)
/// and translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub width: u32,
    pub height: u32,
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl CameraFile {
    pub fn from_camera(c: &Camera) -> Self {
        let m = c.pose.rotation();
        let t = c.pose.translation();
        Self {
            width: c.intrinsics.width,
            height: c.intrinsics.height,
            f: c.intrinsics.f,
            cx: c.intrinsics.cx,
            cy: c.intrinsics.cy,
            r: std::array::from_fn(|k| m[(k / 3, k % 3)]),
            t: [t.x, t.y, t.z],
        }
    }

    /// Validates intrinsics and re-orthonormalizes a rotation that is off
    /// by at most rounding (e.g. after a decimal round trip).
    pub fn to_camera(&self) -> Result<Camera, FormatError> {
        let k = Intrinsics::new(self.f, self.cx, self.cy, self.width, self.height)?;
        let r = Mat3::from_row_slice(&self.r);
        let pose = match Pose::new(r, Vec3::from(self.t)) {
            Ok(p) => p,
            Err(e) => {
                let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
                if ortho < 1e-6 && r.determinant() > 0.0 {
                    Pose::from_approx(&r, Vec3::from(self.t))
                } else {
                    return Err(e.into());
                }
            }
        };
        Ok(Camera::new(k, pose)?)
    }
}

/// `correspondences.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceFile {
    pub clusters: Vec<ClusterMatches>,
}

/// `cloud.json`: a point cloud in its own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudFile {
    pub points: Vec<[f64; 3]>,
}

impl CloudFile {
    pub fn to_points(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| Vec3::from(*p)).collect()
    }

    pub fn from_points(points: &[Vec3]) -> Self {
        Self { points: points.iter().map(|p| [p.x, p.y, p.z]).collect() }
    }
}

/// `pairs.json`: paired 2D points, e.g. SfM ground-plane coordinates (`src`)
/// and their map positions (`dst`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsFile {
    pub src: Vec<[f64; 2]>,
    pub dst: Vec<[f64; 2]>,
}

impl PairsFile {
    pub fn points(&self) -> (Vec<Vec2>, Vec<Vec2>) {
        let conv = |v: &[[f64; 2]]| v.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        (conv(&self.src), conv(&self.dst))
    }
}

/// Writes a feature table: a header row, one row per example, the label in
/// the last column.
pub fn write_features_csv(names: &[String], rows: &[Vec<f64>], labels: &[f64]) -> String {
    let mut out = names.join(",");
    out.push_str(",label\n");
    for (row, label) in rows.iter().zip(labels) {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    out
}

pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

pub fn read_features_csv(text: &str) -> Result<FeatureTable, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(FormatError::Csv { line: 1, reason: "missing header".into() })?;
    let mut names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if names.last().map(String::as_str) != Some("label") {
        return Err(FormatError::Csv { line: 1, reason: "last column must be `label`".into() });
    }
    names.pop();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FormatError::Csv { line: i + 1, reason: e.to_string() })?;
        if vals.len() != names.len() + 1 {
            return Err(FormatError::Csv {
                line: i + 1,
                reason: format!("{} columns, expected {}", vals.len(), names.len() + 1),
            });
        }
        labels.push(vals[names.len()]);
        rows.push(vals[..names.len()].to_vec());
    }
    Ok(FeatureTable { names, rows, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::look_rotation;

    #[test]
    fn camera_round_trip() {
        let k = Intrinsics::centered(500.0, 320, 240).unwrap();
        let pose = Pose::from_center(look_rotation(0.4, 0.1, 0.02), Vec3::new(1.0, 2.0, 1.6)).unwrap();
        let cam = Camera::new(k, pose).unwrap();
        let text = serde_json::to_string(&CameraFile::from_camera(&cam)).unwrap();
        let back: CameraFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_camera().unwrap(), cam, "{text}");
    }

    #[test]
    fn csv_round_trip() {
        let names = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec![1.5, -2.0], vec![0.1, 3.0]];
        let text = write_features_csv(&names, &rows, &[1.0, -1.0]);
        let t = read_features_csv(&text).unwrap();
        assert_eq!(t.names, names);
        assert_eq!(t.rows, rows);
        assert_eq!(t.labels, vec![1.0, -1.0]);
        assert!(read_features_csv("a,b\n1,2\n").is_err());
        assert!(read_features_csv("a,label\n1\n").is_err());
    }
}
