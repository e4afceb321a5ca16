//! Geosemantic context features for pedestrian detections and the linear
//! rescorer that consumes them.

mod svm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use svm::{primal_objective, rescore, train_rescorer, LinearModel, SvmParams, TrainReport};

use crate::geometry::{Camera, Ray, Vec3};
use crate::gis::{LabeledMesh, SemanticLabel};
use crate::render::{discretize_unit_normal, Bvh, ContextMaps, NormalBin};
use crate::HUMAN_HEIGHT;

pub const LABEL_BINS: usize = 5;
pub const NORMAL_BINS: usize = 4;
pub const BAND_DIM: usize = 3 * (LABEL_BINS + NORMAL_BINS);
pub const FEATURE_DIM: usize = 1 + 4 + 4 + 3 * BAND_DIM;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
    #[error("box has zero pixel area")]
    ZeroArea,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training data needs both classes")]
    SingleClass,
    #[error("no training examples")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Axis-aligned box `(x1, y1, x2, y2)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// A detector output. `mixture` is 1 (full body), 2 (upper half) or 3 (head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(with = "bbox_array")]
    pub bbox: BBox,
    pub score: f64,
    pub mixture: u8,
    #[serde(rename = "class", default = "default_class")]
    pub class: String,
}

fn default_class() -> String {
    "person".to_string()
}

mod bbox_array {
    use super::BBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &BBox, s: S) -> Result<S::Ok, S::Error> {
        b.as_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BBox, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        Ok(BBox { x1, y1, x2, y2 })
    }
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, mixture: u8) -> Self {
        Self { bbox, score, mixture, class: default_class() }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let b = &self.bbox;
        if !b.as_array().iter().all(|v| v.is_finite()) || !self.score.is_finite() {
            return Err(DetectError::InvalidDetection("non-finite value".into()));
        }
        if !(b.x2 > b.x1 && b.y2 > b.y1) {
            return Err(DetectError::InvalidDetection(format!("empty box {:?}", b.as_array())));
        }
        if !(1..=3).contains(&self.mixture) {
            return Err(DetectError::InvalidDetection(format!("mixture {} not in 1..=3", self.mixture)));
        }
        Ok(())
    }
}

/// Full-body box implied by a detection: the top edge stays and the height
/// grows by the mixture multiplier.
pub fn hypothesize_fullbody(det: &Detection) -> BBox {
    let b = det.bbox;
    BBox { y2: b.y1 + f64::from(det.mixture) * b.height(), ..b }
}

/// `[v (h - h_mu)², w, n, 1 - v]` for one height estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeightFeature {
    pub e: f64,
    pub w: f64,
    pub n: f64,
    pub inv: f64,
    /// The height estimate behind `e`, when valid.
    #[serde(skip)]
    pub height: Option<f64>,
}

impl HeightFeature {
    pub const INVALID: HeightFeature = HeightFeature { e: 0.0, w: 0.0, n: 0.0, inv: 1.0, height: None };

    fn valid(height: f64, walkable: bool, normal: &Vec3) -> Self {
        Self {
            e: (height - HUMAN_HEIGHT).powi(2),
            w: if walkable { 1.0 } else { 0.0 },
            n: if discretize_unit_normal(normal) == NormalBin::Ground { 1.0 } else { 0.0 },
            inv: 0.0,
            height: Some(height),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.e, self.w, self.n, self.inv]
    }
}

/// Height from the foot point. Every surface crossed by the ray through the
/// bottom center of `fullbody` gives a candidate `h = z h_im / f`; the one
/// closest to the average human height wins, ties going to the nearer hit.
pub fn foot_height_feature(fullbody: &BBox, camera: &Camera, bvh: &Bvh, mesh: &LabeledMesh) -> HeightFeature {
    let h_im = fullbody.height();
    let ray = camera.cast_ray(0.5 * (fullbody.x1 + fullbody.x2), fullbody.y2);
    let mut best: Option<(f64, f64, usize)> = None;
    let hits = bvh.raycast_all(mesh, &ray);
    for (k, hit) in hits.iter().enumerate() {
        let z = camera.axial_depth(&ray, hit.t);
        let h = z / camera.f() * h_im;
        let err = (h - HUMAN_HEIGHT).powi(2);
        if best.is_none_or(|(e, _, _)| err < e) {
            best = Some((err, h, k));
        }
    }
    match best {
        Some((_, h, k)) => HeightFeature::valid(h, hits[k].walkable, &hits[k].normal),
        None => HeightFeature::INVALID,
    }
}

/// Head point at the depth an average person of image height `h_im` would
/// have, `z_o = h_mu f / h_im`.
pub fn expected_depth(f: f64, h_im: f64) -> f64 {
    HUMAN_HEIGHT * f / h_im
}

/// Height from the expected depth. The head is placed at depth `z_o` on the
/// ray through the top center and dropped onto the model. The estimate is
/// invalid if the model occludes the head point or nothing lies below it.
pub fn head_depth_feature(fullbody: &BBox, camera: &Camera, bvh: &Bvh, mesh: &LabeledMesh) -> HeightFeature {
    let z_o = expected_depth(camera.f(), fullbody.height());
    let ray = camera.cast_ray(0.5 * (fullbody.x1 + fullbody.x2), fullbody.y1);
    let cos = ray.dir.dot(&camera.optical_axis());
    if !(cos > 0.0) || !z_o.is_finite() {
        return HeightFeature::INVALID;
    }
    let t_head = z_o / cos;
    if let Some(first) = bvh.raycast(mesh, &ray) {
        if first.t < t_head {
            return HeightFeature::INVALID;
        }
    }
    let head = ray.point_at(t_head);
    match bvh.raycast(mesh, &Ray::new(head, Vec3::new(0.0, 0.0, -1.0))) {
        Some(ground) => HeightFeature::valid(head.z - ground.point.z, ground.walkable, &ground.normal),
        None => HeightFeature::INVALID,
    }
}

/// Label and normal histograms for the top, center and bottom thirds of a box.
#[derive(Debug, Clone, PartialEq)]
pub struct BandHistograms {
    pub labels: [[f64; LABEL_BINS]; 3],
    pub normals: [[f64; NORMAL_BINS]; 3],
}

impl BandHistograms {
    /// `[labels_top, normals_top, labels_center, ...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(BAND_DIM);
        for b in 0..3 {
            out.extend_from_slice(&self.labels[b]);
            out.extend_from_slice(&self.normals[b]);
        }
        out
    }
}

/// Pixel rows and columns covered by a box: those whose centers fall inside.
pub fn box_pixel_span(b: &BBox) -> (i64, i64, i64, i64) {
    let first = |a: f64| (a - 0.5).ceil() as i64;
    (first(b.x1), first(b.y1), first(b.x2), first(b.y2))
}

/// Rows in each band; leftover rows go to the top band, then the center.
pub fn band_rows(rows: i64) -> [i64; 3] {
    let base = rows / 3;
    let rem = rows % 3;
    [base + i64::from(rem >= 1), base + i64::from(rem >= 2), base]
}

/// Normalized per-band histograms. Pixels outside the image count as
/// unknown label and no normal.
pub fn band_histograms(fullbody: &BBox, maps: &ContextMaps) -> Result<BandHistograms, DetectError> {
    let (c0, r0, c1, r1) = box_pixel_span(fullbody);
    if c1 <= c0 || r1 <= r0 {
        return Err(DetectError::ZeroArea);
    }
    let (w, h) = (maps.width() as i64, maps.height() as i64);
    let rows = band_rows(r1 - r0);
    let mut out = BandHistograms { labels: [[0.0; LABEL_BINS]; 3], normals: [[0.0; NORMAL_BINS]; 3] };
    let mut start = r0;
    for band in 0..3 {
        let mut lab = [0usize; LABEL_BINS];
        let mut nor = [0usize; NORMAL_BINS];
        for r in start..start + rows[band] {
            for c in c0..c1 {
                if (0..w).contains(&c) && (0..h).contains(&r) {
                    let (x, y) = (c as usize, r as usize);
                    lab[maps.labels.get(x, y).code() as usize] += 1;
                    nor[maps.normals.get(x, y).code() as usize] += 1;
                } else {
                    lab[SemanticLabel::Unknown.code() as usize] += 1;
                    nor[NormalBin::None.code() as usize] += 1;
                }
            }
        }
        let total = (rows[band] * (c1 - c0)) as f64;
        if total > 0.0 {
            for i in 0..LABEL_BINS {
                out.labels[band][i] = lab[i] as f64 / total;
            }
            for i in 0..NORMAL_BINS {
                out.normals[band][i] = nor[i] as f64 / total;
            }
        }
        start += rows[band];
    }
    Ok(out)
}

/// `[s, F_i, F_o, F_b]` where `F_b` holds the band histograms in the block of
/// the detection's mixture and zeros in the other two.
pub fn build_feature(
    det: &Detection,
    camera: &Camera,
    bvh: &Bvh,
    mesh: &LabeledMesh,
    maps: &ContextMaps,
) -> Result<Vec<f64>, DetectError> {
    det.validate()?;
    let full = hypothesize_fullbody(det);
    let fi = foot_height_feature(&full, camera, bvh, mesh);
    let fo = head_depth_feature(&full, camera, bvh, mesh);
    let bands = band_histograms(&full, maps)?;
    let mut out = Vec::with_capacity(FEATURE_DIM);
    out.push(det.score);
    out.extend_from_slice(&fi.to_array());
    out.extend_from_slice(&fo.to_array());
    let hb = bands.to_vec();
    for m in 1..=3u8 {
        if m == det.mixture {
            out.extend_from_slice(&hb);
        } else {
            out.extend(std::iter::repeat_n(0.0, BAND_DIM));
        }
    }
    debug_assert_eq!(out.len(), FEATURE_DIM);
    Ok(out)
}

/// Column names matching [`build_feature`].
pub fn feature_names() -> Vec<String> {
    let mut names = vec!["score".to_string()];
    for est in ["foot", "head"] {
        for part in ["e", "w", "n", "inv"] {
            names.push(format!("{est}_{part}"));
        }
    }
    for m in 1..=3 {
        for band in ["top", "center", "bottom"] {
            for l in SemanticLabel::ALL {
                names.push(format!("m{m}_{band}_{}", l.name()));
            }
            for n in [NormalBin::Ground, NormalBin::Ceiling, NormalBin::Wall, NormalBin::None] {
                names.push(format!("m{m}_{band}_n{}", n.name()));
            }
        }
    }
    names
}

/// Greedy non-maximum suppression. Boxes are visited by descending score
/// (input order among equal scores) and dropped when their IoU with a kept
/// box exceeds `iou_threshold`. Returns kept indices in visiting order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| dets[k].bbox.iou(&dets[i].bbox) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_indices(dets, iou_threshold).into_iter().map(|i| dets[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: [f64; 4], score: f64, m: u8) -> Detection {
        Detection::new(BBox::new(b[0], b[1], b[2], b[3]), score, m)
    }

    #[test]
    fn fullbody_hypotheses() {
        assert_eq!(hypothesize_fullbody(&det([0.0, 0.0, 50.0, 100.0], 0.0, 1)).as_array(), [0.0, 0.0, 50.0, 100.0]);
        assert_eq!(hypothesize_fullbody(&det([0.0, 0.0, 50.0, 100.0], 0.0, 2)).as_array(), [0.0, 0.0, 50.0, 200.0]);
        assert_eq!(hypothesize_fullbody(&det([5.0, 10.0, 20.0, 50.0], 0.0, 3)).height(), 120.0);
    }

    #[test]
    fn expected_depth_example() {
        assert!((expected_depth(1000.0, 85.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn band_split() {
        assert_eq!(band_rows(9), [3, 3, 3]);
        assert_eq!(band_rows(10), [4, 3, 3]);
        assert_eq!(band_rows(11), [4, 4, 3]);
        assert_eq!(band_rows(2), [1, 1, 0]);
    }

    #[test]
    fn nms_basics() {
        let same = vec![det([0.0, 0.0, 10.0, 10.0], 0.8, 1), det([0.0, 0.0, 10.0, 10.0], 0.9, 1)];
        let kept = nms(&same, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        let apart = vec![det([0.0, 0.0, 10.0, 10.0], 0.8, 1), det([20.0, 0.0, 30.0, 10.0], 0.9, 1)];
        assert_eq!(nms(&apart, 0.5).len(), 2);
    }

    #[test]
    fn validation() {
        assert!(det([0.0, 0.0, 1.0, 1.0], 0.0, 4).validate().is_err());
        assert!(det([0.0, 0.0, 0.0, 1.0], 0.0, 1).validate().is_err());
        assert!(det([0.0, 0.0, 1.0, 1.0], 0.0, 2).validate().is_ok());
    }

    #[test]
    fn names_match_dimension() {
        assert_eq!(feature_names().len(), FEATURE_DIM);
        assert_eq!(FEATURE_DIM, 90);
    }

    #[test]
    fn detection_json() {
        let d: Detection = serde_json::from_str(r#"{"bbox":[1,2,3,4],"score":0.5,"mixture":2,"class":"person"}"#).unwrap();
        assert_eq!(d.bbox.as_array(), [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.mixture, 2);
    }
}
