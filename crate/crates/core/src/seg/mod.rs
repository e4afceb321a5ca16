//! Per-pixel context features rendered from the model and a linear pixel
//! classifier built on them.

mod classifier;

use thiserror::Error;

pub use classifier::{
    loss_and_gradient, predict_labels, subsample_pixels, train_pixel_classifier, ClassifierParams, SoftmaxModel, TrainSummary,
};

use crate::detect::{box_pixel_span, Detection};
use crate::gis::SemanticLabel;
use crate::raster::{FeatureStack, Raster};
use crate::render::{ContextMaps, NormalBin};

pub const HOG_BINS: usize = 9;
pub const HOG_CELL: usize = 8;
pub const HOG_EPS: f64 = 1e-6;
pub const DPM_FLOOR: f64 = -2.0;

/// Labels counted by the disc features; unknown only enlarges the disc.
pub const DISC_LABELS: [SemanticLabel; 4] =
    [SemanticLabel::Building, SemanticLabel::Plants, SemanticLabel::Pavement, SemanticLabel::Sky];
/// Normal bins counted by the disc features; none only enlarges the disc.
pub const DISC_NORMALS: [NormalBin; 3] = [NormalBin::Ground, NormalBin::Ceiling, NormalBin::Wall];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegError {
    #[error("empty raster")]
    EmptyRaster,
    #[error("raster {0}x{1} is smaller than one {HOG_CELL}x{HOG_CELL} cell")]
    TooSmall(usize, usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training labels contain a single class")]
    SingleClass,
}

/// Disc radii expressed as the pose angular errors they should absorb.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscFeatureParams {
    pub angular_errors_deg: Vec<f64>,
}

impl Default for DiscFeatureParams {
    fn default() -> Self {
        Self { angular_errors_deg: vec![0.0, 1.0, 3.0, 5.0] }
    }
}

impl DiscFeatureParams {
    /// `round(f tan(theta))` pixels per angle; must be strictly increasing.
    pub fn radii(&self, f: f64) -> Result<Vec<usize>, SegError> {
        let mut out: Vec<usize> = Vec::with_capacity(self.angular_errors_deg.len());
        for &deg in &self.angular_errors_deg {
            if !(0.0..90.0).contains(&deg) {
                return Err(SegError::InvalidParameter(format!("angle {deg} deg not in [0, 90)")));
            }
            let r = (f * deg.to_radians().tan()).round() as usize;
            if out.last().is_some_and(|&prev| r <= prev) {
                return Err(SegError::InvalidParameter(format!("radius {r} px for {deg} deg does not increase")));
            }
            out.push(r);
        }
        Ok(out)
    }
}

/// Horizontal half-widths of the integer disc `dx² + dy² <= r²`, one per `dy`
/// in `-r..=r`.
pub fn disc_spans(r: usize) -> Vec<usize> {
    let r = r as i64;
    (-r..=r)
        .map(|dy| {
            let rem = r * r - dy * dy;
            let mut hw = (rem as f64).sqrt() as i64;
            while hw * hw > rem {
                hw -= 1;
            }
            while (hw + 1) * (hw + 1) <= rem {
                hw += 1;
            }
            hw as usize
        })
        .collect()
}

/// Normalized disc counts for each category and radius. `cats[i]` is the
/// category of pixel `i` or `None` when it counts only toward the disc size.
/// Planes come out radius-major: `[r0 c0, r0 c1, ..., r1 c0, ...]`.
fn disc_counts(width: usize, height: usize, cats: &[Option<usize>], ncat: usize, radii: &[usize]) -> Vec<Vec<f64>> {
    // Row prefix sums per category: prefix[k][row * (w + 1) + col].
    let stride = width + 1;
    let mut prefix = vec![vec![0u32; stride * height]; ncat];
    for row in 0..height {
        for col in 0..width {
            for (k, p) in prefix.iter_mut().enumerate() {
                let hit = u32::from(cats[row * width + col] == Some(k));
                p[row * stride + col + 1] = p[row * stride + col] + hit;
            }
        }
    }
    let mut planes = Vec::with_capacity(radii.len() * ncat);
    for &r in radii {
        let spans = disc_spans(r);
        let mut out = vec![vec![0.0; width * height]; ncat];
        let rows: Vec<Vec<Vec<f64>>> = crate::par::map_range(height, |y| {
            let mut line = vec![vec![0.0; width]; ncat];
            for x in 0..width {
                let mut counts = vec![0u32; ncat];
                let mut n = 0u32;
                for (j, &hw) in spans.iter().enumerate() {
                    let yy = y as i64 + j as i64 - r as i64;
                    if yy < 0 || yy >= height as i64 {
                        continue;
                    }
                    let lo = x.saturating_sub(hw);
                    let hi = (x + hw + 1).min(width);
                    n += (hi - lo) as u32;
                    let base = yy as usize * stride;
                    for (k, p) in prefix.iter().enumerate() {
                        counts[k] += p[base + hi] - p[base + lo];
                    }
                }
                for k in 0..ncat {
                    line[k][x] = f64::from(counts[k]) / f64::from(n);
                }
            }
            line
        });
        for (y, line) in rows.into_iter().enumerate() {
            for (k, vals) in line.into_iter().enumerate() {
                out[k][y * width..(y + 1) * width].copy_from_slice(&vals);
            }
        }
        planes.extend(out);
    }
    planes
}

/// Fraction of building, plants, pavement and sky pixels in a disc of each
/// radius around every pixel, the disc clipped to the image.
pub fn disc_label_features(labels: &Raster<SemanticLabel>, radii: &[usize]) -> Result<FeatureStack, SegError> {
    if labels.data.is_empty() {
        return Err(SegError::EmptyRaster);
    }
    let cats: Vec<Option<usize>> = labels.data.iter().map(|l| DISC_LABELS.iter().position(|d| d == l)).collect();
    let planes = disc_counts(labels.width, labels.height, &cats, DISC_LABELS.len(), radii);
    let names = radii.iter().flat_map(|r| DISC_LABELS.iter().map(move |l| format!("disc_r{r}_{}", l.name()))).collect();
    let mut s = FeatureStack::new(labels.width, labels.height);
    s.push_planes(names, planes);
    Ok(s)
}

/// Fraction of ground, ceiling and wall pixels in a disc of each radius.
pub fn disc_normal_features(normals: &Raster<NormalBin>, radii: &[usize]) -> Result<FeatureStack, SegError> {
    if normals.data.is_empty() {
        return Err(SegError::EmptyRaster);
    }
    let cats: Vec<Option<usize>> = normals.data.iter().map(|n| DISC_NORMALS.iter().position(|d| d == n)).collect();
    let planes = disc_counts(normals.width, normals.height, &cats, DISC_NORMALS.len(), radii);
    let names = radii.iter().flat_map(|r| DISC_NORMALS.iter().map(move |n| format!("disc_r{r}_n{}", n.name()))).collect();
    let mut s = FeatureStack::new(normals.width, normals.height);
    s.push_planes(names, planes);
    Ok(s)
}

/// Inverse depth, zero where nothing was hit.
pub fn disparity(depth: &Raster<f64>) -> Raster<f64> {
    depth.map(|&d| if d.is_finite() && d > 0.0 { 1.0 / d } else { 0.0 })
}

/// Orientation bin of a gradient, unsigned over `[0, 180)` degrees.
pub fn hog_bin(gx: f64, gy: f64) -> usize {
    let mut a = gy.atan2(gx).to_degrees();
    if a < 0.0 {
        a += 180.0;
    }
    if a >= 180.0 {
        a -= 180.0;
    }
    ((a / (180.0 / HOG_BINS as f64)) as usize).min(HOG_BINS - 1)
}

/// 9-bin gradient orientation histograms of inverse depth over 8×8 cells,
/// each normalized by `sqrt(|v|² + eps²)`. Every pixel receives the vector
/// of its cell. Gradients are central differences with clamped borders.
pub fn depth_hog(depth: &Raster<f64>) -> Result<FeatureStack, SegError> {
    let (w, h) = (depth.width, depth.height);
    if w < HOG_CELL || h < HOG_CELL {
        return Err(SegError::TooSmall(w, h));
    }
    let d = disparity(depth);
    let at = |c: usize, r: usize| *d.get(c, r);
    let (cw, ch) = (w.div_ceil(HOG_CELL), h.div_ceil(HOG_CELL));
    let mut cells = vec![[0.0f64; HOG_BINS]; cw * ch];
    for r in 0..h {
        for c in 0..w {
            let gx = at((c + 1).min(w - 1), r) - at(c.saturating_sub(1), r);
            let gy = at(c, (r + 1).min(h - 1)) - at(c, r.saturating_sub(1));
            let m = gx.hypot(gy);
            if m > 0.0 {
                cells[(r / HOG_CELL) * cw + c / HOG_CELL][hog_bin(gx, gy)] += m;
            }
        }
    }
    for v in cells.iter_mut() {
        let norm = (v.iter().map(|x| x * x).sum::<f64>() + HOG_EPS * HOG_EPS).sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    let planes: Vec<Vec<f64>> =
        (0..HOG_BINS).map(|b| (0..w * h).map(|i| cells[((i / w) / HOG_CELL) * cw + (i % w) / HOG_CELL][b]).collect()).collect();
    let mut s = FeatureStack::new(w, h);
    s.push_planes((0..HOG_BINS).map(|b| format!("hog{b}")).collect(), planes);
    Ok(s)
}

/// Per-pixel maximum score of the detections of `class` whose boxes cover
/// the pixel, never below `floor`.
pub fn dpm_score_map(dets: &[Detection], class: &str, width: usize, height: usize, floor: f64) -> Raster<f64> {
    let mut out = Raster::filled(width, height, floor);
    for d in dets.iter().filter(|d| d.class == class) {
        let (c0, r0, c1, r1) = box_pixel_span(&d.bbox);
        let (c0, c1) = (c0.clamp(0, width as i64) as usize, c1.clamp(0, width as i64) as usize);
        let (r0, r1) = (r0.clamp(0, height as i64) as usize, r1.clamp(0, height as i64) as usize);
        for r in r0..r1 {
            for v in &mut out.data[r * width + c0..r * width + c1] {
                if d.score > *v {
                    *v = d.score;
                }
            }
        }
    }
    out
}

/// Which context channels go into a pixel feature stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureConfig {
    pub disc: DiscFeatureParams,
    /// Disc label and normal features from the rendered model.
    pub gis: bool,
    /// One DPM score map per class, in this order.
    pub dpm_classes: Vec<String>,
    pub dpm_floor: f64,
}

impl Default for PixelFeatureConfig {
    fn default() -> Self {
        Self { disc: DiscFeatureParams::default(), gis: true, dpm_classes: vec!["person".into()], dpm_floor: DPM_FLOOR }
    }
}

/// `[disc labels, disc normals]` (when enabled), depth HOG, then the DPM maps.
pub fn pixel_feature_stack(
    maps: &ContextMaps,
    f: f64,
    dets: &[Detection],
    config: &PixelFeatureConfig,
) -> Result<FeatureStack, SegError> {
    let (w, h) = (maps.width(), maps.height());
    let mut parts = Vec::new();
    if config.gis {
        let radii = config.disc.radii(f)?;
        parts.push(disc_label_features(&maps.labels, &radii)?);
        parts.push(disc_normal_features(&maps.normals, &radii)?);
    }
    parts.push(depth_hog(&maps.depth)?);
    let mut dpm = FeatureStack::new(w, h);
    let names = config.dpm_classes.iter().map(|c| format!("dpm_{c}")).collect();
    let planes = config.dpm_classes.iter().map(|c| dpm_score_map(dets, c, w, h, config.dpm_floor).data).collect();
    dpm.push_planes(names, planes);
    parts.push(dpm);
    concat_stacks(&parts.iter().collect::<Vec<_>>())
}

/// Concatenates stacks of equal size.
pub fn concat_stacks(stacks: &[&FeatureStack]) -> Result<FeatureStack, SegError> {
    let first = stacks.first().ok_or(SegError::EmptyRaster)?;
    let mut out = FeatureStack::new(first.width, first.height);
    for s in stacks {
        if s.width != first.width || s.height != first.height {
            return Err(SegError::DimensionMismatch { expected: first.width * first.height, got: s.width * s.height });
        }
        let planes = (0..s.channels()).map(|c| s.plane(c)).collect();
        out.push_planes(s.names.clone(), planes);
    }
    Ok(out)
}
