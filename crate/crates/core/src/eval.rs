//! Depth, detection and segmentation metrics.

use serde::Serialize;
use thiserror::Error;

use crate::detect::{BBox, Detection};
use crate::raster::Raster;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("raster size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("no valid pixels to compare")]
    NoValidPixels,
    #[error("no ground-truth boxes")]
    NoGroundTruth,
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub const DELTA_BASE: f64 = 1.25;

/// Absolute relative error histogram bins: `[0, 1%, 2%, 5%, 10%, 20%, 50%, inf)`.
pub const ABS_ERR_EDGES: [f64; 7] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub frac_delta_1: f64,
    pub frac_delta_2: f64,
    pub frac_delta_3: f64,
    pub mean_rel_err: f64,
    pub median_rel_err: f64,
    /// Pixel counts per bin of `|est - gt| / gt` (see `abs_err_edges`).
    pub abs_err_histogram: Vec<usize>,
    pub abs_err_edges: Vec<f64>,
    pub valid_pixel_count: usize,
    /// Pixels skipped because either depth is infinite or the truth is not positive.
    pub excluded_pixel_count: usize,
}

fn check_size<A, B>(a: &Raster<A>, b: &Raster<B>) -> Result<(), EvalError> {
    if a.width != b.width || a.height != b.height {
        return Err(EvalError::SizeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Compares an estimated depth map with ground truth using
/// `delta = max(gt / est, est / gt)`.
pub fn depth_metrics(est: &Raster<f64>, gt: &Raster<f64>) -> Result<DepthMetrics, EvalError> {
    check_size(est, gt)?;
    let mut counts = [0usize; 3];
    let mut rel = Vec::new();
    let mut excluded = 0;
    let thresholds = [DELTA_BASE, DELTA_BASE.powi(2), DELTA_BASE.powi(3)];
    for (&e, &g) in est.data.iter().zip(&gt.data) {
        if !(e.is_finite() && g.is_finite() && g > 0.0 && e > 0.0) {
            excluded += 1;
            continue;
        }
        let delta = (g / e).max(e / g);
        for (c, t) in counts.iter_mut().zip(thresholds) {
            if delta < t {
                *c += 1;
            }
        }
        rel.push((e - g).abs() / g);
    }
    if rel.is_empty() {
        return Err(EvalError::NoValidPixels);
    }
    let n = rel.len() as f64;
    let mean = rel.iter().sum::<f64>() / n;
    let mut hist = vec![0usize; ABS_ERR_EDGES.len()];
    for &r in &rel {
        let bin = ABS_ERR_EDGES.iter().rposition(|&edge| r >= edge).unwrap_or(0);
        hist[bin] += 1;
    }
    rel.sort_by(f64::total_cmp);
    let m = rel.len();
    let median = if m % 2 == 1 { rel[m / 2] } else { 0.5 * (rel[m / 2 - 1] + rel[m / 2]) };
    Ok(DepthMetrics {
        frac_delta_1: counts[0] as f64 / n,
        frac_delta_2: counts[1] as f64 / n,
        frac_delta_3: counts[2] as f64 / n,
        mean_rel_err: mean,
        median_rel_err: median,
        abs_err_histogram: hist,
        abs_err_edges: ABS_ERR_EDGES.to_vec(),
        valid_pixel_count: m,
        excluded_pixel_count: excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionRecall {
    /// `(precision, recall)` after each ranked detection.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
    pub true_positives: usize,
    pub num_gt: usize,
}

/// A detection with the image it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetection {
    pub image: usize,
    pub bbox: BBox,
    pub score: f64,
}

impl ImageDetection {
    pub fn from_detection(image: usize, d: &Detection) -> Self {
        Self { image, bbox: d.bbox, score: d.score }
    }
}

/// PASCAL-style average precision. Detections are ranked by score (input
/// order among ties); each claims the unmatched ground-truth box of its image
/// with the highest IoU, provided that IoU is at least `iou`. AP integrates
/// the monotone precision envelope over all recall points, or samples it at
/// 11 recall levels when `eleven_point` is set.
pub fn average_precision(
    dets: &[ImageDetection],
    gt: &[Vec<BBox>],
    iou: f64,
    eleven_point: bool,
) -> Result<PrecisionRecall, EvalError> {
    let num_gt: usize = gt.iter().map(Vec::len).sum();
    if num_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    if let Some(d) = dets.iter().find(|d| d.image >= gt.len()) {
        return Err(EvalError::Invalid(format!("detection refers to image {} of {}", d.image, gt.len())));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut used: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::with_capacity(dets.len());
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt[d.image].iter().enumerate() {
            if used[d.image][j] {
                continue;
            }
            let o = d.bbox.iou(g);
            if o >= iou && best.is_none_or(|(_, bo)| o > bo) {
                best = Some((j, o));
            }
        }
        match best {
            Some((j, _)) => {
                used[d.image][j] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        points.push((tp as f64 / (tp + fp) as f64, tp as f64 / num_gt as f64));
    }
    let ap = if eleven_point { ap_eleven(&points) } else { ap_all_points(&points) };
    Ok(PrecisionRecall { points, ap, true_positives: tp, num_gt })
}

fn ap_all_points(points: &[(f64, f64)]) -> f64 {
    let mut rec = vec![0.0];
    let mut prec = vec![0.0];
    for &(p, r) in points {
        rec.push(r);
        prec.push(p);
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    (1..rec.len()).map(|i| (rec[i] - rec[i - 1]) * prec[i]).sum()
}

fn ap_eleven(points: &[(f64, f64)]) -> f64 {
    (0..=10)
        .map(|k| {
            let t = k as f64 / 10.0;
            points.iter().filter(|(_, r)| *r >= t).map(|(p, _)| *p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Area under the ROC curve of scores against binary labels, counting tied
/// pairs as one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != positive.len() {
        return Err(EvalError::Invalid("score and label counts differ".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let npos = positive.iter().filter(|&&p| p).count();
    let nneg = positive.len() - npos;
    if npos == 0 || nneg == 0 {
        return Err(EvalError::Invalid("need both classes".into()));
    }
    // Mann-Whitney U with average ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (npos * (npos + 1)) as f64 / 2.0;
    Ok(u / (npos * nneg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoUReport {
    /// `None` for classes absent from both rasters.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes present in the ground truth.
    pub overall: f64,
}

pub fn segmentation_iou(pred: &Raster<u8>, gt: &Raster<u8>, num_classes: usize) -> Result<IoUReport, EvalError> {
    check_size(pred, gt)?;
    let mut inter = vec![0usize; num_classes];
    let mut pc = vec![0usize; num_classes];
    let mut gc = vec![0usize; num_classes];
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_classes || g >= num_classes {
            return Err(EvalError::Invalid(format!("class code {} outside {num_classes} classes", p.max(g))));
        }
        pc[p] += 1;
        gc[g] += 1;
        if p == g {
            inter[p] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let union = pc[c] + gc[c] - inter[c];
            (union > 0).then(|| inter[c] as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = (0..num_classes).filter(|&c| gc[c] > 0).map(|c| per_class[c].unwrap_or(0.0)).collect();
    let overall = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(IoUReport { per_class, overall })
}
