use std::path::Path;

use anyhow::anyhow;
use geolift_core::align::{icp_refine, procrustes2d, IcpParams, RigidTransform3D, Similarity2D};
use geolift_core::detect::{
    build_feature, feature_names, hypothesize_fullbody, nms_indices, rescore, train_rescorer, BBox, Detection, LinearModel,
    SvmParams,
};
use geolift_core::eval::{average_precision, depth_metrics, segmentation_iou, ImageDetection};
use geolift_core::formats::{read_features_csv, write_features_csv, CameraFile, CloudFile, CorrespondenceFile, PairsFile};
use geolift_core::geometry::{Camera, Intrinsics, Vec2, Vec3};
use geolift_core::gis::{lift, liftspec_to_json, map_to_json, parse_liftspec, parse_map, LabeledMesh};
use geolift_core::raster::{write_pfm, write_pgm};
use geolift_core::render::{render_context, Bvh};
use geolift_core::resection::{resect_against_clusters, RansacParams};
use geolift_core::seg::{
    pixel_feature_stack, predict_labels, subsample_pixels, train_pixel_classifier, ClassifierParams, DiscFeatureParams,
    PixelFeatureConfig, SoftmaxModel,
};
use geolift_core::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::io::{read_json, read_pfm, read_pgm, read_stack, read_text, write_bytes, write_json, write_text};
use crate::{Classify, Cli, Command, Failure};

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let seed = cli.seed;
    match &cli.command {
        Command::Lift(a) => lift_cmd(a),
        Command::Align(a) => align_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Resect(a) => resect_cmd(a, seed),
        Command::Detfeat(a) => detfeat_cmd(a),
        Command::TrainRescore(a) => train_rescore_cmd(a),
        Command::Rescore(a) => rescore_cmd(a),
        Command::Segfeat(a) => segfeat_cmd(a),
        Command::TrainSeg(a) => train_seg_cmd(a, seed),
        Command::PredictSeg(a) => predict_seg_cmd(a),
        Command::EvalDepth(a) => eval_depth_cmd(a),
        Command::EvalDet(a) => eval_det_cmd(a),
        Command::EvalSeg(a) => eval_seg_cmd(a),
        Command::Synth(a) => synth_cmd(a, seed),
    }
}

fn invalid(msg: String) -> Failure {
    Failure::Invalid(anyhow!(msg))
}

fn load_mesh(path: &Path) -> Result<(LabeledMesh, Bvh), Failure> {
    let mesh = LabeledMesh::from_json(&read_text(path)?).invalid(&path.display().to_string())?;
    let bvh = Bvh::build(&mesh).invalid(&path.display().to_string())?;
    Ok((mesh, bvh))
}

fn load_camera(path: &Path) -> Result<Camera, Failure> {
    read_json::<CameraFile>(path)?.to_camera().invalid(&path.display().to_string())
}

fn load_detections(path: &Path) -> Result<Vec<Detection>, Failure> {
    let dets: Vec<Detection> = read_json(path)?;
    for (i, d) in dets.iter().enumerate() {
        d.validate().invalid(&format!("{}: detection {i}", path.display()))?;
    }
    Ok(dets)
}

fn load_boxes(path: &Path) -> Result<Vec<BBox>, Failure> {
    let raw: Vec<[f64; 4]> = read_json(path)?;
    raw.into_iter()
        .enumerate()
        .map(|(i, [x1, y1, x2, y2])| {
            if [x1, y1, x2, y2].iter().all(|v| v.is_finite()) && x2 > x1 && y2 > y1 {
                Ok(BBox::new(x1, y1, x2, y2))
            } else {
                Err(invalid(format!("{}: box {i} is empty or not finite", path.display())))
            }
        })
        .collect()
}

fn lift_cmd(a: &crate::LiftArgs) -> Result<(), Failure> {
    let map = parse_map(&read_text(&a.map)?).invalid(&a.map.display().to_string())?;
    let spec = parse_liftspec(&read_text(&a.spec)?, Some(&map)).invalid(&a.spec.display().to_string())?;
    let mesh = lift(&map, &spec).invalid("lifting the map")?;
    write_text(&a.out, &mesh.to_json())?;
    if let Some(obj) = &a.obj {
        write_text(obj, &mesh.to_obj())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AlignReport {
    similarity: Option<Similarity2D>,
    procrustes_rms: Option<f64>,
    rigid: Option<RigidTransform3D>,
    rms_history: Vec<f64>,
    converged: Option<bool>,
    diagnostic: Option<String>,
}

/// Maps an SfM point into the map frame: the similarity acts on x and y,
/// heights scale with it.
fn apply_similarity(s: &Similarity2D, p: &Vec3) -> Vec3 {
    let xy = s.apply(&Vec2::new(p.x, p.y));
    Vec3::new(xy.x, xy.y, s.scale * p.z)
}

fn align_cmd(a: &crate::AlignArgs) -> Result<(), Failure> {
    if a.pairs.is_none() && a.cloud.is_none() {
        return Err(invalid("align needs --pairs, --cloud or both".into()));
    }
    let params = IcpParams { max_iters: a.max_iters, tol: a.tol, trim_fraction: a.trim };
    if params.tol.is_nan() || params.tol < 0.0 || !(0.0..1.0).contains(&params.trim_fraction) {
        return Err(invalid("--tol must be >= 0 and --trim in [0, 1)".into()));
    }
    let pairs = a.pairs.as_deref().map(read_json::<PairsFile>).transpose()?;
    let cloud = a.cloud.as_deref().map(read_json::<CloudFile>).transpose()?;
    let mesh = match (&cloud, &a.mesh) {
        (Some(_), Some(m)) => Some(load_mesh(m)?),
        (Some(_), None) => return Err(invalid("--cloud requires --mesh".into())),
        _ => None,
    };
    let mut report = AlignReport {
        similarity: None,
        procrustes_rms: None,
        rigid: None,
        rms_history: Vec::new(),
        converged: None,
        diagnostic: None,
    };
    let mut sim = Similarity2D::identity();
    if let Some(p) = &pairs {
        let (src, dst) = p.points();
        let fit = procrustes2d(&src, &dst).invalid("pairs")?;
        sim = fit.transform;
        report.similarity = Some(fit.transform);
        report.procrustes_rms = Some(fit.rms);
    }
    if let (Some(c), Some((mesh, _))) = (&cloud, &mesh) {
        let pts: Vec<Vec3> = c.to_points().iter().map(|p| apply_similarity(&sim, p)).collect();
        let r = icp_refine(&pts, mesh, &RigidTransform3D::identity(), &params).runtime("icp")?;
        if let Some(out) = &a.aligned_cloud {
            let moved: Vec<Vec3> = pts.iter().map(|p| r.transform.apply(p)).collect();
            write_json(out, &CloudFile::from_points(&moved))?;
        }
        report.rigid = Some(r.transform);
        report.rms_history = r.rms_history;
        report.converged = Some(r.converged);
        report.diagnostic = r.diagnostic;
    }
    write_json(&a.out, &report)
}

fn render_cmd(a: &crate::RenderArgs) -> Result<(), Failure> {
    let camera = load_camera(&a.camera)?;
    let (mesh, bvh) = load_mesh(&a.mesh)?;
    let maps = render_context(&camera, &bvh, &mesh);
    std::fs::create_dir_all(&a.out_dir).runtime("creating output directory")?;
    maps.write_to(&a.out_dir, &a.stem).runtime("writing rasters")
}

fn resect_cmd(a: &crate::ResectArgs, seed: u64) -> Result<(), Failure> {
    let file: CorrespondenceFile = read_json(&a.correspondences)?;
    let intrinsics: Intrinsics = read_json(&a.intrinsics)?;
    intrinsics.validate().invalid(&a.intrinsics.display().to_string())?;
    let params = RansacParams {
        inlier_px: a.inlier_px,
        confidence: a.confidence,
        max_iters: a.max_iters,
        min_inliers: a.min_inliers,
        seed,
    };
    params.validate().invalid("RANSAC parameters")?;
    if file.clusters.is_empty() {
        return Err(invalid(format!("{}: no clusters", a.correspondences.display())));
    }
    let model = match (&a.mesh, a.no_filter) {
        (Some(m), false) => Some(load_mesh(m)?),
        _ => None,
    };
    let (selection, attempts) =
        resect_against_clusters(&file.clusters, &intrinsics, &params, model.as_ref().map(|(m, b)| (b, m)));
    let attempts_json: Vec<_> = attempts
        .iter()
        .map(|at| match &at.result {
            Ok(r) => {
                json!({"cluster": at.cluster, "inliers": r.inliers.len(), "iterations": r.iterations, "plausibility": at.report})
            }
            Err(e) => json!({"cluster": at.cluster, "error": e.to_string()}),
        })
        .collect();
    let chosen = selection.as_ref().and_then(|s| attempts.iter().find(|at| at.cluster == s.cluster));
    let plaus = chosen.and_then(|c| c.report.clone());
    let report = json!({
        "cluster": selection.as_ref().map(|s| s.cluster),
        "inliers": selection.as_ref().map(|s| s.inliers.len()),
        "height_m": plaus.as_ref().map(|p| p.height_m),
        "tilt_deg": plaus.as_ref().map(|p| p.tilt_deg),
        "below_ground": plaus.as_ref().map(|p| p.below_ground),
        "verdict": plaus.as_ref().map(|p| p.verdict),
        "reason": plaus.as_ref().map(|p| p.reason.clone()),
        "attempts": attempts_json,
    });
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    let Some(sel) = selection else {
        return Err(Failure::Runtime(anyhow!("no cluster produced a plausible pose")));
    };
    let camera = Camera::new(intrinsics, sel.pose).runtime("estimated pose")?;
    write_json(&a.out, &CameraFile::from_camera(&camera))
}

fn detfeat_cmd(a: &crate::DetfeatArgs) -> Result<(), Failure> {
    let dets = load_detections(&a.detections)?;
    let camera = load_camera(&a.camera)?;
    let (mesh, bvh) = load_mesh(&a.mesh)?;
    let gt = a.gt.as_deref().map(load_boxes).transpose()?;
    let maps = render_context(&camera, &bvh, &mesh);
    let mut rows = Vec::with_capacity(dets.len());
    let mut labels = Vec::with_capacity(dets.len());
    for d in &dets {
        rows.push(build_feature(d, &camera, &bvh, &mesh, &maps).runtime("building features")?);
        labels.push(match &gt {
            Some(g) => {
                let full = hypothesize_fullbody(d);
                if g.iter().any(|b| b.iou(&full) >= 0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            None => 0.0,
        });
    }
    write_text(&a.out, &write_features_csv(&feature_names(), &rows, &labels))
}

fn read_table(path: &Path) -> Result<geolift_core::formats::FeatureTable, Failure> {
    let t = read_features_csv(&read_text(path)?).invalid(&path.display().to_string())?;
    if t.names != feature_names() {
        return Err(invalid(format!("{}: columns do not match the detection feature layout", path.display())));
    }
    Ok(t)
}

fn train_rescore_cmd(a: &crate::TrainRescoreArgs) -> Result<(), Failure> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for path in &a.features {
        let t = read_table(path)?;
        xs.extend(t.rows);
        ys.extend(t.labels);
    }
    let params = SvmParams { c: a.c, pos_weight: a.pos_weight, max_epochs: a.max_epochs, ..Default::default() };
    let rep = train_rescorer(&xs, &ys, &params).invalid("training data")?;
    log::info!("svm: {} epochs, duality gap {:.3e}", rep.epochs, rep.gap);
    write_json(&a.out, &rep.model)
}

fn rescore_cmd(a: &crate::RescoreArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&a.nms) {
        return Err(invalid(format!("--nms {} not in [0, 1]", a.nms)));
    }
    let mut dets = load_detections(&a.detections)?;
    let table = read_table(&a.features)?;
    let model: LinearModel = read_json(&a.model)?;
    model.validate().invalid(&a.model.display().to_string())?;
    if table.rows.len() != dets.len() {
        return Err(invalid(format!("{} feature rows for {} detections", table.rows.len(), dets.len())));
    }
    for (d, x) in dets.iter_mut().zip(&table.rows) {
        d.score = rescore(&model, x).invalid("feature row")?;
    }
    if !a.no_nms {
        dets = nms_indices(&dets, a.nms).into_iter().map(|i| dets[i].clone()).collect();
    }
    write_json(&a.out, &dets)
}

fn segfeat_cmd(a: &crate::SegfeatArgs) -> Result<(), Failure> {
    let camera = load_camera(&a.camera)?;
    let (mesh, bvh) = load_mesh(&a.mesh)?;
    let dets = a.detections.as_deref().map(load_detections).transpose()?.unwrap_or_default();
    let config = PixelFeatureConfig {
        disc: DiscFeatureParams { angular_errors_deg: a.angles.clone() },
        gis: !a.no_gis,
        dpm_classes: a.classes.clone(),
        ..Default::default()
    };
    config.disc.radii(camera.f()).invalid("--angles")?;
    let maps = render_context(&camera, &bvh, &mesh);
    let stack = pixel_feature_stack(&maps, camera.f(), &dets, &config).runtime("feature stack")?;
    write_bytes(&a.out, |w| stack.write(w))
}

fn train_seg_cmd(a: &crate::TrainSegArgs, seed: u64) -> Result<(), Failure> {
    if a.stacks.len() != a.labels.len() {
        return Err(invalid(format!("{} stacks but {} label rasters", a.stacks.len(), a.labels.len())));
    }
    let mut names: Option<Vec<String>> = None;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, (sp, lp)) in a.stacks.iter().zip(&a.labels).enumerate() {
        let stack = read_stack(sp)?;
        let labels = read_pgm(lp)?;
        if (labels.width, labels.height) != (stack.width, stack.height) {
            return Err(invalid(format!("{} and {} differ in size", sp.display(), lp.display())));
        }
        match &names {
            Some(n) if *n != stack.names => {
                return Err(invalid(format!("{}: channels differ from the first stack", sp.display())))
            }
            Some(_) => {}
            None => names = Some(stack.names.clone()),
        }
        for p in subsample_pixels(labels.data.len(), a.stride, seed.wrapping_add(i as u64)) {
            xs.extend_from_slice(stack.pixel(p));
            ys.push(labels.data[p]);
        }
    }
    let names = names.expect("at least one stack");
    let params = ClassifierParams { num_classes: a.classes, lambda: a.lambda, max_iters: a.max_iters, ..Default::default() };
    let summary = train_pixel_classifier(&xs, &ys, &names, &params).invalid("training data")?;
    log::info!("classifier: {} iterations, gradient norm {:.3e}", summary.iterations, summary.grad_norm);
    write_json(&a.out, &summary.model)
}

fn predict_seg_cmd(a: &crate::PredictSegArgs) -> Result<(), Failure> {
    let stack = read_stack(&a.stack)?;
    let model: SoftmaxModel = read_json(&a.model)?;
    model.validate().invalid(&a.model.display().to_string())?;
    if model.feature_names != stack.names {
        return Err(invalid("model and stack channels differ".into()));
    }
    let (labels, _) = predict_labels(&model, &stack).invalid("feature stack")?;
    write_bytes(&a.out, |w| write_pgm(w, &labels))
}

fn eval_depth_cmd(a: &crate::EvalDepthArgs) -> Result<(), Failure> {
    let m = depth_metrics(&read_pfm(&a.est)?, &read_pfm(&a.gt)?).invalid("depth rasters")?;
    write_json(&a.out, &m)
}

fn eval_det_cmd(a: &crate::EvalDetArgs) -> Result<(), Failure> {
    if a.detections.len() != a.gt.len() {
        return Err(invalid(format!("{} detection files but {} ground-truth files", a.detections.len(), a.gt.len())));
    }
    let mut dets = Vec::new();
    let mut gt = Vec::new();
    for (i, (dp, gp)) in a.detections.iter().zip(&a.gt).enumerate() {
        for d in load_detections(dp)? {
            let bbox = if a.fullbody { hypothesize_fullbody(&d) } else { d.bbox };
            dets.push(ImageDetection { image: i, bbox, score: d.score });
        }
        gt.push(load_boxes(gp)?);
    }
    let pr = average_precision(&dets, &gt, a.iou, a.eleven_point).invalid("evaluation")?;
    if let Some(path) = &a.pr_csv {
        let mut csv = String::from("precision,recall\n");
        for (p, r) in &pr.points {
            csv.push_str(&format!("{p},{r}\n"));
        }
        write_text(path, &csv)?;
    }
    write_json(
        &a.out,
        &json!({"ap": pr.ap, "true_positives": pr.true_positives, "num_gt": pr.num_gt, "num_detections": dets.len()}),
    )
}

fn eval_seg_cmd(a: &crate::EvalSegArgs) -> Result<(), Failure> {
    let rep = segmentation_iou(&read_pgm(&a.pred)?, &read_pgm(&a.gt)?, a.classes).invalid("label rasters")?;
    write_json(&a.out, &rep)
}

fn synth_cmd(a: &crate::SynthArgs, seed: u64) -> Result<(), Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = if a.dense { synth::SceneSpec::dense(rng.random()) } else { synth::SceneSpec::with_seed(rng.random()) };
    let scene = synth::make_scene(&spec).runtime("scene")?;
    let bvh = Bvh::build(&scene.mesh).runtime("scene")?;
    let intrinsics = synth::default_intrinsics();
    let (camera, peds) =
        synth::sample_pedestrian_view(&scene.mesh, &bvh, &intrinsics, a.pedestrians.max(1), rng.random()).runtime("camera")?;
    let query = synth::cluster_query_for(camera, &scene.mesh, &bvh, a.distractors, rng.random()).runtime("correspondences")?;

    // The SfM frame differs from the map frame by a similarity.
    let truth = Similarity2D {
        scale: rng.random_range(0.5..2.0),
        theta: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        translation: [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)],
    };
    let to_sfm = |p: &Vec3| {
        let (s, c) = (-truth.theta).sin_cos();
        let (x, y) = ((p.x - truth.translation[0]) / truth.scale, (p.y - truth.translation[1]) / truth.scale);
        Vec3::new(c * x - s * y, s * x + c * y, p.z / truth.scale)
    };
    let cloud: Vec<Vec3> = synth::sample_surface_points(&scene.mesh, 2000, rng.random()).iter().map(to_sfm).collect();
    let corners: Vec<Vec2> = scene.map.polygons.iter().step_by(3).map(|p| p.ring[0]).take(12).collect();
    let src: Vec<[f64; 2]> = corners
        .iter()
        .map(|q| {
            let p = to_sfm(&Vec3::new(q.x, q.y, 0.0));
            [p.x + rng.random_range(-0.02..0.02), p.y + rng.random_range(-0.02..0.02)]
        })
        .collect();
    let pairs = PairsFile { src, dst: corners.iter().map(|q| [q.x, q.y]).collect() };

    let dir = &a.out_dir;
    write_text(&dir.join("map.json"), &map_to_json(&scene.map))?;
    write_text(&dir.join("lift.json"), &liftspec_to_json(&scene.lift))?;
    write_text(&dir.join("mesh.json"), &scene.mesh.to_json())?;
    write_json(&dir.join("intrinsics.json"), &intrinsics)?;
    write_json(&dir.join("camera.json"), &CameraFile::from_camera(&camera))?;
    write_json(&dir.join("correspondences.json"), &CorrespondenceFile { clusters: query.clusters.clone() })?;
    write_json(&dir.join("detections.json"), &peds.detections)?;
    let gt_boxes: Vec<[f64; 4]> = peds.gt.iter().map(BBox::as_array).collect();
    write_json(&dir.join("gt_boxes.json"), &gt_boxes)?;
    let labels: Vec<i8> = peds.kinds.iter().map(|k| if *k == synth::CandidateKind::True { 1 } else { -1 }).collect();
    write_json(
        &dir.join("truth.json"),
        &json!({"correct_cluster": query.correct_cluster, "similarity": truth, "detection_labels": labels}),
    )?;
    write_json(&dir.join("cloud.json"), &CloudFile::from_points(&cloud))?;
    write_json(&dir.join("pairs.json"), &pairs)?;
    let depth = synth::brute_force_depth(&camera, &scene.mesh);
    write_bytes(&dir.join("gt.depth.pfm"), |w| write_pfm(w, &depth))?;
    let seg = synth::seg_ground_truth(&camera, &bvh, &scene.mesh, &peds);
    write_bytes(&dir.join("gt.seg.pgm"), |w| write_pgm(w, &seg))
}
