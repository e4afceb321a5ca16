//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use geolift_core::align::{icp_refine, procrustes2d, IcpParams, RigidTransform3D, Similarity2D};
use geolift_core::detect::{
    band_histograms, build_feature, hypothesize_fullbody, nms_indices, rescore, train_rescorer, BBox, Detection, SvmParams,
    LABEL_BINS, NORMAL_BINS,
};
use geolift_core::eval::{average_precision, depth_metrics, segmentation_iou, ImageDetection};
use geolift_core::geometry::{axis_angle, look_rotation, Camera, Intrinsics, Pose, Ray, Vec2, Vec3};
use geolift_core::gis::SemanticLabel;
use geolift_core::raster::Raster;
use geolift_core::render::{render_context, Bvh, ContextMaps, NormalBin};
use geolift_core::resection::{
    plausibility_filter, ransac_resect, resect_against_clusters, solve_p3p, Correspondence, RansacParams,
};
use geolift_core::seg::{
    disc_label_features, disc_normal_features, dpm_score_map, loss_and_gradient, pixel_feature_stack, predict_labels,
    subsample_pixels, train_pixel_classifier, ClassifierParams, DiscFeatureParams, PixelFeatureConfig, DISC_LABELS, DISC_NORMALS,
    DPM_FLOOR,
};
use geolift_core::synth::{
    brute_force_depth, brute_force_raycast, default_intrinsics, make_scene, sample_pedestrian_view, sample_plausible_camera,
    sample_surface_points, seg_ground_truth, synth_cluster_query, synth_correspondences, CandidateKind, NoiseParams, Scene,
    SceneSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

fn scene(spec: &SceneSpec) -> (Scene, Bvh) {
    let s = make_scene(spec).expect("scene");
    let bvh = Bvh::build(&s.mesh).expect("bvh");
    (s, bvh)
}

/// Per-scene numbers shared by the depth and resection criteria.
struct ResectRun {
    median_rel: f64,
    delta1: f64,
    rot_deg: f64,
    center_err: f64,
    diameter: f64,
}

fn resect_benchmark() -> Result<(Vec<ResectRun>, Duration), String> {
    let start = Instant::now();
    let k = default_intrinsics();
    let mut out = Vec::new();
    for s in 0..10u64 {
        let (sc, bvh) = scene(&SceneSpec::with_seed(100 + s));
        let truth = sample_plausible_camera(&sc.mesh, &bvh, &k, s).map_err(|e| e.to_string())?;
        let noise = NoiseParams { pixel_sigma: 0.5, outlier_fraction: 0.3, count: 100, seed: s };
        let data = synth_correspondences(&truth, &bvh, &sc.mesh, &noise).map_err(|e| e.to_string())?;
        let est = ransac_resect(&data.matches, &k, &RansacParams { seed: s, ..Default::default() })
            .map_err(|e| format!("scene {s}: {e}"))?;
        let cam = Camera::new(k, est.pose).map_err(|e| e.to_string())?;
        let rendered = render_context(&cam, &bvh, &sc.mesh);
        let gt = brute_force_depth(&truth, &sc.mesh);
        let m = depth_metrics(&rendered.depth, &gt).map_err(|e| e.to_string())?;
        out.push(ResectRun {
            median_rel: m.median_rel_err,
            delta1: m.frac_delta_1,
            rot_deg: est.pose.rotation_angle_to(&truth.pose).to_degrees(),
            center_err: (est.pose.center() - truth.center()).norm(),
            diameter: sc.diameter(),
        });
    }
    Ok((out, start.elapsed()))
}

fn c1_depth(bench: &Result<(Vec<ResectRun>, Duration), String>) -> Outcome {
    let (runs, took) = bench.as_ref().map_err(Clone::clone)?;
    for (i, r) in runs.iter().enumerate() {
        ensure(r.median_rel < 0.05 && r.delta1 > 0.9, || {
            format!("scene {i}: median rel err {:.4}, delta1 {:.4}", r.median_rel, r.delta1)
        })?;
    }
    ensure(took.as_secs_f64() < 60.0, || format!("took {took:.1?}"))?;
    let worst_med = runs.iter().map(|r| r.median_rel).fold(0.0, f64::max);
    let worst_d1 = runs.iter().map(|r| r.delta1).fold(1.0, f64::min);
    Ok(format!("10 scenes, worst median rel err {worst_med:.2e}, worst delta1 {worst_d1:.4}, {took:.1?}"))
}

fn c2_renderer() -> Outcome {
    let start = Instant::now();
    let (sc, bvh) = scene(&SceneSpec::dense(5));
    ensure(sc.mesh.len() >= 10_000, || format!("only {} triangles", sc.mesh.len()))?;
    let (lo, hi) = sc.mesh.bounds().expect("non-empty mesh");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut hits = 0;
    for i in 0..10_000 {
        let o = Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(0.2..25.0));
        let ray = Ray::new(o, unit(&mut rng));
        let fast = bvh.raycast(&sc.mesh, &ray).map(|h| (h.t, h.tri_index));
        let slow = brute_force_raycast(&sc.mesh, &ray);
        match (fast, slow) {
            (Some((tf, a)), Some((ts, b))) if a == b && (tf - ts).abs() <= 1e-9 => hits += 1,
            (None, None) => {}
            other => return Err(format!("ray {i}: {other:?}")),
        }
    }
    let took = start.elapsed();
    ensure(took.as_secs_f64() < 10.0, || format!("took {took:.1?}"))?;
    Ok(format!("10000 rays on {} triangles, {hits} hits, all equal, {took:.1?}", sc.mesh.len()))
}

fn wrap(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

fn c3_procrustes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let truth = Similarity2D {
            scale: rng.random_range(0.2..5.0),
            theta: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            translation: [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)],
        };
        let n = rng.random_range(3..30);
        let src: Vec<Vec2> = (0..n).map(|_| Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))).collect();
        let dst: Vec<Vec2> = src.iter().map(|p| truth.apply(p)).collect();
        let t = procrustes2d(&src, &dst).map_err(|e| e.to_string())?.transform;
        let err = (t.scale - truth.scale)
            .abs()
            .max(wrap(t.theta - truth.theta).abs())
            .max((t.translation[0] - truth.translation[0]).abs())
            .max((t.translation[1] - truth.translation[1]).abs());
        worst = worst.max(err);
    }
    ensure(worst < 1e-9, || format!("max parameter error {worst:.3e}"))?;
    Ok(format!("1000 recoveries, max parameter error {worst:.2e}"))
}

fn c4_icp() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut most_iters = 0;
    for s in 0..20u64 {
        let (sc, _) = scene(&SceneSpec::with_seed(400 + s));
        let cloud = sample_surface_points(&sc.mesh, 1500, s);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let pert = RigidTransform3D::from_axis_angle(&unit(&mut rng), 5f64.to_radians(), unit(&mut rng) * 0.5);
        let moved: Vec<Vec3> = cloud.iter().map(|p| pert.apply(p)).collect();
        let params = IcpParams { max_iters: 50, ..Default::default() };
        let r = icp_refine(&moved, &sc.mesh, &RigidTransform3D::identity(), &params).map_err(|e| e.to_string())?;
        let iters = r.rms_history.len() - 1;
        ensure(r.rms_history.windows(2).all(|w| w[1] <= w[0]), || format!("scene {s}: RMS history not monotone"))?;
        ensure(iters <= 50, || format!("scene {s}: {iters} iterations"))?;
        ensure(r.final_rms() < 1e-3, || format!("scene {s}: final RMS {:.3e}", r.final_rms()))?;
        worst = worst.max(r.final_rms());
        most_iters = most_iters.max(iters);
    }
    Ok(format!("20 scenes, worst final RMS {worst:.2e} m, at most {most_iters} iterations"))
}

fn random_camera(rng: &mut ChaCha8Rng, k: Intrinsics) -> Camera {
    let r = look_rotation(rng.random_range(-3.1..3.1), rng.random_range(-0.8..0.8), rng.random_range(-0.5..0.5));
    let c = Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.5..10.0));
    Camera::new(k, Pose::from_center(r, c).expect("rotation")).expect("intrinsics")
}

fn c5_resection(bench: &Result<(Vec<ResectRun>, Duration), String>) -> Outcome {
    let k = default_intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let cam = random_camera(&mut rng, k);
        let corrs: [Correspondence; 3] = std::array::from_fn(|_| {
            let (u, v) = (rng.random_range(0.0..320.0), rng.random_range(0.0..240.0));
            Correspondence { pixel: Vec2::new(u, v), world: cam.cast_ray(u, v).point_at(rng.random_range(2.0..40.0)) }
        });
        let cands = solve_p3p(&corrs, &k).map_err(|e| format!("configuration {i}: {e}"))?;
        let best = cands
            .iter()
            .map(|p| (p.rotation() - cam.pose.rotation()).abs().max().max((p.translation() - cam.pose.translation()).abs().max()))
            .fold(f64::INFINITY, f64::min);
        ensure(best < 1e-6, || format!("configuration {i}: closest candidate off by {best:.3e}"))?;
        worst = worst.max(best);
    }
    let (runs, _) = bench.as_ref().map_err(Clone::clone)?;
    for (i, r) in runs.iter().enumerate() {
        ensure(r.rot_deg < 0.5, || format!("scene {i}: rotation error {:.3} deg", r.rot_deg))?;
        ensure(r.center_err < 0.01 * r.diameter, || format!("scene {i}: position error {:.3} m", r.center_err))?;
    }
    let rot = runs.iter().map(|r| r.rot_deg).fold(0.0, f64::max);
    let pos = runs.iter().map(|r| r.center_err / r.diameter).fold(0.0, f64::max);
    Ok(format!("P3P 1000/1000 within {worst:.1e}; RANSAC worst rotation {rot:.3} deg, position {:.3}% of diameter", pos * 100.0))
}

fn c6_plausibility() -> Outcome {
    let (flat, fbvh) = scene(&SceneSpec { buildings: 0, ..SceneSpec::with_seed(0) });
    let at = |h: f64, tilt: f64| {
        Pose::from_center(look_rotation(0.3, tilt.to_radians(), 0.0), Vec3::new(1.0, 1.0, h)).expect("rotation")
    };
    for (h, tilt, accept) in [(1.6, 0.0, true), (5.0, 0.0, false), (1.6, 20.0, true), (1.6, 40.0, false)] {
        let got = plausibility_filter(&at(h, tilt), &fbvh, &flat.mesh).accepted();
        ensure(got == accept, || format!("height {h} m, tilt {tilt} deg: accepted = {got}"))?;
    }

    let k = default_intrinsics();
    let scenes: Vec<(Scene, Bvh)> = (0..10u64).map(|s| scene(&SceneSpec::with_seed(600 + s))).collect();
    for seed in 0..500u64 {
        let (sc, bvh) = &scenes[(seed % 10) as usize];
        let cam = sample_plausible_camera(&sc.mesh, bvh, &k, seed).map_err(|e| e.to_string())?;
        let rep = plausibility_filter(&cam.pose, bvh, &sc.mesh);
        ensure(rep.accepted(), || format!("sampled camera {seed} rejected: {}", rep.reason))?;
    }

    let (mut with, mut without) = (0, 0);
    for q in 0..50u64 {
        let (sc, bvh) = &scenes[(q % 10) as usize];
        let query = synth_cluster_query(&sc.mesh, bvh, &k, 9, q).map_err(|e| e.to_string())?;
        let params = RansacParams { seed: q, ..Default::default() };
        let (a, _) = resect_against_clusters(&query.clusters, &k, &params, Some((bvh, &sc.mesh)));
        let (b, _) = resect_against_clusters(&query.clusters, &k, &params, None);
        with += usize::from(a.is_some_and(|s| s.cluster == query.correct_cluster));
        without += usize::from(b.is_some_and(|s| s.cluster == query.correct_cluster));
    }
    ensure(with >= without, || format!("correct selections with filter {with}/50 < without {without}/50"))?;
    Ok(format!(
        "thresholds exact; 500/500 sampled cameras accepted; correct cluster {with}/50 with filter vs {without}/50 without"
    ))
}

fn c7_rescoring() -> Outcome {
    let start = Instant::now();
    let k = default_intrinsics();
    struct View {
        gt: Vec<BBox>,
        dets: Vec<Detection>,
        labels: Vec<f64>,
        feats: Vec<Vec<f64>>,
    }
    let mut views = Vec::new();
    for s in 0..32u64 {
        let (sc, bvh) = scene(&SceneSpec::with_seed(1000 + s));
        let (cam, set) = sample_pedestrian_view(&sc.mesh, &bvh, &k, 10, s).map_err(|e| e.to_string())?;
        let maps = render_context(&cam, &bvh, &sc.mesh);
        let feats = set
            .detections
            .iter()
            .map(|d| build_feature(d, &cam, &bvh, &sc.mesh, &maps))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let labels = set.kinds.iter().map(|kd| if *kd == CandidateKind::True { 1.0 } else { -1.0 }).collect();
        views.push(View { gt: set.gt, dets: set.detections, labels, feats });
    }
    let tp: usize = views.iter().map(|v| v.labels.iter().filter(|l| **l > 0.0).count()).sum();
    let fp: usize = views.iter().map(|v| v.labels.iter().filter(|l| **l < 0.0).count()).sum();
    ensure(tp >= 200 && fp >= 200, || format!("{tp} true and {fp} false candidates"))?;

    // The first half of the cameras trains, the second half tests.
    let (train, test) = views.split_at(views.len() / 2);
    let xs: Vec<Vec<f64>> = train.iter().flat_map(|v| v.feats.iter().cloned()).collect();
    let ys: Vec<f64> = train.iter().flat_map(|v| v.labels.iter().copied()).collect();
    let params = SvmParams { c: 4.0, pos_weight: 4.0, ..Default::default() };
    let model = train_rescorer(&xs, &ys, &params).map_err(|e| e.to_string())?.model;
    let (mut raw, mut ours, mut gt) = (Vec::new(), Vec::new(), Vec::new());
    for (img, v) in test.iter().enumerate() {
        gt.push(v.gt.clone());
        for (d, x) in v.dets.iter().zip(&v.feats) {
            let bbox = hypothesize_fullbody(d);
            raw.push(ImageDetection { image: img, bbox, score: d.score });
            ours.push(ImageDetection { image: img, bbox, score: rescore(&model, x).map_err(|e| e.to_string())? });
        }
    }
    let a0 = average_precision(&raw, &gt, 0.5, false).map_err(|e| e.to_string())?.ap;
    let a1 = average_precision(&ours, &gt, 0.5, false).map_err(|e| e.to_string())?.ap;
    let took = start.elapsed();
    ensure(a1 - a0 >= 0.03, || format!("AP {a0:.4} -> {a1:.4}"))?;
    ensure(took.as_secs_f64() < 120.0, || format!("took {took:.1?}"))?;
    Ok(format!("{tp} true / {fp} false over {} cameras; AP {a0:.4} -> {a1:.4} (+{:.4}), {took:.1?}", views.len(), a1 - a0))
}

fn disc_reference<T: PartialEq + Copy>(img: &Raster<T>, cats: &[T], radii: &[usize]) -> Vec<Vec<f64>> {
    let mut planes = Vec::new();
    for &r in radii {
        let r = r as i64;
        let mut per_cat = vec![Vec::with_capacity(img.data.len()); cats.len()];
        for y in 0..img.height as i64 {
            for x in 0..img.width as i64 {
                let mut n = 0u32;
                let mut k = vec![0u32; cats.len()];
                for yy in (y - r).max(0)..=(y + r).min(img.height as i64 - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(img.width as i64 - 1) {
                        if (xx - x).pow(2) + (yy - y).pow(2) > r * r {
                            continue;
                        }
                        n += 1;
                        let v = img.get(xx as usize, yy as usize);
                        if let Some(c) = cats.iter().position(|c| c == v) {
                            k[c] += 1;
                        }
                    }
                }
                for (plane, kc) in per_cat.iter_mut().zip(&k) {
                    plane.push(f64::from(*kc) / f64::from(n));
                }
            }
        }
        planes.extend(per_cat);
    }
    planes
}

fn bands_reference(b: &BBox, maps: &ContextMaps) -> Vec<f64> {
    let (lo, hi) = (-40i64, 600i64);
    let inside = |a: i64, lo_e: f64, hi_e: f64| (a as f64 + 0.5) >= lo_e && (a as f64 + 0.5) < hi_e;
    let rows: Vec<i64> = (lo..hi).filter(|&r| inside(r, b.y1, b.y2)).collect();
    let cols: Vec<i64> = (lo..hi).filter(|&c| inside(c, b.x1, b.x2)).collect();
    let n = rows.len();
    let sizes = [n.div_ceil(3), (n + 1) / 3, n / 3];
    let mut out = Vec::new();
    let mut start = 0;
    for size in sizes {
        let mut lab = [0.0; LABEL_BINS];
        let mut nor = [0.0; NORMAL_BINS];
        for &r in &rows[start..start + size] {
            for &c in &cols {
                let (l, m) = if c >= 0 && r >= 0 && (c as usize) < maps.width() && (r as usize) < maps.height() {
                    (maps.labels.get(c as usize, r as usize).code(), maps.normals.get(c as usize, r as usize).code())
                } else {
                    (SemanticLabel::Unknown.code(), NormalBin::None.code())
                };
                lab[l as usize] += 1.0;
                nor[m as usize] += 1.0;
            }
        }
        let total = (size * cols.len()) as f64;
        if total > 0.0 {
            lab.iter_mut().chain(nor.iter_mut()).for_each(|v| *v /= total);
        }
        out.extend(lab);
        out.extend(nor);
        start += size;
    }
    out
}

fn nms_reference(dets: &[Detection], t: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut out = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive {
            if dets[i].score > dets[best].score || (dets[i].score == dets[best].score && i < best) {
                best = i;
            }
        }
        out.push(best);
        alive.retain(|&i| i != best && dets[i].bbox.iou(&dets[best].bbox) <= t);
    }
    out
}

fn c8_feature_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (w, h) = (128usize, 128usize);
    for case in 0..20 {
        let mut labels = Raster::from_fn(w, h, |_, _| SemanticLabel::from_code(rng.random_range(0..5)).expect("code"));
        for _ in 0..6 {
            let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
            let (x1, y1) = ((x0 + rng.random_range(5..60)).min(w), (y0 + rng.random_range(5..60)).min(h));
            let l = SemanticLabel::from_code(rng.random_range(0..5)).expect("code");
            for y in y0..y1 {
                for x in x0..x1 {
                    labels.set(x, y, l);
                }
            }
        }
        let normals = Raster::from_fn(w, h, |c, r| {
            if rng.random_range(0..4) == 0 {
                NormalBin::from_code(rng.random_range(0..4)).expect("code")
            } else {
                NormalBin::from_code(labels.get(c, r).code() % 4).expect("code")
            }
        });
        let f = rng.random_range(60.0..250.0);
        let radii = DiscFeatureParams::default().radii(f).map_err(|e| e.to_string())?;
        let fl = disc_label_features(&labels, &radii).map_err(|e| e.to_string())?;
        for (c, plane) in disc_reference(&labels, &DISC_LABELS, &radii).iter().enumerate() {
            ensure(&fl.plane(c) == plane, || format!("case {case}: disc channel {}", fl.names[c]))?;
        }
        let fnm = disc_normal_features(&normals, &radii).map_err(|e| e.to_string())?;
        for (c, plane) in disc_reference(&normals, &DISC_NORMALS, &radii).iter().enumerate() {
            ensure(&fnm.plane(c) == plane, || format!("case {case}: disc channel {}", fnm.names[c]))?;
        }

        let dets: Vec<Detection> = (0..30)
            .map(|_| {
                let (x, y) = (rng.random_range(-10.0..128.0), rng.random_range(-10.0..128.0));
                let (bw, bh) = (rng.random_range(4.0..40.0), rng.random_range(8.0..80.0));
                let score = f64::from(rng.random_range(-12..8)) / 4.0;
                Detection::new(BBox::new(x, y, x + bw, y + bh), score, rng.random_range(1..=3))
            })
            .collect();
        let maps = ContextMaps { depth: Raster::filled(w, h, 1.0), zdepth: Raster::filled(w, h, 1.0), labels, normals };
        for (i, d) in dets.iter().enumerate() {
            let full = hypothesize_fullbody(d);
            let got = band_histograms(&full, &maps).map_err(|e| e.to_string())?.to_vec();
            ensure(got == bands_reference(&full, &maps), || format!("case {case}: band histograms of box {i}"))?;
        }

        let map = dpm_score_map(&dets, "person", w, h, DPM_FLOOR);
        for r in 0..h {
            for c in 0..w {
                let (u, v) = (c as f64 + 0.5, r as f64 + 0.5);
                let want = dets
                    .iter()
                    .filter(|d| u >= d.bbox.x1 && u < d.bbox.x2 && v >= d.bbox.y1 && v < d.bbox.y2)
                    .map(|d| d.score)
                    .fold(DPM_FLOOR, f64::max);
                ensure(*map.get(c, r) == want, || format!("case {case}: DPM map at ({c}, {r})"))?;
            }
        }

        for t in [0.0, 0.3, 0.5, 0.8] {
            ensure(nms_indices(&dets, t) == nms_reference(&dets, t), || format!("case {case}: NMS at {t}"))?;
        }
    }
    Ok("20 cases of 128x128: disc, band, DPM and NMS equal their references".into())
}

fn c9_metric_truths() -> Outcome {
    let gt = Raster::from_fn(16, 12, |c, r| 1.0 + 0.25 * (c + r) as f64);
    let m = depth_metrics(&gt.map(|d| 1.3 * d), &gt).map_err(|e| e.to_string())?;
    let fr = (m.frac_delta_1, m.frac_delta_2, m.frac_delta_3);
    ensure(fr == (0.0, 1.0, 1.0), || format!("delta fractions {fr:?}"))?;

    let gt_boxes = vec![vec![BBox::new(0.0, 0.0, 10.0, 10.0)]];
    let dets = [
        ImageDetection { image: 0, bbox: BBox::new(50.0, 50.0, 60.0, 60.0), score: 0.9 },
        ImageDetection { image: 0, bbox: BBox::new(0.0, 0.0, 10.0, 10.0), score: 0.5 },
    ];
    let ap = average_precision(&dets, &gt_boxes, 0.5, false).map_err(|e| e.to_string())?.ap;
    ensure(ap == 0.5, || format!("AP {ap}"))?;

    let r = Raster::from_fn(20, 10, |c, row| ((c + 3 * row) % 6) as u8);
    let rep = segmentation_iou(&r, &r, 9).map_err(|e| e.to_string())?;
    for (c, v) in rep.per_class.iter().enumerate() {
        let present = r.data.contains(&(c as u8));
        ensure(if present { *v == Some(1.0) } else { v.is_none() }, || format!("class {c}: {v:?}"))?;
    }
    ensure(rep.overall == 1.0, || format!("overall {}", rep.overall))?;
    Ok("delta fractions (0, 1, 1); AP 0.5; identical rasters IoU 1.0 per present class".into())
}

fn c10_segmentation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let (n, dim, k) = (300, 5, 4);
    let xs: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ys: Vec<u8> = (0..n).map(|_| rng.random_range(0..k as u8)).collect();
    let theta: Vec<f64> = (0..k * (dim + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grad) = loss_and_gradient(&theta, &xs, &ys, dim, k, 1e-2);
    let h = 1e-5;
    let mut worst_fd: f64 = 0.0;
    for i in 0..theta.len() {
        let (mut p, mut m) = (theta.clone(), theta.clone());
        p[i] += h;
        m[i] -= h;
        let fd = (loss_and_gradient(&p, &xs, &ys, dim, k, 1e-2).0 - loss_and_gradient(&m, &xs, &ys, dim, k, 1e-2).0) / (2.0 * h);
        worst_fd = worst_fd.max((fd - grad[i]).abs());
    }
    ensure(worst_fd < 1e-5, || format!("gradient off finite differences by {worst_fd:.3e}"))?;

    // Context comes from a slightly wrong pose, labels from the true one.
    let intr = default_intrinsics();
    let mut items = Vec::new();
    for s in 0..12u64 {
        let (sc, bvh) = scene(&SceneSpec::with_seed(2000 + s));
        let (cam, peds) = sample_pedestrian_view(&sc.mesh, &bvh, &intr, 6, s).map_err(|e| e.to_string())?;
        let gt = seg_ground_truth(&cam, &bvh, &sc.mesh, &peds);
        let r = axis_angle(&unit(&mut rng), 1.5f64.to_radians()) * cam.pose.rotation();
        let c = cam.center() + Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0);
        let est = Camera::new(intr, Pose::from_center(r, c).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let maps = render_context(&est, &bvh, &sc.mesh);
        items.push((maps, peds.detections, gt));
    }
    let mut overall = [0.0; 2];
    for (slot, gis) in [false, true].into_iter().enumerate() {
        let config = PixelFeatureConfig { gis, ..Default::default() };
        let stacks = items
            .iter()
            .map(|(maps, dets, _)| pixel_feature_stack(maps, intr.f, dets, &config))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (i, (st, (_, _, gt))) in stacks.iter().zip(&items).enumerate().take(6) {
            for p in subsample_pixels(gt.data.len(), 7, i as u64) {
                xs.extend_from_slice(st.pixel(p));
                ys.push(gt.data[p]);
            }
        }
        let model =
            train_pixel_classifier(&xs, &ys, &stacks[0].names, &ClassifierParams::default()).map_err(|e| e.to_string())?.model;
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for (st, (_, _, gt)) in stacks.iter().zip(&items).skip(6) {
            pred.extend(predict_labels(&model, st).map_err(|e| e.to_string())?.0.data);
            truth.extend(gt.data.iter().copied());
        }
        let len = pred.len();
        let to_raster = |data| Raster::from_vec(len, 1, data).expect("sizes match");
        overall[slot] = segmentation_iou(&to_raster(pred), &to_raster(truth), 9).map_err(|e| e.to_string())?.overall;
    }
    let [base, with_gis] = overall;
    ensure(with_gis >= base + 0.02, || format!("held-out IoU {base:.4} -> {with_gis:.4}"))?;
    Ok(format!("held-out IoU {base:.4} -> {with_gis:.4} (+{:.4}); gradient within {worst_fd:.1e}", with_gis - base))
}

fn run_cli(dir: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_geolift"))
        .current_dir(dir)
        .env("GEOLIFT_THREADS", threads)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("geolift {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

fn pipeline(dir: &Path, threads: &str) -> Result<(), String> {
    let steps: &[&[&str]] = &[
        &["--seed", "11", "synth", "--out-dir", "s"],
        &["lift", "--map", "s/map.json", "--spec", "s/lift.json", "-o", "lift.mesh.json", "--obj", "lift.obj"],
        &[
            "align",
            "--pairs",
            "s/pairs.json",
            "--cloud",
            "s/cloud.json",
            "--mesh",
            "s/mesh.json",
            "-o",
            "align.json",
            "--aligned-cloud",
            "aligned.json",
        ],
        &[
            "--seed",
            "4",
            "resect",
            "--correspondences",
            "s/correspondences.json",
            "--intrinsics",
            "s/intrinsics.json",
            "--mesh",
            "s/mesh.json",
            "-o",
            "est.json",
            "--report",
            "resect.json",
        ],
        &["render", "--camera", "est.json", "--mesh", "s/mesh.json", "--out-dir", "render"],
        &["eval-depth", "--est", "render/view.depth.pfm", "--gt", "s/gt.depth.pfm", "-o", "depth.json"],
        &[
            "detfeat",
            "--detections",
            "s/detections.json",
            "--camera",
            "est.json",
            "--mesh",
            "s/mesh.json",
            "--gt",
            "s/gt_boxes.json",
            "-o",
            "feat.csv",
        ],
        &["train-rescore", "--features", "feat.csv", "-o", "svm.json"],
        &[
            "rescore",
            "--detections",
            "s/detections.json",
            "--features",
            "feat.csv",
            "--model",
            "svm.json",
            "--nms",
            "0.5",
            "-o",
            "rescored.json",
        ],
        &[
            "eval-det",
            "--detections",
            "rescored.json",
            "--gt",
            "s/gt_boxes.json",
            "--fullbody",
            "-o",
            "ap.json",
            "--pr-csv",
            "pr.csv",
        ],
        &["segfeat", "--camera", "est.json", "--mesh", "s/mesh.json", "--detections", "s/detections.json", "-o", "seg.stack"],
        &["--seed", "2", "train-seg", "--stack", "seg.stack", "--labels", "s/gt.seg.pgm", "-o", "seg.json"],
        &["predict-seg", "--stack", "seg.stack", "--model", "seg.json", "-o", "pred.pgm"],
        &["eval-seg", "--pred", "pred.pgm", "--gt", "s/gt.seg.pgm", "-o", "iou.json"],
    ];
    for args in steps {
        run_cli(dir, threads, args)?;
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c11_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path(), "1")?;
    pipeline(b.path(), "4")?;
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    ensure(fa == fb, || format!("different file sets: {fa:?} vs {fb:?}"))?;
    for f in &fa {
        let same = std::fs::read(a.path().join(f)).ok() == std::fs::read(b.path().join(f)).ok();
        ensure(same, || format!("{} differs", f.display()))?;
    }
    Ok(format!("14 subcommands run twice (1 and 4 threads), {} artifacts byte-identical", fa.len()))
}

fn main() {
    let bench = catch_unwind(resect_benchmark).unwrap_or_else(|_| Err("benchmark panicked".into()));
    let criteria: Vec<(&str, Check)> = vec![
        ("1 depth fidelity", Box::new(|| c1_depth(&bench))),
        ("2 renderer oracle", Box::new(c2_renderer)),
        ("3 procrustes exactness", Box::new(c3_procrustes)),
        ("4 icp convergence", Box::new(c4_icp)),
        ("5 resection accuracy", Box::new(|| c5_resection(&bench))),
        ("6 plausibility filter", Box::new(c6_plausibility)),
        ("7 rescoring gain", Box::new(c7_rescoring)),
        ("8 feature oracles", Box::new(c8_feature_oracles)),
        ("9 metric unit truths", Box::new(c9_metric_truths)),
        ("10 segmentation gain", Box::new(c10_segmentation)),
        ("11 determinism", Box::new(c11_determinism)),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
