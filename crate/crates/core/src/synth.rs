//! Seeded synthetic scenes, cameras, correspondences and detections, plus a
//! brute-force depth renderer used as an independent reference.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::detect::{BBox, Detection};
use crate::geometry::{look_rotation, Camera, Intrinsics, Pose, Ray, Vec2, Vec3};
use crate::gis::{lift, GisError, GisMap, GisPolygon, LabeledMesh, LiftInstruction, LiftOp, LiftSpec, SemanticLabel};
use crate::par;
use crate::raster::Raster;
use crate::render::{discretize_unit_normal, render_context, Bvh, NormalBin};
use crate::resection::{tilt_deg, ClusterMatches, Correspondence};
use crate::HUMAN_HEIGHT;

/// Class code of pedestrians in segmentation ground truth, after the five
/// semantic label codes.
pub const PEDESTRIAN_CLASS: u8 = 5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scene: {0}")]
    Infeasible(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("camera sees no surface")]
    NoVisibleSurface,
    #[error(transparent)]
    Gis(#[from] GisError),
}

/// A square courtyard split into a grid of cells. Cells become buildings
/// (extruded, not walkable), pavement (walkable) or plants (not walkable);
/// with `two_level` one pavement cell is raised into a walkable platform.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub extent: f64,
    pub grid: usize,
    pub buildings: usize,
    pub building_height: (f64, f64),
    pub two_level: bool,
    pub platform_height: f64,
    /// Fraction of non-building cells that are pavement.
    pub walkable_fraction: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            extent: 60.0,
            grid: 6,
            buildings: 6,
            building_height: (6.0, 15.0),
            two_level: true,
            platform_height: 0.5,
            walkable_fraction: 0.75,
        }
    }
}

impl SceneSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// A 72×72 grid lifted to more than 10⁴ triangles.
    pub fn dense(seed: u64) -> Self {
        Self { seed, extent: 216.0, grid: 72, buildings: 400, ..Self::default() }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if !(self.extent > 0.0 && self.extent.is_finite()) || self.grid == 0 {
            return Err(SynthError::Infeasible("extent and grid must be positive".into()));
        }
        let (lo, hi) = self.building_height;
        if !(lo > 0.0 && hi >= lo && self.platform_height > 0.0) {
            return Err(SynthError::Infeasible("heights must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.walkable_fraction) {
            return Err(SynthError::Infeasible("walkable fraction not in [0, 1]".into()));
        }
        let needed = self.buildings + 1 + usize::from(self.two_level);
        if needed > self.grid * self.grid {
            return Err(SynthError::Infeasible(format!(
                "{} buildings do not fit in a {}x{} grid with walkable ground",
                self.buildings, self.grid, self.grid
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub map: GisMap,
    pub lift: LiftSpec,
    pub mesh: LabeledMesh,
}

impl Scene {
    /// Diagonal of the mesh bounding box, meters.
    pub fn diameter(&self) -> f64 {
        self.mesh.bounds().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }
}

pub fn make_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.grid;
    let cell = spec.extent / n as f64;
    let origin = -0.5 * spec.extent;
    let mut order: Vec<usize> = (0..n * n).collect();
    order.shuffle(&mut rng);

    let mut kinds = vec![SemanticLabel::Pavement; n * n];
    let mut ops = Vec::new();
    let id = |i: usize| format!("c{}_{}", i / n, i % n);
    for &i in &order[..spec.buildings] {
        kinds[i] = SemanticLabel::Building;
        let height = rng.random_range(spec.building_height.0..=spec.building_height.1);
        ops.push(LiftInstruction { polygon: id(i), op: LiftOp::Extrude { height } });
    }
    let mut rest = order[spec.buildings..].iter().copied();
    // The first free cell always stays walkable.
    let _ = rest.next();
    if spec.two_level {
        let i = rest.next().expect("validated");
        ops.push(LiftInstruction { polygon: id(i), op: LiftOp::Extrude { height: spec.platform_height } });
    }
    for i in rest {
        if rng.random::<f64>() >= spec.walkable_fraction {
            kinds[i] = SemanticLabel::Plants;
        }
    }
    let polygons = (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64, (i % n) as f64);
            let (x0, y0) = (origin + c * cell, origin + r * cell);
            let ring =
                vec![Vec2::new(x0, y0), Vec2::new(x0 + cell, y0), Vec2::new(x0 + cell, y0 + cell), Vec2::new(x0, y0 + cell)];
            GisPolygon::new(id(i), ring, kinds[i], kinds[i] == SemanticLabel::Pavement)
        })
        .collect::<Result<Vec<_>, _>>()?;
    ops.sort_by(|a, b| a.polygon.cmp(&b.polygon));
    let map = GisMap::new(polygons)?;
    let lift_spec = LiftSpec { ground_elevation: 0.0, ops };
    let mesh = lift(&map, &lift_spec)?;
    Ok(Scene { map, lift: lift_spec, mesh })
}

/// 320×240 pixels, f = 500 px, principal point at the image center.
pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::centered(500.0, 320, 240).expect("valid intrinsics")
}

/// Fraction of pixel-center rays that hit the mesh.
pub fn hit_fraction(camera: &Camera, bvh: &Bvh, mesh: &LabeledMesh) -> f64 {
    let (w, h) = (camera.width(), camera.height());
    let rows: Vec<usize> =
        par::map_range(h as usize, |r| (0..w).filter(|&c| bvh.raycast(mesh, &camera.pixel_ray(c, r as u32)).is_some()).count());
    rows.iter().sum::<usize>() as f64 / (w as f64 * h as f64)
}

/// Walkable, upward-facing triangles with their areas.
fn walkable_ground(mesh: &LabeledMesh) -> Vec<(usize, f64)> {
    (0..mesh.len())
        .filter(|&i| mesh.triangles[i].walkable && discretize_unit_normal(&mesh.normal(i)) == NormalBin::Ground)
        .map(|i| (i, mesh.area(i)))
        .collect()
}

fn pick_weighted(rng: &mut ChaCha8Rng, items: &[(usize, f64)]) -> usize {
    let total: f64 = items.iter().map(|x| x.1).sum();
    let mut t = rng.random::<f64>() * total;
    for &(i, a) in items {
        if t < a {
            return i;
        }
        t -= a;
    }
    items.last().expect("non-empty").0
}

fn point_in_triangle(rng: &mut ChaCha8Rng, mesh: &LabeledMesh, i: usize) -> Vec3 {
    let [a, b, c] = mesh.corners(i);
    let (mut s, mut t) = (rng.random::<f64>(), rng.random::<f64>());
    if s + t > 1.0 {
        s = 1.0 - s;
        t = 1.0 - t;
    }
    a + (b - a) * s + (c - a) * t
}

/// A camera 1.4 to 1.8 m above a walkable point, tilted at most 20° and
/// seeing the model in at least half of its pixels.
pub fn sample_plausible_camera(mesh: &LabeledMesh, bvh: &Bvh, intrinsics: &Intrinsics, seed: u64) -> Result<Camera, SynthError> {
    let ground = walkable_ground(mesh);
    if ground.is_empty() {
        return Err(SynthError::Sampling("mesh has no walkable ground".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let down = Vec3::new(0.0, 0.0, -1.0);
    for _ in 0..1000 {
        let tri = pick_weighted(&mut rng, &ground);
        let foot = point_in_triangle(&mut rng, mesh, tri);
        let height = rng.random_range(1.4..=1.8);
        let center = foot + Vec3::new(0.0, 0.0, height);
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let pitch = rng.random_range(0.0f64..=15.0).to_radians();
        let roll = rng.random_range(-3.0f64..=3.0).to_radians();
        let Some(hit) = bvh.raycast(mesh, &Ray::new(center, down)) else { continue };
        if (hit.t - height).abs() > 1e-6 || !hit.walkable {
            continue;
        }
        let pose = Pose::from_center(look_rotation(yaw, pitch, roll), center).expect("rotation from angles");
        if tilt_deg(&pose) > 20.0 {
            continue;
        }
        let camera = Camera::new(*intrinsics, pose).expect("validated intrinsics");
        if hit_fraction(&camera, bvh, mesh) >= 0.5 {
            return Ok(camera);
        }
    }
    Err(SynthError::Sampling("no plausible camera after 1000 tries".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub pixel_sigma: f64,
    pub outlier_fraction: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { pixel_sigma: 0.5, outlier_fraction: 0.3, count: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorrespondences {
    pub matches: Vec<Correspondence>,
    /// Indices whose pixels were replaced by random ones, ascending.
    pub outliers: Vec<usize>,
}

/// Surface points visible from `camera` paired with their noisy
/// projections; `round(outlier_fraction * count)` of them get a uniformly
/// random pixel instead.
pub fn synth_correspondences(
    camera: &Camera,
    bvh: &Bvh,
    mesh: &LabeledMesh,
    noise: &NoiseParams,
) -> Result<SynthCorrespondences, SynthError> {
    if noise.count < 4 {
        return Err(SynthError::Sampling("need at least 4 correspondences".into()));
    }
    if !(0.0..1.0).contains(&noise.outlier_fraction) || !(noise.pixel_sigma >= 0.0) {
        return Err(SynthError::Sampling("invalid noise parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let gauss = Normal::new(0.0, noise.pixel_sigma).expect("sigma validated");
    let (w, h) = (f64::from(camera.width()), f64::from(camera.height()));
    let mut matches = Vec::with_capacity(noise.count);
    let mut tries = 0;
    while matches.len() < noise.count {
        tries += 1;
        if tries > 200 * noise.count {
            return Err(SynthError::NoVisibleSurface);
        }
        let (u, v) = (rng.random::<f64>() * w, rng.random::<f64>() * h);
        let Some(hit) = bvh.raycast(mesh, &camera.cast_ray(u, v)) else { continue };
        let Some(px) = camera.project(&hit.point) else { continue };
        let pixel = px + Vec2::new(gauss.sample(&mut rng), gauss.sample(&mut rng));
        matches.push(Correspondence { pixel, world: hit.point });
    }
    let k = (noise.outlier_fraction * noise.count as f64).round() as usize;
    let mut outliers = index::sample(&mut rng, noise.count, k).into_vec();
    outliers.sort_unstable();
    for &i in &outliers {
        matches[i].pixel = Vec2::new(rng.random::<f64>() * w, rng.random::<f64>() * h);
    }
    Ok(SynthCorrespondences { matches, outliers })
}

/// One query for cluster selection: a true camera, one cluster matched
/// against it and distractor clusters consistent with wrong poses.
#[derive(Debug, Clone)]
pub struct ClusterQuery {
    pub camera: Camera,
    pub clusters: Vec<ClusterMatches>,
    pub correct_cluster: usize,
}

/// Most distractors support implausible poses (too high, below ground or
/// steeply tilted) with many inliers; the rest support plausible but wrong
/// poses with few inliers.
pub fn synth_cluster_query(
    mesh: &LabeledMesh,
    bvh: &Bvh,
    intrinsics: &Intrinsics,
    distractors: usize,
    seed: u64,
) -> Result<ClusterQuery, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = sample_plausible_camera(mesh, bvh, intrinsics, rng.random())?;
    cluster_query_for(camera, mesh, bvh, distractors, rng.random())
}

/// [`synth_cluster_query`] for a given true camera.
pub fn cluster_query_for(
    camera: Camera,
    mesh: &LabeledMesh,
    bvh: &Bvh,
    distractors: usize,
    seed: u64,
) -> Result<ClusterQuery, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intrinsics = &camera.intrinsics;
    let correct_cluster = rng.random_range(0..=distractors);
    let mut clusters = Vec::with_capacity(distractors + 1);
    for id in 0..=distractors {
        let matches = if id == correct_cluster {
            let noise =
                NoiseParams { pixel_sigma: 0.5, outlier_fraction: rng.random_range(0.3..0.6), count: 100, seed: rng.random() };
            synth_correspondences(&camera, bvh, mesh, &noise)?.matches
        } else {
            let kind = rng.random_range(0..4);
            let c = camera.center();
            let (pose, inliers) = match kind {
                0 => {
                    let up = rng.random_range(5.0..10.0);
                    (Pose::from_center(*camera.pose.rotation(), c + Vec3::new(0.0, 0.0, up)), rng.random_range(40..90))
                }
                1 => {
                    let drop = rng.random_range(3.0..6.0);
                    (Pose::from_center(*camera.pose.rotation(), c - Vec3::new(0.0, 0.0, drop)), rng.random_range(40..90))
                }
                2 => {
                    let pitch = rng.random_range(40.0f64..70.0).to_radians();
                    let r = look_rotation(rng.random_range(0.0..std::f64::consts::TAU), pitch, 0.0);
                    (Pose::from_center(r, c), rng.random_range(40..90))
                }
                _ => {
                    let other = sample_plausible_camera(mesh, bvh, intrinsics, rng.random())?;
                    (Ok(other.pose), rng.random_range(10..35))
                }
            };
            let pose = pose.expect("rotation is orthonormal");
            let fake = Camera::new(*intrinsics, pose).expect("validated intrinsics");
            distractor_matches(&fake, 100, inliers, &mut rng)
        };
        clusters.push(ClusterMatches { id, matches });
    }
    Ok(ClusterQuery { camera, clusters, correct_cluster })
}

fn distractor_matches(camera: &Camera, count: usize, inliers: usize, rng: &mut ChaCha8Rng) -> Vec<Correspondence> {
    let (w, h) = (f64::from(camera.width()), f64::from(camera.height()));
    let gauss = Normal::new(0.0, 0.5).expect("positive sigma");
    (0..count)
        .map(|i| {
            let (u, v) = (rng.random::<f64>() * w, rng.random::<f64>() * h);
            let ray = camera.cast_ray(u, v);
            let world = ray.point_at(rng.random_range(3.0..30.0));
            let pixel = if i < inliers {
                camera.project(&world).expect("in front") + Vec2::new(gauss.sample(rng), gauss.sample(rng))
            } else {
                Vec2::new(rng.random::<f64>() * w, rng.random::<f64>() * h)
            };
            Correspondence { pixel, world }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateKind {
    True,
    /// Feet above any surface.
    Floating,
    /// Feet on plants or a building wall.
    OffWalkable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianSet {
    /// Full-body ground-truth boxes.
    pub gt: Vec<BBox>,
    /// Principal-axis depth of each ground-truth person's feet.
    pub gt_depth: Vec<f64>,
    pub detections: Vec<Detection>,
    pub kinds: Vec<CandidateKind>,
}

/// Full-body box of a 1.7 m person whose feet are at `foot`, or `None` if
/// it is behind the camera. Bottom-center sits on the foot pixel.
pub fn person_box(camera: &Camera, foot: &Vec3) -> Option<(BBox, f64)> {
    let px = camera.project(foot)?;
    let z = camera.pose.transform(foot).z;
    let h = HUMAN_HEIGHT * camera.f() / z;
    let half = 0.2 * h;
    Some((BBox::new(px.x - half, px.y - h, px.x + half, px.y), z))
}

fn inside_image(b: &BBox, camera: &Camera) -> bool {
    b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= f64::from(camera.width()) && b.y2 <= f64::from(camera.height())
}

/// Is the straight segment from the camera to `p` blocked before `p`?
fn occluded(camera: &Camera, bvh: &Bvh, mesh: &LabeledMesh, p: &Vec3) -> bool {
    let d = p - camera.center();
    let dist = d.norm();
    bvh.raycast(mesh, &Ray::new(camera.center(), d)).is_some_and(|hit| hit.t < dist - 1e-6)
}

/// Ground-truth people standing on walkable ground plus candidate
/// detections: jittered true boxes and `n` geometric false positives, with
/// overlapping detector score distributions.
pub fn synth_pedestrians(
    camera: &Camera,
    bvh: &Bvh,
    mesh: &LabeledMesh,
    n: usize,
    seed: u64,
) -> Result<PedestrianSet, SynthError> {
    let ground = walkable_ground(mesh);
    if ground.is_empty() {
        return Err(SynthError::Sampling("no walkable ground".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tp_score = Normal::new(0.4, 0.5).expect("positive sigma");
    let fp_score = Normal::new(0.0, 0.5).expect("positive sigma");
    let mut set = PedestrianSet { gt: Vec::new(), gt_depth: Vec::new(), detections: Vec::new(), kinds: Vec::new() };
    let min_h = 24.0;

    let mut tries = 0;
    while set.gt.len() < n && tries < 2000 * n.max(1) {
        tries += 1;
        let tri = pick_weighted(&mut rng, &ground);
        let foot = point_in_triangle(&mut rng, mesh, tri);
        let Some((b, z)) = person_box(camera, &foot) else { continue };
        if b.height() < min_h || !inside_image(&b, camera) || set.gt.iter().any(|g| g.iou(&b) > 0.3) {
            continue;
        }
        let head = foot + Vec3::new(0.0, 0.0, HUMAN_HEIGHT);
        let mid = foot + Vec3::new(0.0, 0.0, 0.5 * HUMAN_HEIGHT);
        if occluded(camera, bvh, mesh, &head) || occluded(camera, bvh, mesh, &mid) {
            continue;
        }
        let mixture = if occluded(camera, bvh, mesh, &foot) { 2 } else { 1 };
        let j = 0.02 * b.height();
        let mut jit = || rng.random_range(-j..=j);
        let jb = BBox::new(b.x1 + jit(), b.y1 + jit(), b.x2 + jit(), b.y2 + jit());
        let shown = BBox { y2: jb.y1 + jb.height() / f64::from(mixture), ..jb };
        set.gt.push(b);
        set.gt_depth.push(z);
        set.detections.push(Detection::new(shown, tp_score.sample(&mut rng), mixture));
        set.kinds.push(CandidateKind::True);
    }
    if set.gt.is_empty() {
        return Err(SynthError::Sampling("no visible walkable ground for pedestrians".into()));
    }

    let off: Vec<(usize, f64)> = (0..mesh.len())
        .filter(|&i| !mesh.triangles[i].walkable)
        .filter(|&i| {
            let bin = discretize_unit_normal(&mesh.normal(i));
            (mesh.triangles[i].label == SemanticLabel::Plants && bin == NormalBin::Ground) || bin == NormalBin::Wall
        })
        .map(|i| (i, mesh.area(i)))
        .collect();
    let cam_z = camera.center().z;
    let mut fps = 0;
    tries = 0;
    while fps < n && tries < 2000 * n.max(1) {
        tries += 1;
        let floating = off.is_empty() || fps % 2 == 0;
        let foot = if floating {
            let tri = pick_weighted(&mut rng, &ground);
            let base = point_in_triangle(&mut rng, mesh, tri);
            let lift = rng.random_range(0.5..1.2);
            if base.z + lift > cam_z - 0.1 {
                continue;
            }
            base + Vec3::new(0.0, 0.0, lift)
        } else {
            let tri = pick_weighted(&mut rng, &off);
            let p = point_in_triangle(&mut rng, mesh, tri);
            if p.z > 3.0 {
                continue;
            }
            p
        };
        let Some((b, _)) = person_box(camera, &foot) else { continue };
        if b.height() < min_h || !inside_image(&b, camera) || set.gt.iter().any(|g| g.iou(&b) > 0.3) {
            continue;
        }
        let head = foot + Vec3::new(0.0, 0.0, HUMAN_HEIGHT);
        if occluded(camera, bvh, mesh, &head) || (!floating && occluded(camera, bvh, mesh, &foot)) {
            continue;
        }
        let mixture = match rng.random_range(0..10) {
            0 => 2,
            1 => 3,
            _ => 1,
        };
        let shown = BBox { y2: b.y1 + b.height() / f64::from(mixture), ..b };
        set.detections.push(Detection::new(shown, fp_score.sample(&mut rng), mixture));
        set.kinds.push(if floating { CandidateKind::Floating } else { CandidateKind::OffWalkable });
        fps += 1;
    }
    Ok(set)
}

/// A plausible camera that sees enough walkable ground for `n` people,
/// with its pedestrian set. Cameras are redrawn from `seed` until one fits.
pub fn sample_pedestrian_view(
    mesh: &LabeledMesh,
    bvh: &Bvh,
    intrinsics: &Intrinsics,
    n: usize,
    seed: u64,
) -> Result<(Camera, PedestrianSet), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let camera = sample_plausible_camera(mesh, bvh, intrinsics, rng.random())?;
        match synth_pedestrians(&camera, bvh, mesh, n, rng.random()) {
            Ok(set) if set.gt.len() == n => return Ok((camera, set)),
            _ => continue,
        }
    }
    Err(SynthError::Sampling(format!("no camera sees room for {n} pedestrians")))
}

/// Segmentation ground truth: rendered semantic labels with the visible
/// parts of each pedestrian painted as [`PEDESTRIAN_CLASS`].
pub fn seg_ground_truth(camera: &Camera, bvh: &Bvh, mesh: &LabeledMesh, peds: &PedestrianSet) -> Raster<u8> {
    let maps = render_context(camera, bvh, mesh);
    let mut out = maps.label_codes();
    for (b, &z) in peds.gt.iter().zip(&peds.gt_depth) {
        let (c0, r0, c1, r1) = crate::detect::box_pixel_span(b);
        for r in r0.max(0)..r1.min(out.height as i64) {
            for c in c0.max(0)..c1.min(out.width as i64) {
                let (c, r) = (c as usize, r as usize);
                // A person is about 0.5 m deep; nearer model surfaces occlude.
                if *maps.zdepth.get(c, r) > z - 0.5 {
                    out.set(c, r, PEDESTRIAN_CLASS);
                }
            }
        }
    }
    out
}

/// Area-weighted random points on the mesh surface.
pub fn sample_surface_points(mesh: &LabeledMesh, n: usize, seed: u64) -> Vec<Vec3> {
    let tris: Vec<(usize, f64)> = (0..mesh.len()).map(|i| (i, mesh.area(i))).filter(|t| t.1 > 0.0).collect();
    if tris.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let tri = pick_weighted(&mut rng, &tris);
            point_in_triangle(&mut rng, mesh, tri)
        })
        .collect()
}

/// Euclidean depth per pixel by testing every triangle; ties go to the
/// lower triangle index.
pub fn brute_force_depth(camera: &Camera, mesh: &LabeledMesh) -> Raster<f64> {
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let rows: Vec<Vec<f64>> = par::map_range(h, |r| {
        (0..w)
            .map(|c| {
                let ray = camera.pixel_ray(c as u32, r as u32);
                let mut best = f64::INFINITY;
                for i in 0..mesh.len() {
                    if let Some(hit) = mesh.intersect(&ray, i) {
                        if hit.t < best {
                            best = hit.t;
                        }
                    }
                }
                best
            })
            .collect()
    });
    Raster { width: w, height: h, data: rows.concat() }
}

/// Nearest hit by testing every triangle, `(t, triangle)`.
pub fn brute_force_raycast(mesh: &LabeledMesh, ray: &Ray) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..mesh.len() {
        if let Some(hit) = mesh.intersect(ray, i) {
            if best.is_none_or(|(t, _)| hit.t < t) {
                best = Some((hit.t, i));
            }
        }
    }
    best
}
