use geolift_core::geometry::{look_rotation, ray_triangle, Camera, Intrinsics, Pose, Ray, Vec3};
use geolift_core::render::{closest_point_on_triangle, render_context, Bvh};
use geolift_core::synth::{
    brute_force_depth, brute_force_raycast, default_intrinsics, make_scene, sample_plausible_camera, SceneSpec,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

/// Ray/triangle test from Plücker side products plus a plane intersection.
/// Returns `None` for near-grazing configurations the oracle cannot decide.
fn plucker_hit(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Option<f64>> {
    let side = |p: &Vec3, q: &Vec3| {
        // permuted inner product of the ray line with edge p->q
        let (u, v) = (q - p, p.cross(q));
        d.dot(&v) + u.dot(&o.cross(d))
    };
    let s = [side(a, b), side(b, c), side(c, a)];
    let scale = (b - a).norm().max((c - a).norm()).powi(2) * (1.0 + o.norm());
    if s.iter().any(|x| x.abs() < 1e-9 * scale) {
        return None;
    }
    let n = (b - a).cross(&(c - a));
    let denom = n.dot(d);
    if denom.abs() < 1e-9 * n.norm() {
        return None;
    }
    let t = n.dot(&(a - o)) / denom;
    let inside = s.iter().all(|x| *x > 0.0) || s.iter().all(|x| *x < 0.0);
    if t.abs() < 1e-6 {
        return None;
    }
    Some(if inside && t > 0.0 { Some(t) } else { None })
}

#[test]
fn moller_trumbore_agrees_with_plucker_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut decided = 0;
    let mut hits = 0;
    for _ in 0..20_000 {
        let (a, b, c) = (rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0));
        let o = rand_vec(&mut rng, 5.0);
        // Aim near the triangle so that roughly half the rays hit.
        let target = (a + b + c) / 3.0 + rand_vec(&mut rng, 1.5);
        let d = (target - o).normalize();
        let Some(expected) = plucker_hit(&o, &d, &a, &b, &c) else { continue };
        decided += 1;
        let got = ray_triangle(&Ray::new(o, d), &a, &b, &c).map(|r| r.0);
        match (expected, got) {
            (Some(te), Some(tg)) => {
                hits += 1;
                assert!((te - tg).abs() <= 1e-9 * te.max(1.0), "t {te} vs {tg}");
            }
            (None, None) => {}
            other => panic!("disagreement {other:?} for o={o:?} d={d:?}"),
        }
    }
    assert!(decided > 19_000 && hits > 3_000, "decided {decided}, hits {hits}");
}

fn brute_closest(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let seg = |s: &Vec3, e: &Vec3| {
        let d = e - s;
        let t = ((p - s).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
        s + d * t
    };
    let n = (b - a).cross(&(c - a)).normalize();
    let q = p - n * n.dot(&(p - a));
    let inside = [(a, b), (b, c), (c, a)].iter().all(|(s, e)| (*e - *s).cross(&(q - *s)).dot(&n) >= 0.0);
    if inside {
        return q;
    }
    [seg(a, b), seg(b, c), seg(c, a)].into_iter().min_by(|x, y| (x - p).norm().total_cmp(&(y - p).norm())).unwrap()
}

#[test]
fn closest_point_matches_projection_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5000 {
        let (a, b, c) = (rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0), rand_vec(&mut rng, 2.0));
        if (b - a).cross(&(c - a)).norm() < 1e-3 {
            continue;
        }
        let p = rand_vec(&mut rng, 4.0);
        let got = closest_point_on_triangle(&p, &a, &b, &c);
        let want = brute_closest(&p, &a, &b, &c);
        assert!(((got - p).norm() - (want - p).norm()).abs() < 1e-9, "{got:?} vs {want:?}");
    }
}

#[test]
fn bvh_queries_match_brute_force_on_a_city_block() {
    let scene = make_scene(&SceneSpec::dense(5)).unwrap();
    let bvh = Bvh::build(&scene.mesh).unwrap();
    let (lo, hi) = scene.mesh.bounds().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1500 {
        let o = Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(0.5..20.0));
        let ray = Ray::new(o, rand_vec(&mut rng, 1.0));
        let fast = bvh.raycast(&scene.mesh, &ray).map(|h| (h.t, h.tri_index));
        assert_eq!(fast, brute_force_raycast(&scene.mesh, &ray));
    }
    for _ in 0..200 {
        let p = Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(-5.0..25.0));
        let cp = bvh.closest_point(&scene.mesh, &p);
        let best = (0..scene.mesh.len())
            .map(|i| {
                let [a, b, c] = scene.mesh.corners(i);
                (brute_closest(&p, a, b, c) - p).norm()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((cp.distance - best).abs() < 1e-9, "{} vs {best}", cp.distance);
    }
}

#[test]
fn rendered_depth_equals_per_pixel_brute_force() {
    let scene = make_scene(&SceneSpec::with_seed(4)).unwrap();
    let bvh = Bvh::build(&scene.mesh).unwrap();
    let k = Intrinsics::centered(80.0, 64, 48).unwrap();
    let cam = sample_plausible_camera(&scene.mesh, &bvh, &k, 4).unwrap();
    let maps = render_context(&cam, &bvh, &scene.mesh);
    let gt = brute_force_depth(&cam, &scene.mesh);
    for (a, b) in maps.depth.data.iter().zip(&gt.data) {
        assert!(a == b || (a - b).abs() < 1e-9, "{a} vs {b}");
    }
    // Axial depth never exceeds the Euclidean one.
    assert!(maps.zdepth.data.iter().zip(&maps.depth.data).all(|(z, d)| !d.is_finite() || z <= d));
}

#[test]
fn sky_above_an_empty_horizon() {
    let scene = make_scene(&SceneSpec::with_seed(1)).unwrap();
    let bvh = Bvh::build(&scene.mesh).unwrap();
    let k = default_intrinsics();
    // Looking straight up from high above the scene sees nothing.
    let up = Pose::from_center(look_rotation(0.0, -std::f64::consts::FRAC_PI_2 + 0.01, 0.0), Vec3::new(0.0, 0.0, 500.0)).unwrap();
    let maps = render_context(&Camera::new(k, up).unwrap(), &bvh, &scene.mesh);
    assert_eq!(maps.hit_fraction(), 0.0);
    assert!(maps.labels.data.iter().all(|l| *l == geolift_core::SemanticLabel::Sky));
}

proptest! {
    #[test]
    fn cast_ray_round_trips_through_projection(u in 0.0f64..320.0, v in 0.0f64..240.0, yaw in -3.0f64..3.0, pitch in -0.5f64..0.5, t in 0.5f64..100.0) {
        let k = default_intrinsics();
        let cam = Camera::new(k, Pose::from_center(look_rotation(yaw, pitch, 0.1), Vec3::new(3.0, -2.0, 1.6)).unwrap()).unwrap();
        let p = cam.cast_ray(u, v).point_at(t);
        let back = cam.project(&p).unwrap();
        prop_assert!((back.x - u).abs() < 1e-8 && (back.y - v).abs() < 1e-8);
    }

    #[test]
    fn pose_inverse_composes_to_identity(yaw in -3.0f64..3.0, pitch in -1.0f64..1.0, roll in -1.0f64..1.0, x in -50.0f64..50.0) {
        let p = Pose::from_center(look_rotation(yaw, pitch, roll), Vec3::new(x, 1.0, 2.0)).unwrap();
        let q = p.compose(&p.inverse());
        prop_assert!((q.rotation() - geolift_core::geometry::Mat3::identity()).abs().max() < 1e-12);
        prop_assert!(q.translation().norm() < 1e-10);
    }
}
