//! Rigid poses, pinhole cameras, rays and ray/triangle intersection.
//!
//! Conventions: the camera looks along +z of its own frame with x to the
//! right and y down. World up is +z. A pose maps world points into the camera
//! frame, `x_cam = R * x_world + t`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gis::SemanticLabel;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;

/// Minimum ray parameter accepted as a hit, meters.
pub const RAY_EPSILON: f64 = 1e-7;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal with det +1 (|RᵀR - I| = {ortho:.3e}, det = {det})")]
    NotARotation { ortho: f64, det: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("pose"));
        }
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARotation { ortho, det });
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a pose from a rotation that is only approximately orthonormal,
    /// projecting it onto SO(3) first.
    pub fn from_approx(rotation: &Mat3, translation: Vec3) -> Self {
        Self { rotation: orthonormalize(rotation), translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Pose of a camera centered at `center` whose axes are given in world
    /// coordinates by the rows of `rotation`.
    pub fn from_center(rotation: Mat3, center: Vec3) -> Result<Self, GeometryError> {
        Self::new(rotation, -(rotation * center))
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self { rotation: self.rotation * other.rotation, translation: self.rotation * other.translation + self.translation }
    }

    /// Rotation angle of `self.R * other.Rᵀ`, radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose()))
    }
}

/// Angle of a rotation matrix, radians, computed robustly near 0 and π.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * skew.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

/// Nearest rotation in the Frobenius sense.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Rotation about a unit axis, radians.
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}

/// Rotation for a camera with the given yaw (heading about world +z,
/// 0 = looking along world +x), downward pitch and roll, radians.
pub fn look_rotation(yaw: f64, pitch_down: f64, roll: f64) -> Mat3 {
    // Camera axes in world coordinates for a level camera facing +x.
    let forward = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let right = Vec3::new(yaw.sin(), -yaw.cos(), 0.0);
    let down = Vec3::new(0.0, 0.0, -1.0);
    // Pitch about the right axis, then roll about the pitched forward axis.
    let pitch = axis_angle(&right, -pitch_down);
    let (forward, down) = (pitch * forward, pitch * down);
    let rolled = axis_angle(&forward, roll);
    let (right, down) = (rolled * right, rolled * down);
    Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(f: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { f, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point.
    pub fn centered(f: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(GeometryError::InvalidCamera(format!("focal length {} must be > 0", self.f)));
        }
        if self.width < 1 || self.height < 1 {
            return Err(GeometryError::InvalidCamera("image size must be at least 1x1".into()));
        }
        let inside = |c: f64, n: u32| c.is_finite() && (0.0..=n as f64).contains(&c);
        if !inside(self.cx, self.width) || !inside(self.cy, self.height) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Pixel of a camera-frame point, or `None` when `z <= 0`.
    pub fn project_camera_point(&self, p: &Vec3) -> Option<Vec2> {
        (p.z > 0.0).then(|| Vec2::new(self.f * p.x / p.z + self.cx, self.f * p.y / p.z + self.cy))
    }

    /// Unit bearing of a pixel in the camera frame.
    pub fn bearing(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.f, (v - self.cy) / self.f, 1.0).normalize()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, pose })
    }

    pub fn f(&self) -> f64 {
        self.intrinsics.f
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    pub fn center(&self) -> Vec3 {
        self.pose.center()
    }

    /// Principal axis in world coordinates.
    pub fn optical_axis(&self) -> Vec3 {
        self.pose.rotation().row(2).transpose()
    }

    /// Image pixel of a world point, `None` if it lies behind the camera.
    pub fn project(&self, x: &Vec3) -> Option<Vec2> {
        self.intrinsics.project_camera_point(&self.pose.transform(x))
    }

    /// World ray from the camera center through pixel `(u, v)`.
    pub fn cast_ray(&self, u: f64, v: f64) -> Ray {
        let dir = self.pose.rotation().transpose() * self.intrinsics.bearing(u, v);
        Ray { origin: self.center(), dir: dir.normalize() }
    }

    /// Ray through the center of pixel `(col, row)`.
    pub fn pixel_ray(&self, col: u32, row: u32) -> Ray {
        self.cast_ray(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Principal-axis depth of a point at distance `t` along `ray`.
    pub fn axial_depth(&self, ray: &Ray, t: f64) -> f64 {
        t * ray.dir.dot(&self.optical_axis())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// Normalizes `dir`.
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Self { origin, dir: dir.normalize() }
    }

    pub fn point_at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// A triangle with its semantic payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    pub vertices: [Vec3; 3],
    pub label: SemanticLabel,
    pub polygon_id: String,
    pub walkable: bool,
}

impl Triangle {
    pub fn normal(&self) -> Vec3 {
        face_normal(&self.vertices[0], &self.vertices[1], &self.vertices[2])
    }

    pub fn area(&self) -> f64 {
        triangle_area(&self.vertices[0], &self.vertices[1], &self.vertices[2])
    }
}

/// Unit normal from counter-clockwise winding.
pub fn face_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    (b - a).cross(&(c - a)).normalize()
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub tri_index: usize,
    pub label: SemanticLabel,
    pub walkable: bool,
    pub normal: Vec3,
}

/// Möller–Trumbore test returning `(t, b1, b2)` for the nearest crossing with
/// `t > RAY_EPSILON`. Edges and vertices count as inside.
#[inline]
pub fn ray_triangle(ray: &Ray, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 * e1.norm() * e2.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let b1 = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&b1) {
        return None;
    }
    let q = s.cross(&e1);
    let b2 = ray.dir.dot(&q) * inv;
    if b2 < 0.0 || b1 + b2 > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > RAY_EPSILON).then_some((t, b1, b2))
}

/// Ray/triangle intersection producing a full [`Hit`].
pub fn intersect_triangle(ray: &Ray, tri: &Triangle, tri_index: usize) -> Option<Hit> {
    let [a, b, c] = &tri.vertices;
    ray_triangle(ray, a, b, c).map(|(t, _, _)| Hit {
        t,
        point: ray.point_at(t),
        tri_index,
        label: tri.label,
        walkable: tri.walkable,
        normal: tri.normal(),
    })
}
