//! Geometric context from lifted GIS maps.
//!
//! The crate turns 2D labeled polygon maps into 3D meshes, registers point
//! clouds and cameras against them, renders per-pixel depth, semantic label
//! and surface orientation, and derives context features for rescoring
//! object detections and enriching pixel classifiers.
//!
//! Data-parallel loops (rendering, correspondence search, per-detection
//! features, per-cluster resectioning) use rayon when the default `parallel`
//! feature is enabled and run sequentially otherwise, with identical results.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod detect;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod gis;
pub mod par;
pub mod raster;
pub mod render;
pub mod resection;
pub mod seg;
pub mod synth;

pub use geometry::{Camera, Hit, Intrinsics, Pose, Ray, Triangle, Vec2, Vec3};
pub use gis::{GisMap, GisPolygon, LabeledMesh, LiftSpec, SemanticLabel};
pub use render::{Bvh, ContextMaps, NormalBin};

/// Average human height used by the detection context, meters.
pub const HUMAN_HEIGHT: f64 = 1.7;
