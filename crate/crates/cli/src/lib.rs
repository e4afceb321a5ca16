//! `geolift` command-line front end. Every subcommand reads files, runs one
//! pipeline stage and writes its artifacts; see `geolift --help`.

mod commands;
mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Exit code for invalid arguments or input files.
pub const EXIT_INVALID: i32 = 1;
/// Exit code for failures while computing or writing results.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Invalid(e) => write!(f, "invalid input: {e:#}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

pub(crate) trait Classify<T> {
    fn invalid(self, what: &str) -> Result<T, Failure>;
    fn runtime(self, what: &str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into().context(what.to_string())))
    }

    fn runtime(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into().context(what.to_string())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "geolift", version, about = "Lift GIS maps to 3D and backproject geometric context into posed images")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a labeled mesh from map.json and lift.json.
    Lift(LiftArgs),
    /// Register an SfM cloud to the map: 2D similarity from pairs, then ICP.
    Align(AlignArgs),
    /// Render depth, label and normal maps for a camera.
    Render(RenderArgs),
    /// Estimate a camera pose from clustered 2D-3D correspondences.
    Resect(ResectArgs),
    /// Context features for detections (CSV, one row per detection).
    Detfeat(DetfeatArgs),
    /// Train the linear rescoring SVM on feature tables.
    TrainRescore(TrainRescoreArgs),
    /// Replace detection scores with rescored values.
    Rescore(RescoreArgs),
    /// Per-pixel context feature stack for a camera.
    Segfeat(SegfeatArgs),
    /// Train the per-pixel classifier on feature stacks and label rasters.
    TrainSeg(TrainSegArgs),
    /// Label every pixel of a feature stack.
    PredictSeg(PredictSegArgs),
    /// Compare an estimated depth map with ground truth.
    EvalDepth(EvalDepthArgs),
    /// Average precision of detections against ground-truth boxes.
    EvalDet(EvalDetArgs),
    /// Intersection over union of a label raster against ground truth.
    EvalSeg(EvalSegArgs),
    /// Generate a synthetic scene with cameras, correspondences and detections.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write a Wavefront OBJ for inspection.
    #[arg(long)]
    pub obj: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// pairs.json: SfM ground-plane points (`src`) and map points (`dst`).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// cloud.json in the SfM frame.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    /// mesh.json to refine against; required with `--cloud`.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Write the cloud after alignment here.
    #[arg(long)]
    pub aligned_cloud: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    /// Stop when an ICP step improves the RMS by less than this, meters.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Fraction of farthest correspondences ignored per ICP step.
    #[arg(long, default_value_t = 0.0)]
    pub trim: f64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "view")]
    pub stem: String,
}

#[derive(Debug, Args)]
pub struct ResectArgs {
    #[arg(long)]
    pub correspondences: PathBuf,
    /// intrinsics.json: {"width","height","f","cx","cy"}.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Mesh for the plausibility filter.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Output camera.json.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    pub inlier_px: f64,
    #[arg(long, default_value_t = 0.999)]
    pub confidence: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 8)]
    pub min_inliers: usize,
    /// Keep implausible poses (requires no mesh).
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Debug, Args)]
pub struct DetfeatArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Ground-truth full-body boxes; detections whose full-body hypothesis
    /// overlaps one by IoU >= 0.5 are labeled +1, others -1. Without it the
    /// label column is 0.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainRescoreArgs {
    /// Feature tables with +1/-1 labels; may be repeated.
    #[arg(long = "features", required = true)]
    pub features: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4.0)]
    pub c: f64,
    #[arg(long, default_value_t = 4.0)]
    pub pos_weight: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_epochs: usize,
}

#[derive(Debug, Args)]
pub struct RescoreArgs {
    #[arg(long)]
    pub detections: PathBuf,
    /// Feature table with one row per detection, in the same order.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// IoU threshold of the non-maximum suppression applied after rescoring.
    #[arg(long, default_value_t = 0.5)]
    pub nms: f64,
    /// Keep every rescored detection.
    #[arg(long)]
    pub no_nms: bool,
}

#[derive(Debug, Args)]
pub struct SegfeatArgs {
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Detections for the DPM score map channel.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Leave out the disc label and normal channels.
    #[arg(long)]
    pub no_gis: bool,
    /// Pose angular errors, degrees, that set the disc radii.
    #[arg(long, value_delimiter = ',', default_value = "0,1,3,5")]
    pub angles: Vec<f64>,
    /// Detector classes, one score map each.
    #[arg(long, value_delimiter = ',', default_value = "person")]
    pub classes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainSegArgs {
    /// Feature stacks; paired in order with `--labels`.
    #[arg(long = "stack", required = true)]
    pub stacks: Vec<PathBuf>,
    /// Ground-truth label PGMs.
    #[arg(long = "labels", required = true)]
    pub labels: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub classes: usize,
    /// Keep every n-th pixel for training.
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct PredictSegArgs {
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output label PGM.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalDepthArgs {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalDetArgs {
    /// Detections per image; paired in order with `--gt`.
    #[arg(long = "detections", required = true)]
    pub detections: Vec<PathBuf>,
    /// Ground-truth boxes per image: [[x1,y1,x2,y2],...].
    #[arg(long = "gt", required = true)]
    pub gt: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// 11-point interpolated AP instead of all-point.
    #[arg(long)]
    pub eleven_point: bool,
    /// Score each detection's full-body hypothesis instead of its box.
    #[arg(long)]
    pub fullbody: bool,
    /// Write the precision-recall curve as CSV.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalSegArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub classes: usize,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Distractor correspondence clusters besides the true one.
    #[arg(long, default_value_t = 9)]
    pub distractors: usize,
    /// Ground-truth pedestrians (and as many false positives).
    #[arg(long, default_value_t = 8)]
    pub pedestrians: usize,
    /// A large block with over ten thousand triangles.
    #[arg(long)]
    pub dense: bool,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { 0 };
        }
    };
    if let Some(n) = geolift_core::par::configure_from_env() {
        log::debug!("using at most {n} threads");
    }
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("geolift: {f}");
            f.exit_code()
        }
    }
}
