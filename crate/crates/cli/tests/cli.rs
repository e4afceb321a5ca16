use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use geolift_core::formats::CameraFile;

fn geolift(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geolift")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MAP: &str = r#"{"crs":"local-meters","polygons":[
  {"id":"a","label":"building","walkable":false,"ring":[[0,0],[1,0],[1,1],[0,1]]},
  {"id":"b","label":"pavement","walkable":true,"ring":[[1,0],[3,0],[3,1],[1,1]]}
]}"#;

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = geolift(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in [
        "lift",
        "align",
        "render",
        "resect",
        "detfeat",
        "train-rescore",
        "rescore",
        "segfeat",
        "train-seg",
        "predict-seg",
        "eval-depth",
        "eval-det",
        "eval-seg",
        "synth",
    ] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    let bad = geolift(dir.path(), &["lift", "--no-such-flag"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("Usage"));
    assert_eq!(geolift(dir.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn lift_writes_mesh_and_obj() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.json"), MAP).unwrap();
    fs::write(dir.path().join("s.json"), r#"{"ground_elevation":0,"ops":[{"polygon":"a","op":"extrude","height":2}]}"#).unwrap();
    let out = geolift(dir.path(), &["lift", "--map", "m.json", "--spec", "s.json", "-o", "mesh.json", "--obj", "mesh.obj"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mesh = geolift_core::gis::LabeledMesh::from_json(&fs::read_to_string(dir.path().join("mesh.json")).unwrap()).unwrap();
    assert!(mesh.validate().is_ok());
    let top: f64 = (0..mesh.len()).filter(|&i| mesh.polygon_id(i) == "a" && mesh.normal(i).z > 0.5).map(|i| mesh.area(i)).sum();
    assert!((top - 1.0).abs() < 1e-12);
    assert!(fs::read_to_string(dir.path().join("mesh.obj")).unwrap().contains("usemtl building"));
}

#[test]
fn schema_errors_name_file_and_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.json"), MAP.replace("\"walkable\":true", "\"walkable\":\"yes\"")).unwrap();
    fs::write(dir.path().join("s.json"), r#"{"ops":[]}"#).unwrap();
    let out = geolift(dir.path(), &["lift", "--map", "m.json", "--spec", "s.json", "-o", "mesh.json"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("m.json") && msg.contains("polygons[1].walkable"), "{msg}");
    assert!(!dir.path().join("mesh.json").exists());

    fs::write(dir.path().join("m.json"), MAP).unwrap();
    fs::write(dir.path().join("s.json"), r#"{"ops":[{"polygon":"zz","op":"extrude","height":2}]}"#).unwrap();
    let out = geolift(dir.path(), &["lift", "--map", "m.json", "--spec", "s.json", "-o", "mesh.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("zz"));

    let out = geolift(dir.path(), &["eval-depth", "--est", "missing.pfm", "--gt", "missing.pfm", "-o", "d.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn resect_without_consensus_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let matches: Vec<String> = (0..12)
        .map(|i| {
            format!(r#"{{"px":[{},{}],"X":[{},{},{}]}}"#, 13 * i % 320, 29 * i % 240, i % 5, (7 * i) % 11, 0.3 * f64::from(i))
        })
        .collect();
    fs::write(dir.path().join("c.json"), format!(r#"{{"clusters":[{{"id":0,"matches":[{}]}}]}}"#, matches.join(","))).unwrap();
    fs::write(dir.path().join("k.json"), r#"{"f":500,"cx":160,"cy":120,"width":320,"height":240}"#).unwrap();
    let out = geolift(
        dir.path(),
        &[
            "resect",
            "--correspondences",
            "c.json",
            "--intrinsics",
            "k.json",
            "--min-inliers",
            "12",
            "--max-iters",
            "200",
            "-o",
            "cam.json",
            "--report",
            "r.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(dir.path().join("r.json").exists());
    assert!(!dir.path().join("cam.json").exists());
}

#[test]
fn synthetic_resection_recovers_the_camera() {
    let dir = tempfile::tempdir().unwrap();
    let out = geolift(dir.path(), &["--seed", "5", "synth", "--out-dir", "s"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = geolift(
        dir.path(),
        &[
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
            "report.json",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let load = |p: &str| {
        serde_json::from_str::<CameraFile>(&fs::read_to_string(dir.path().join(p)).unwrap()).unwrap().to_camera().unwrap()
    };
    let (truth, est) = (load("s/camera.json"), load("est.json"));
    assert!(est.pose.rotation_angle_to(&truth.pose).to_degrees() < 0.5);
    assert!((est.center() - truth.center()).norm() < 0.2);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let truth_file: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s/truth.json")).unwrap()).unwrap();
    assert_eq!(report["cluster"], truth_file["correct_cluster"]);
    assert_eq!(report["verdict"], "accept");
    assert!(report["height_m"].as_f64().unwrap() <= 4.0);
    assert_eq!(report["attempts"].as_array().unwrap().len(), 10);
}

#[test]
fn alignment_recovers_the_synthetic_frame() {
    let dir = tempfile::tempdir().unwrap();
    assert!(geolift(dir.path(), &["--seed", "8", "synth", "--out-dir", "s"]).status.success());
    let out = geolift(
        dir.path(),
        &["align", "--pairs", "s/pairs.json", "--cloud", "s/cloud.json", "--mesh", "s/mesh.json", "-o", "a.json"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let a: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a.json")).unwrap()).unwrap();
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s/truth.json")).unwrap()).unwrap();
    let (got, want) = (&a["similarity"], &t["similarity"]);
    assert!((got["scale"].as_f64().unwrap() / want["scale"].as_f64().unwrap() - 1.0).abs() < 1e-2);
    assert!((got["theta"].as_f64().unwrap() - want["theta"].as_f64().unwrap()).abs() < 1e-2);
    let hist = a["rms_history"].as_array().unwrap();
    let last = hist.last().unwrap().as_f64().unwrap();
    assert!(last <= hist[0].as_f64().unwrap() && last < 0.05, "{last}");
}

#[test]
fn thread_cap_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(geolift(dir.path(), &["synth", "--out-dir", "s"]).status.success());
    let mut rasters = Vec::new();
    for threads in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_geolift"))
            .current_dir(dir.path())
            .env("GEOLIFT_THREADS", threads)
            .args(["segfeat", "--camera", "s/camera.json", "--mesh", "s/mesh.json", "-o", "f.stack"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        rasters.push(fs::read(dir.path().join("f.stack")).unwrap());
    }
    assert_eq!(rasters[0], rasters[1]);
}
