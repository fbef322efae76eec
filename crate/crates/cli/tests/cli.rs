//! End-to-end tests for the `gelpad` binary: exit codes, output layout,
//! and byte-identical reruns.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn gelpad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gelpad"))
        .args(args)
        .env_remove("GELPAD_THREADS")
        .output()
        .expect("spawn gelpad")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Sorted (relative name, bytes) snapshot of a directory tree.
fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut snap = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                snap.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    snap
}

/// Small single-membrane scene flags shared by several tests.
fn small_scene_sets(speed: f64, frames: usize) -> Vec<String> {
    vec![
        "--set".into(),
        format!(
            "scene.membranes=[{{\"cx\":128.0,\"cy\":128.0,\"r\":100.0,\"rimDarkness\":60.0,\"interiorBrightness\":170.0}}]"
        ),
        "--set".into(),
        "scene.width=256".into(),
        "--set".into(),
        "scene.height=256".into(),
        "--set".into(),
        format!("scene.speedPxPerFrame={speed}"),
        "--set".into(),
        format!("scene.frameCount={frames}"),
        "--set".into(),
        "scene.noiseStd=1.0".into(),
    ]
}

#[test]
fn synth_writes_frames_and_truth_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let mut args: Vec<String> =
            vec!["synth".into(), "--out".into(), out.to_string_lossy().into()];
        args.extend(small_scene_sets(2.0, 8));
        let args_ref: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_code(&gelpad(&args_ref), 0);
    }
    for name in ["manifest.json", "truth.csv", "truth_circles.csv", "frame_000007.pgm"] {
        assert!(a.join(name).is_file(), "missing {name}");
    }
    assert_eq!(dir_snapshot(&a), dir_snapshot(&b), "synth reruns differ");
}

#[test]
fn run_default_scene_yields_four_track_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let out = gelpad(&[
        "synth",
        "--out",
        scene.to_str().unwrap(),
        "--set",
        "scene.frameCount=40",
    ]);
    assert_code(&out, 0);

    let (r1, r2) = (tmp.path().join("run1"), tmp.path().join("run2"));
    for r in [&r1, &r2] {
        let out = gelpad(&["run", "--in", scene.to_str().unwrap(), "--out", r.to_str().unwrap()]);
        assert_code(&out, 0);
    }
    let tracks: Vec<String> = std::fs::read_dir(&r1)
        .unwrap()
        .filter_map(|e| {
            let n = e.unwrap().file_name().to_string_lossy().to_string();
            n.starts_with("track_").then_some(n)
        })
        .collect();
    assert_eq!(tracks.len(), 4, "expected 4 track CSVs, got {tracks:?}");
    assert!(r1.join("circles.csv").is_file());
    assert!(r1.join("velocity_summary.csv").is_file());
    assert_eq!(dir_snapshot(&r1), dir_snapshot(&r2), "run reruns differ");
}

#[test]
fn threads_do_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let mut args: Vec<String> =
        vec!["synth".into(), "--out".into(), scene.to_string_lossy().into()];
    args.extend(small_scene_sets(2.0, 12));
    let args_ref: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_code(&gelpad(&args_ref), 0);

    let (single, multi) = (tmp.path().join("t1"), tmp.path().join("t4"));
    assert_code(
        &gelpad(&["run", "--in", scene.to_str().unwrap(), "--out", single.to_str().unwrap()]),
        0,
    );
    assert_code(
        &gelpad(&[
            "run",
            "--in",
            scene.to_str().unwrap(),
            "--out",
            multi.to_str().unwrap(),
            "--threads",
            "4",
        ]),
        0,
    );
    assert_eq!(dir_snapshot(&single), dir_snapshot(&multi), "thread count changed outputs");
}

#[test]
fn blank_scene_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("blank");
    let out = gelpad(&[
        "synth",
        "--out",
        scene.to_str().unwrap(),
        "--set",
        "scene.membranes=[]",
        "--set",
        "scene.frameCount=2",
    ]);
    assert_code(&out, 0);
    let out = gelpad(&[
        "run",
        "--in",
        scene.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_code(&out, 3);
}

#[test]
fn bad_config_exits_1_and_missing_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gelpad(&[
        "synth",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
        "--set",
        "tracker.noSuchKey=1",
    ]);
    assert_code(&out, 1);

    let out = gelpad(&[
        "run",
        "--in",
        tmp.path().join("nonexistent").to_str().unwrap(),
        "--out",
        tmp.path().join("y").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn eval_passes_good_tracks_and_fails_strict_thresholds() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let mut args: Vec<String> =
        vec!["synth".into(), "--out".into(), scene.to_string_lossy().into()];
    args.extend(small_scene_sets(2.0, 30));
    let args_ref: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_code(&gelpad(&args_ref), 0);
    let run_dir = tmp.path().join("run");
    assert_code(
        &gelpad(&["run", "--in", scene.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]),
        0,
    );

    let metrics_dir = tmp.path().join("metrics");
    let out = gelpad(&[
        "eval",
        "--tracks",
        run_dir.to_str().unwrap(),
        "--truth",
        scene.join("truth.csv").to_str().unwrap(),
        "--out",
        metrics_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(metrics_dir.join("metrics.csv").is_file());

    // Unreachable RMSE threshold must flip the exit code to 4.
    let out = gelpad(&[
        "eval",
        "--tracks",
        run_dir.to_str().unwrap(),
        "--truth",
        scene.join("truth.csv").to_str().unwrap(),
        "--set",
        "eval.maxRmsePx=0.000001",
    ]);
    assert_code(&out, 4);
}

#[test]
fn dose_series_run_produces_one_ec50_row() {
    let tmp = tempfile::tempdir().unwrap();
    let series = tmp.path().join("series");
    // Speed falls with concentration, so percent response falls too.
    let conditions: [(&str, f64, f64); 5] = [
        ("control", 0.0, 3.0),
        ("c001", 1.0, 2.6),
        ("c010", 10.0, 2.0),
        ("c100", 100.0, 1.2),
        ("c1000", 1000.0, 0.6),
    ];
    let mut dose_map = BTreeMap::new();
    for (name, conc, speed) in conditions {
        let mut args: Vec<String> = vec![
            "synth".into(),
            "--out".into(),
            series.join(name).to_string_lossy().into(),
        ];
        args.extend(small_scene_sets(speed, 25));
        let args_ref: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_code(&gelpad(&args_ref), 0);
        dose_map.insert(name.to_string(), conc);
    }
    let map_path = tmp.path().join("doses.json");
    std::fs::write(&map_path, serde_json::to_string(&dose_map).unwrap()).unwrap();

    let out_dir = tmp.path().join("assay");
    let out = gelpad(&[
        "run",
        "--in",
        series.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--dose-map",
        map_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    let fits = std::fs::read_to_string(out_dir.join("hill_fits.csv")).unwrap();
    assert_eq!(fits.lines().count(), 2, "expected header + one ec50 row:\n{fits}");
    let dose_points = std::fs::read_to_string(out_dir.join("dose_points.csv")).unwrap();
    assert_eq!(dose_points.lines().count(), 5, "4 dosed conditions:\n{dose_points}");
    assert!(out_dir.join("velocity_summary.csv").is_file());
    assert!(out_dir.join("plot_data.csv").is_file());
    assert!(out_dir.join("control").join("circles.csv").is_file());

    // analyze over the written track CSVs reproduces the same fit.
    let analyze_dir = tmp.path().join("analyze");
    let out = gelpad(&[
        "analyze",
        "--in",
        out_dir.to_str().unwrap(),
        "--out",
        analyze_dir.to_str().unwrap(),
        "--dose-map",
        map_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let refit = std::fs::read_to_string(analyze_dir.join("hill_fits.csv")).unwrap();
    assert_eq!(refit.lines().count(), 2);
}

#[test]
fn detect_writes_circles_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let mut args: Vec<String> =
        vec!["synth".into(), "--out".into(), scene.to_string_lossy().into()];
    args.extend(small_scene_sets(2.0, 2));
    let args_ref: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_code(&gelpad(&args_ref), 0);

    let out_dir = tmp.path().join("detect");
    let out = gelpad(&[
        "detect",
        "--in",
        scene.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "refineContours=true",
    ]);
    assert_code(&out, 0);
    let circles = std::fs::read_to_string(out_dir.join("circles.csv")).unwrap();
    assert_eq!(circles.lines().count(), 2, "header + one circle:\n{circles}");
    assert!(out_dir.join("contours.csv").is_file());
}
