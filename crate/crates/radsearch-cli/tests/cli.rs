//! Command-line behavior: exit codes, error JSON on stderr, environment
//! overrides, and the file-level contracts of each subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn radsearch() -> Command {
    Command::new(env!("CARGO_BIN_EXE_radsearch"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("radsearch-cli-{name}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or("");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr not JSON: {text}"))
}

fn gen_scene(dir: &Path, seed: u64, size: (usize, usize)) {
    let cfg = serde_json::json!({
        "seed": seed,
        "out_dir": dir.to_str().unwrap(),
        "scene": {"width_px": size.0, "height_px": size.1, "pixel_size": 0.6}
    });
    let cfg_path = dir.join("scene_cfg.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let status = radsearch()
        .args(["scene-gen", "--config"])
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn version_lists_schemas() {
    let out = radsearch().arg("--version").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("mission-log/1"), "{text}");
    assert!(text.contains("measurements-csv/1"), "{text}");
}

#[test]
fn missing_seed_is_a_config_error() {
    let out = radsearch().args(["scene-gen"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["code"], 2);
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn malformed_raster_is_a_format_error() {
    let dir = temp_dir("badraster");
    fs::write(dir.join("bad.asc"), "ncols 2\nnrows 2\nxllcorner 0\n").unwrap();
    let request = serde_json::json!({
        "labels_path": dir.join("bad.asc").to_str().unwrap(),
        "start": [0.0, 0.0],
        "goal": [1.0, 1.0]
    });
    fs::write(dir.join("req.json"), request.to_string()).unwrap();
    let out = radsearch()
        .args(["plan", "--request"])
        .arg(dir.join("req.json"))
        .arg("--out")
        .arg(dir.join("path.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"]["kind"], "format");
}

#[test]
fn unreachable_goal_is_a_no_path_error() {
    let dir = temp_dir("nopath");
    gen_scene(&dir, 3, (96, 96));
    // wall the map into two halves by removing a full column of nodes
    let remove: Vec<[i64; 2]> = (0..96).map(|r| [48i64, r as i64]).collect();
    let request = serde_json::json!({
        "labels_path": dir.join("labels.asc").to_str().unwrap(),
        "start": [3.0, 28.8],
        "goal": [54.0, 28.8],
        "remove_cells": remove,
        "dilation_radius": 1
    });
    fs::write(dir.join("req.json"), request.to_string()).unwrap();
    let out = radsearch()
        .args(["plan", "--request"])
        .arg(dir.join("req.json"))
        .arg("--out")
        .arg(dir.join("path.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "no_path");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("reach"));
}

#[test]
fn env_var_overrides_output_dir_and_flag_wins() {
    let root = temp_dir("envout");
    let env_dir = root.join("from_env");
    let flag_dir = root.join("from_flag");
    let status = radsearch()
        .args(["scene-gen", "--seed", "11"])
        .env("RADSEARCH_OUT", env_dir.to_str().unwrap())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(env_dir.join("labels.asc").exists());

    let status = radsearch()
        .args(["scene-gen", "--seed", "11", "--out"])
        .arg(&flag_dir)
        .env("RADSEARCH_OUT", env_dir.to_str().unwrap())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(flag_dir.join("labels.asc").exists());
    // same seed, same bytes, regardless of how the directory was chosen
    assert_eq!(
        fs::read(env_dir.join("labels.asc")).unwrap(),
        fs::read(flag_dir.join("labels.asc")).unwrap()
    );
}

#[test]
fn degenerate_survey_aoi_is_rejected() {
    let dir = temp_dir("badaoi");
    gen_scene(&dir, 4, (96, 96));
    let cfg = serde_json::json!({
        "seed": 4,
        "out_dir": dir.join("flight").to_str().unwrap(),
        "survey": {"aoi": [10, 10, 5, 20]},
        "sources": dir.join("sources.json").to_str().unwrap()
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();
    let out = radsearch()
        .args(["survey", "--config"])
        .arg(dir.join("cfg.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_of_identical_flights_does_not_reject() {
    let dir = temp_dir("selftest");
    gen_scene(&dir, 6, (96, 96));
    let cfg = serde_json::json!({
        "seed": 6,
        "out_dir": dir.join("flight").to_str().unwrap(),
        "survey": {"aoi": [5, 5, 40, 30], "altitude": 12},
        "sources": dir.join("sources.json").to_str().unwrap()
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();
    assert!(radsearch()
        .args(["survey", "--config"])
        .arg(dir.join("cfg.json"))
        .status()
        .unwrap()
        .success());
    let m = dir.join("flight/measurements.csv");
    let out_json = dir.join("analysis.json");
    let status = radsearch()
        .args(["analyze", "--measurements"])
        .arg(&m)
        .arg("--background")
        .arg(&m)
        .arg("--out")
        .arg(&out_json)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_json).unwrap()).unwrap();
    assert_eq!(report["welch"]["reject_at_0_05"], false);
    assert_eq!(report["welch"]["t_stat"], 0.0);
    // all paired differences are zero: the paired statistic is undefined
    assert!(report["paired"].is_null());
    // the poi matches the maximum counts row of the file
    let n = report["n_source"].as_u64().unwrap();
    assert!(report["poi"]["index"].as_u64().unwrap() < n);

    // a distinct equal-length flight brings the paired variant back
    let cfg2 = serde_json::json!({
        "seed": 61,
        "out_dir": dir.join("flight2").to_str().unwrap(),
        "survey": {"aoi": [5, 5, 40, 30], "altitude": 12},
        "sources": dir.join("sources.json").to_str().unwrap()
    });
    fs::write(dir.join("cfg2.json"), cfg2.to_string()).unwrap();
    assert!(radsearch()
        .args(["survey", "--config"])
        .arg(dir.join("cfg2.json"))
        .status()
        .unwrap()
        .success());
    let status = radsearch()
        .args(["analyze", "--measurements"])
        .arg(&m)
        .arg("--background")
        .arg(dir.join("flight2/measurements.csv"))
        .arg("--out")
        .arg(dir.join("analysis2.json"))
        .status()
        .unwrap();
    assert!(status.success());
    let report2: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("analysis2.json")).unwrap()).unwrap();
    assert!(report2["paired"].is_object());
}

#[test]
fn refine_zero_noise_unaries_reproduce_truth() {
    let dir = temp_dir("refine0");
    // zero-noise scene: the unaries are one-hot, so the 2D baseline equals
    // the truth exactly
    let cfg = serde_json::json!({
        "seed": 8,
        "out_dir": dir.to_str().unwrap(),
        "scene": {"width_px": 96, "height_px": 96, "pixel_size": 0.6, "unary_noise": 0.0}
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();
    assert!(radsearch()
        .args(["scene-gen", "--config"])
        .arg(dir.join("cfg.json"))
        .status()
        .unwrap()
        .success());
    // over a flat DEM no regions fire and the refined labels are the truth
    // byte for byte
    let flat = "ncols 96\nnrows 96\nxllcorner 0\nyllcorner 0\ncellsize 0.6\nNODATA_value -9999\n"
        .to_string()
        + &vec![vec!["2"; 96].join(" "); 96].join("\n");
    fs::write(dir.join("flat.asc"), flat).unwrap();
    let status = radsearch()
        .args(["refine", "--unaries"])
        .arg(&dir)
        .arg("--dem")
        .arg(dir.join("flat.asc"))
        .arg("--truth")
        .arg(dir.join("labels.asc"))
        .arg("--out")
        .arg(dir.join("refined_flat"))
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("refined_flat/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(report["baseline"]["global_accuracy"], 1.0);
    assert_eq!(report["refined"]["global_accuracy"], 1.0);
    assert_eq!(report["changed_pixels"], 0);

    // over the real DEM the detected regions add only the cautionary band
    // around raised objects: near-perfect accuracy, changes inside regions
    let status = radsearch()
        .args(["refine", "--unaries"])
        .arg(&dir)
        .arg("--dem")
        .arg(dir.join("dem.asc"))
        .arg("--truth")
        .arg(dir.join("labels.asc"))
        .arg("--out")
        .arg(dir.join("refined_dem"))
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("refined_dem/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(report["baseline"]["global_accuracy"], 1.0);
    let refined_acc = report["refined"]["global_accuracy"].as_f64().unwrap();
    assert!(refined_acc > 0.97, "refined accuracy {refined_acc}");
    let changed = report["changed_pixels"].as_u64().unwrap();
    let region_cells = report["region_cells"].as_u64().unwrap();
    assert!(changed <= region_cells);
}

#[test]
fn refine_without_regions_keeps_baseline() {
    let dir = temp_dir("refineflat");
    gen_scene(&dir, 9, (96, 96));
    // flat DEM: no regions, refined labels equal the 2D baseline
    let flat = "ncols 96\nnrows 96\nxllcorner 0\nyllcorner 0\ncellsize 0.6\nNODATA_value -9999\n"
        .to_string()
        + &vec![vec!["1"; 96].join(" "); 96].join("\n");
    fs::write(dir.join("flat.asc"), flat).unwrap();
    let status = radsearch()
        .args(["refine", "--unaries"])
        .arg(&dir)
        .arg("--dem")
        .arg(dir.join("flat.asc"))
        .arg("--out")
        .arg(dir.join("refined"))
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("refined/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(report["regions"], 0);
    assert_eq!(report["changed_pixels"], 0);
    assert_eq!(
        fs::read(dir.join("refined/labels_refined.asc")).unwrap(),
        fs::read(dir.join("refined/labels_2d.asc")).unwrap()
    );
}

#[test]
fn report_histogram_bins_sum_to_sample_count() {
    let dir = temp_dir("report");
    gen_scene(&dir, 10, (96, 96));
    let cfg = serde_json::json!({
        "seed": 10,
        "out_dir": dir.join("flight").to_str().unwrap(),
        "survey": {"aoi": [5, 5, 40, 30]},
        "sources": dir.join("sources.json").to_str().unwrap()
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();
    assert!(radsearch()
        .args(["survey", "--config"])
        .arg(dir.join("cfg.json"))
        .status()
        .unwrap()
        .success());
    let status = radsearch()
        .args(["report", "--measurements"])
        .arg(dir.join("flight/measurements.csv"))
        .arg("--out")
        .arg(dir.join("plots"))
        .status()
        .unwrap();
    assert!(status.success());
    let svg = fs::read_to_string(dir.join("plots/counts_hist.svg")).unwrap();
    let total: usize = svg
        .match_indices("data-count=\"")
        .map(|(i, _)| {
            let rest = &svg[i + 12..];
            rest[..rest.find('"').unwrap()].parse::<usize>().unwrap()
        })
        .sum();
    let csv = fs::read_to_string(dir.join("flight/measurements.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    assert_eq!(total, rows);
}

#[test]
fn sim_without_obstacles_never_replans() {
    let dir = temp_dir("simquiet");
    gen_scene(&dir, 12, (120, 96));
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("truth.json")).unwrap()).unwrap();
    let cfg = serde_json::json!({
        "seed": 12,
        "out_dir": dir.join("mission").to_str().unwrap(),
        "scene": {"dem": dir.join("dem.asc").to_str().unwrap(),
                   "labels": dir.join("labels.asc").to_str().unwrap()},
        "sources": dir.join("sources.json").to_str().unwrap(),
        "mission": {"start": [1.0, 96.0 * 0.6 / 2.0],
                     "goal": [truth["source_position"][0], truth["source_position"][1]]},
        "ugv": {"params": {"dwell_s": 5.0}}
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();
    let status = radsearch()
        .args(["sim", "--config"])
        .arg(dir.join("cfg.json"))
        .status()
        .unwrap();
    assert!(status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("mission/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["replans"], 0);
    assert_eq!(summary["obstacle_detections"], 0);
    assert_eq!(summary["aborted"], false);
    assert!(dir.join("mission/global_dem.asc").exists());
    assert!(dir.join("mission/mission.jsonl").exists());
}

#[test]
fn sim_seed_range_fans_out_per_seed_outputs() {
    let dir = temp_dir("simrange");
    gen_scene(&dir, 13, (96, 96));
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("truth.json")).unwrap()).unwrap();
    let cfg = serde_json::json!({
        "seed": 13,
        "out_dir": dir.join("missions").to_str().unwrap(),
        "scene": {"dem": dir.join("dem.asc").to_str().unwrap(),
                   "labels": dir.join("labels.asc").to_str().unwrap()},
        "sources": dir.join("sources.json").to_str().unwrap(),
        "mission": {"start": [1.0, 96.0 * 0.6 / 2.0],
                     "goal": [truth["source_position"][0], truth["source_position"][1]]},
        "ugv": {"params": {"dwell_s": 2.0}}
    });
    fs::write(dir.join("cfg.json"), cfg.to_string()).unwrap();
    let status = radsearch()
        .args(["sim", "--config"])
        .arg(dir.join("cfg.json"))
        .args(["--seeds", "20..22"])
        .status()
        .unwrap();
    assert!(status.success());
    for seed in 20..=22 {
        assert!(dir.join(format!("missions/mission_{seed}.jsonl")).exists());
        assert!(dir.join(format!("missions/summary_{seed}.json")).exists());
    }
}
