//! Implementations of the pipeline subcommands. Every command is a pure
//! function of (config, seed, input files): identical inputs produce
//! byte-identical outputs.

use std::fs;
use std::path::{Path, PathBuf};

use radsearch_core::geo::{read_ascii_grid, write_ascii_grid, write_ppm, Raster, Rgb};
use radsearch_core::planner::{astar, PathRecord, PlanGrid, PlanRequest};
use radsearch_core::radiation::{
    counts_histogram, max_counts_poi, paired_t_test, read_measurements_csv, read_sources_json,
    welch_t_test, write_measurements_csv, write_sources_json, TTest,
};
use radsearch_core::segmentation::{
    argmax_labels, detect_obstacle_regions, precision_recall, refine_with_dem, write_legend_json,
    Label, SegMetrics, UnaryRaster, LABEL_COUNT,
};
use radsearch_core::survey::run_survey;
use radsearch_core::ugvsim::{
    read_obstacle_script, run_mission, CountsSample, MissionLog, ScriptedObstacle, TrueScene,
};
use serde::{Deserialize, Serialize};

use crate::config::{existing_path, MissionConfig};
use crate::error::CliError;
use crate::scene::{self, label_color, ScenePaths};

fn ensure_out_dir(cfg: &MissionConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// scene-gen
// ---------------------------------------------------------------------------

pub fn cmd_scene_gen(cfg: &MissionConfig) -> Result<(), CliError> {
    let dir = ensure_out_dir(cfg)?;
    let mut rng = radsearch_core::mission_rng(cfg.seed);
    let s = scene::generate(&cfg.scene, cfg.seed, &mut rng)?;
    let paths = ScenePaths::in_dir(&dir);
    write_ascii_grid(&paths.dem, &s.dem)?;
    scene::write_labels(&paths.labels, &s.labels)?;
    write_ppm(&paths.ortho, &s.ortho)?;
    write_legend_json(&paths.legend)?;
    write_sources_json(&paths.sources, &s.sources)?;
    s.unaries.write_grids(&dir)?;
    let truth = serde_json::to_string_pretty(&s.truth)?;
    fs::write(&paths.truth, truth)?;
    println!(
        "scene-gen: wrote dem/labels/ortho/unaries/legend/sources/truth to {}",
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// survey
// ---------------------------------------------------------------------------

pub fn cmd_survey(cfg: &MissionConfig) -> Result<(), CliError> {
    let dir = ensure_out_dir(cfg)?;
    let plan = cfg
        .survey
        .ok_or_else(|| CliError::config("config has no `survey` section"))?;
    let sources_path = cfg
        .sources
        .as_deref()
        .ok_or_else(|| CliError::config("config has no `sources` path"))?;
    let sources = read_sources_json(&existing_path("sources", sources_path)?)?;
    let det = cfg.detector.build()?;
    let mut rng = radsearch_core::mission_rng(cfg.seed);
    let (measurements, captures) = run_survey(&plan, &det, &sources, &mut rng)?;
    write_measurements_csv(&dir.join("measurements.csv"), &measurements)?;
    let mut cap = String::from("t,x,y,z\n");
    for c in &captures {
        cap.push_str(&format!("{},{},{},{}\n", c.t, c.x, c.y, c.z));
    }
    fs::write(dir.join("captures.csv"), cap)?;
    println!(
        "survey: {} measurements, {} captures -> {}",
        measurements.len(),
        captures.len(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct PoiRecord {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub counts: u64,
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub schema: String,
    pub n_source: usize,
    pub n_background: usize,
    pub source_mean: f64,
    pub source_std: f64,
    pub background_mean: f64,
    pub background_std: f64,
    pub welch: TTest,
    /// Present only when the two flights have equal sample counts.
    pub paired: Option<TTest>,
    pub poi: PoiRecord,
}

/// Deserialization view of an analysis report (TTest is write-only in core).
#[derive(Debug, Deserialize)]
pub struct AnalysisIn {
    pub poi: PoiRecord,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cmd_analyze(
    measurements: &Path,
    background: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let source = read_measurements_csv(measurements)?;
    let bg = read_measurements_csv(background)?;
    if source.len() < 2 || bg.len() < 2 {
        return Err(CliError::config(
            "need at least 2 measurements in both flights",
        ));
    }
    let a: Vec<f64> = bg.iter().map(|m| m.counts as f64).collect();
    let b: Vec<f64> = source.iter().map(|m| m.counts as f64).collect();
    let welch = welch_t_test(&a, &b)?;
    let paired = if a.len() == b.len() {
        paired_t_test(&a, &b).ok()
    } else {
        None
    };
    let (index, pos, c) = max_counts_poi(&source)?;
    let (source_mean, source_std) = mean_std(&b);
    let (background_mean, background_std) = mean_std(&a);
    let report = AnalysisReport {
        schema: "analysis/1".to_string(),
        n_source: source.len(),
        n_background: bg.len(),
        source_mean,
        source_std,
        background_mean,
        background_std,
        welch,
        paired,
        poi: PoiRecord {
            index,
            x: pos[0],
            y: pos[1],
            z: pos[2],
            counts: c,
        },
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "analyze: welch p = {:.3e} (reject: {}), poi at ({}, {}) with {} counts -> {}",
        report.welch.p_value,
        report.welch.reject_at_0_05,
        report.poi.x,
        report.poi.y,
        report.poi.counts,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct RefineReport {
    pub schema: String,
    pub regions: usize,
    pub region_cells: usize,
    pub changed_pixels: usize,
    pub tau: Option<f64>,
    /// Metrics against truth, when truth was supplied.
    pub baseline: Option<SegMetrics>,
    pub refined: Option<SegMetrics>,
}

pub struct RefineArgs {
    pub unaries_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub dem: PathBuf,
    pub truth: Option<PathBuf>,
    pub tau: Option<f64>,
    pub closing_iterations: usize,
    pub out_dir: PathBuf,
}

fn one_hot_unaries(labels: &radsearch_core::segmentation::LabelRaster) -> Result<UnaryRaster, CliError> {
    let mut scores = Vec::with_capacity(labels.len());
    for row in 0..labels.height() {
        for col in 0..labels.width() {
            let v = labels.get(col, row);
            let mut s = [0.0f64; LABEL_COUNT];
            if labels.is_nodata_value(v) {
                s = [1.0 / LABEL_COUNT as f64; LABEL_COUNT];
            } else {
                s[v as usize] = 1.0;
            }
            scores.push(s);
        }
    }
    Ok(UnaryRaster::new(
        labels.width(),
        labels.height(),
        labels.transform,
        scores,
    )?)
}

pub fn cmd_refine(args: &RefineArgs) -> Result<(), CliError> {
    fs::create_dir_all(&args.out_dir)?;
    let dem = read_ascii_grid(&args.dem)?;
    let (baseline, unaries) = match (&args.unaries_dir, &args.labels) {
        (Some(dir), _) => {
            let u = UnaryRaster::read_grids(dir)?;
            (argmax_labels(&u), u)
        }
        (None, Some(labels_path)) => {
            let labels = scene::read_labels(labels_path)?;
            let u = one_hot_unaries(&labels)?;
            (labels, u)
        }
        (None, None) => {
            return Err(CliError::config(
                "refine needs --unaries DIR or --labels FILE",
            ))
        }
    };
    let regions = detect_obstacle_regions(&dem, args.tau, args.closing_iterations)?;
    let refined = refine_with_dem(&baseline, &unaries, &regions)?;
    scene::write_labels(&args.out_dir.join("labels_refined.asc"), &refined)?;
    scene::write_labels(&args.out_dir.join("labels_2d.asc"), &baseline)?;

    let changed = baseline
        .cells()
        .iter()
        .zip(refined.cells())
        .filter(|(a, b)| a != b)
        .count();
    let (bm, rm) = match &args.truth {
        Some(truth_path) => {
            let truth = scene::read_labels(truth_path)?;
            (
                Some(precision_recall(&baseline, &truth)?),
                Some(precision_recall(&refined, &truth)?),
            )
        }
        None => (None, None),
    };
    let report = RefineReport {
        schema: "refine/1".to_string(),
        regions: regions.regions.len(),
        region_cells: regions.regions.iter().map(|r| r.cell_count).sum(),
        changed_pixels: changed,
        tau: args.tau,
        baseline: bm,
        refined: rm,
    };
    fs::write(
        args.out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "refine: {} regions, {} pixels reassigned -> {}",
        report.regions,
        report.changed_pixels,
        args.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

pub fn cmd_plan(request_path: &Path, out: &Path) -> Result<(), CliError> {
    let body = fs::read_to_string(request_path)
        .map_err(|e| CliError::config(format!("{}: {e}", request_path.display())))?;
    let req: PlanRequest = serde_json::from_str(&body)
        .map_err(|e| CliError::config(format!("{}: {e}", request_path.display())))?;
    let labels = scene::read_labels(&existing_path("labels", &req.labels_path)?)?;
    let dem = match &req.dem_path {
        Some(p) => Some(read_ascii_grid(&existing_path("dem", p)?)?),
        None => None,
    };
    let grid = PlanGrid::new(labels, dem)?;
    let grid = if req.remove_cells.is_empty() {
        grid
    } else {
        let cells: Vec<(i64, i64)> = req.remove_cells.iter().map(|c| (c[0], c[1])).collect();
        grid.remove_obstacle_nodes(&cells, req.dilation_radius).0
    };
    let to_px = |p: [f64; 2], which: &str| -> Result<(usize, usize), CliError> {
        let (c, r) = grid.labels().transform.world_to_cell(p[0], p[1]);
        if !grid.labels().in_bounds(c, r) {
            return Err(CliError::config(format!(
                "{which} ({}, {}) is outside the raster",
                p[0], p[1]
            )));
        }
        Ok((c as usize, r as usize))
    };
    let start = to_px(req.start, "start")?;
    let goal = to_px(req.goal, "goal")?;
    let weights = radsearch_core::planner::CostWeights {
        w: req.weights,
        base_step: req.base_step,
    };
    let path = astar(&grid, &weights, start, goal, req.heuristic)?;
    let record = PathRecord::from_path(&path, grid.labels());
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(out, serde_json::to_string_pretty(&record)?)?;
    println!(
        "plan: {} nodes, cost {:.3}, {} expansions -> {}",
        record.pixels.len(),
        record.cost,
        record.expansions,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sim
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SimSummary {
    schema: String,
    seed: u64,
    aborted: bool,
    replans: usize,
    obstacle_detections: usize,
    samples: usize,
    counts_samples: usize,
    outbound_waypoints: usize,
}

fn mission_goal(cfg: &MissionConfig) -> Result<([f64; 2], [f64; 2]), CliError> {
    let mission = cfg
        .mission
        .as_ref()
        .ok_or_else(|| CliError::config("config has no `mission` section"))?;
    let goal = match (mission.goal, &mission.analysis) {
        (Some(g), _) => g,
        (None, Some(analysis_path)) => {
            let body = fs::read_to_string(existing_path("analysis", analysis_path)?)
                .map_err(|e| CliError::config(e.to_string()))?;
            let parsed: AnalysisIn = serde_json::from_str(&body)
                .map_err(|e| CliError::Format(format!("{analysis_path}: {e}")))?;
            [parsed.poi.x, parsed.poi.y]
        }
        (None, None) => {
            return Err(CliError::config(
                "mission needs a `goal` or an `analysis` file",
            ))
        }
    };
    Ok((mission.start, goal))
}

fn load_mission_world(cfg: &MissionConfig) -> Result<(TrueScene, PlanGrid), CliError> {
    let dem_path = cfg
        .scene
        .dem
        .as_deref()
        .ok_or_else(|| CliError::config("config has no scene.dem path"))?;
    let labels_path = cfg
        .scene
        .labels
        .as_deref()
        .ok_or_else(|| CliError::config("config has no scene.labels path"))?;
    let dem = read_ascii_grid(&existing_path("dem", dem_path)?)?;
    let labels = scene::read_labels(&existing_path("labels", labels_path)?)?;
    let obstacles = match &cfg.obstacles {
        Some(p) => read_obstacle_script(&existing_path("obstacles", p)?)?,
        None => Vec::new(),
    };
    let scene = TrueScene {
        dem: dem.clone(),
        labels: labels.clone(),
        obstacles,
    };
    let grid = PlanGrid::new(labels, Some(dem))?;
    Ok((scene, grid))
}

fn run_one_mission(cfg: &MissionConfig, seed: u64) -> Result<MissionLog, CliError> {
    let (scene, grid) = load_mission_world(cfg)?;
    let (start, goal) = mission_goal(cfg)?;
    let sources = match &cfg.sources {
        Some(p) => read_sources_json(&existing_path("sources", p)?)?,
        None => Vec::new(),
    };
    let det = cfg.ugv.detector.build()?;
    let mut params = cfg.ugv.params.clone();
    params.weights = cfg.planner.weights();
    params.heuristic = cfg.planner.heuristic;
    params.dilation_radius = cfg.planner.dilation_radius;
    let mut rng = radsearch_core::mission_rng(seed);
    Ok(run_mission(
        &scene, &grid, start, goal, &det, &sources, &params, &mut rng,
    )?)
}

fn write_mission_outputs(
    dir: &Path,
    seed: u64,
    log: &MissionLog,
    suffixed: bool,
) -> Result<(), CliError> {
    let name = |stem: &str, ext: &str| {
        if suffixed {
            dir.join(format!("{stem}_{seed}.{ext}"))
        } else {
            dir.join(format!("{stem}.{ext}"))
        }
    };
    log.write_jsonl(&name("mission", "jsonl"))?;
    write_ascii_grid(&name("global_dem", "asc"), &log.global_dem)?;
    let summary = SimSummary {
        schema: "sim/1".to_string(),
        seed,
        aborted: log.aborted,
        replans: log
            .events
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    radsearch_core::ugvsim::MissionEventKind::Replanned { .. }
                )
            })
            .count(),
        obstacle_detections: log
            .events
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    radsearch_core::ugvsim::MissionEventKind::ObstacleDetected { .. }
                )
            })
            .count(),
        samples: log.samples.len(),
        counts_samples: log.counts.len(),
        outbound_waypoints: log.outbound_waypoints.len(),
    };
    fs::write(
        name("summary", "json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

/// Run one mission (config seed) or a seed range; with a range, missions fan
/// out across threads and outputs are keyed by seed.
pub fn cmd_sim(cfg: &MissionConfig, seeds: Option<(u64, u64)>) -> Result<(), CliError> {
    let dir = ensure_out_dir(cfg)?;
    match seeds {
        None => {
            let log = run_one_mission(cfg, cfg.seed)?;
            write_mission_outputs(&dir, cfg.seed, &log, false)?;
            println!(
                "sim: seed {} {} ({} events) -> {}",
                cfg.seed,
                if log.aborted { "aborted" } else { "completed" },
                log.events.len(),
                dir.display()
            );
            if log.aborted {
                return Err(CliError::NoPath("mission aborted (see log)".to_string()));
            }
            Ok(())
        }
        Some((a, b)) => {
            if b < a {
                return Err(CliError::config(format!("empty seed range {a}..{b}")));
            }
            let seeds: Vec<u64> = (a..=b).collect();
            let dir_ref = &dir;
            let results: Vec<Result<(u64, bool), CliError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = seeds
                    .iter()
                    .map(|&seed| {
                        scope.spawn(move || -> Result<(u64, bool), CliError> {
                            let log = run_one_mission(cfg, seed)?;
                            write_mission_outputs(dir_ref, seed, &log, true)?;
                            Ok((seed, log.aborted))
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("mission thread panicked"))
                    .collect()
            });
            let mut aborted = 0usize;
            for r in results {
                let (_, was_aborted) = r?;
                if was_aborted {
                    aborted += 1;
                }
            }
            println!(
                "sim: {} missions ({} aborted) -> {}",
                seeds.len(),
                aborted,
                dir.display()
            );
            if aborted > 0 {
                return Err(CliError::NoPath(format!("{aborted} missions aborted")));
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub struct ReportArgs {
    pub measurements: Option<PathBuf>,
    pub mission_log: Option<PathBuf>,
    pub path_json: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub obstacles: Option<PathBuf>,
    pub bin_width: f64,
    pub out_dir: PathBuf,
}

fn read_counts_jsonl(path: &Path) -> Result<Vec<CountsSample>, CliError> {
    let body = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| CliError::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.get("type").and_then(|t| t.as_str()) == Some("counts") {
            let sample: CountsSample = serde_json::from_value(v.clone())
                .map_err(|e| CliError::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
            out.push(sample);
        }
    }
    Ok(out)
}

fn draw_marker(img: &mut Raster<Rgb>, c: i64, r: i64, color: [u8; 3]) {
    // small upward triangle
    for (dy, half) in [(0i64, 2i64), (1, 1), (2, 0)] {
        for dx in -half..=half {
            let (cc, rr) = (c + dx, r + dy);
            if img.in_bounds(cc, rr) {
                img.set(cc as usize, rr as usize, Rgb(color));
            }
        }
    }
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    fs::create_dir_all(&args.out_dir)?;
    let mut wrote = Vec::new();

    if let Some(mpath) = &args.measurements {
        let ms = read_measurements_csv(mpath)?;
        let hist = counts_histogram(&ms, args.bin_width)?;
        let svg = crate::svg::histogram_svg(&hist, "Counts histogram");
        let out = args.out_dir.join("counts_hist.svg");
        fs::write(&out, svg)?;
        wrote.push(out);
    }

    if let Some(lpath) = &args.mission_log {
        let counts = read_counts_jsonl(lpath)?;
        let svg = crate::svg::counts_time_svg(&counts, "Counts over time");
        let out = args.out_dir.join("counts_vs_time.svg");
        fs::write(&out, svg)?;
        wrote.push(out);
    }

    if let Some(ppath) = &args.path_json {
        let labels_path = args
            .labels
            .as_ref()
            .ok_or_else(|| CliError::config("--path needs --labels for the overlay base"))?;
        let labels = scene::read_labels(labels_path)?;
        let body = fs::read_to_string(ppath)?;
        let record: PathRecord = serde_json::from_str(&body)
            .map_err(|e| CliError::Format(format!("{}: {e}", ppath.display())))?;
        let obstacles: Vec<ScriptedObstacle> = match &args.obstacles {
            Some(p) => read_obstacle_script(p)?,
            None => Vec::new(),
        };

        let mut img = Raster::filled(
            labels.width(),
            labels.height(),
            Rgb([0, 0, 0]),
            labels.transform,
        );
        for r in 0..labels.height() {
            for c in 0..labels.width() {
                let color = Label::from_code(labels.get(c, r))
                    .map(label_color)
                    .unwrap_or([0, 0, 0]);
                img.set(c, r, Rgb(color));
            }
        }
        // obstacles blue
        for r in 0..labels.height() {
            for c in 0..labels.width() {
                let (x, y) = labels.cell_center(c, r);
                if obstacles.iter().any(|o| o.shape.contains(x, y)) {
                    img.set(c, r, Rgb([40, 70, 220]));
                }
            }
        }
        // path red
        for px in &record.pixels {
            if px[0] < img.width() && px[1] < img.height() {
                img.set(px[0], px[1], Rgb([230, 30, 30]));
            }
        }
        // start and goal markers in yellow
        if let Some(first) = record.pixels.first() {
            draw_marker(&mut img, first[0] as i64, first[1] as i64, [250, 220, 40]);
        }
        if let Some(last) = record.pixels.last() {
            draw_marker(&mut img, last[0] as i64, last[1] as i64, [250, 220, 40]);
        }
        let out = args.out_dir.join("path_overlay.ppm");
        write_ppm(&out, &img)?;
        wrote.push(out);
    }

    if wrote.is_empty() {
        return Err(CliError::config(
            "report needs --measurements, --mission-log or --path",
        ));
    }
    println!(
        "report: wrote {}",
        wrote
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_unaries_argmax_is_identity() {
        let labels = Raster::filled(
            4,
            3,
            Label::Vegetation.code(),
            radsearch_core::geo::GeoTransform::identity(),
        );
        let u = one_hot_unaries(&labels).unwrap();
        assert_eq!(argmax_labels(&u), labels);
    }

    #[test]
    fn closing_iterations_default_in_scope() {
        assert_eq!(radsearch_core::segmentation::DEFAULT_CLOSING_ITERATIONS, 2);
    }
}
