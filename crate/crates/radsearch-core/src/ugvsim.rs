//! UGV mission execution: waypoint following over a planned path, simulated
//! LiDAR height sampling of a scene with scripted runtime obstacles,
//! gradient-based obstacle detection, global-map updates with replanning,
//! global DEM accumulation by averaging, a stationary dwell measurement at
//! the goal, and a retrace return along the recorded outbound waypoints.
//!
//! The mission loop is single threaded and fully deterministic: with a fixed
//! seed the entire log is byte-identical across runs. Per tick the order is
//! sense, detect, update map, replan, advance.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Raster;
use crate::planner::{astar, CostWeights, Heuristic, PlanError, PlanGrid};
use crate::radiation::{sample_measurement, DetectorModel, RadSource, RadiationError};
use crate::segmentation::{Label, LabelRaster};

/// Hard cap on commanded speed in m/s (the drivetrain's 10 mph).
pub const UGV_MAX_SPEED: f64 = 4.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("pose ({0}, {1}) is outside the scene")]
    PoseOutOfBounds(f64, f64),
    #[error("lidar needs at least 8 rays, got {0}")]
    BadRayCount(usize),
    #[error("{0} must be positive")]
    BadParameter(&'static str),
    #[error("speed {0} exceeds the {UGV_MAX_SPEED} m/s limit")]
    SpeedLimit(f64),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Radiation(#[from] RadiationError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

/// Footprint of a scripted obstacle, centered at (x, y) in world meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum ObstacleShape {
    Disc { x: f64, y: f64, radius: f64 },
    Rect { x: f64, y: f64, w: f64, h: f64 },
}

impl ObstacleShape {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            ObstacleShape::Disc { x, y, radius } => {
                let dx = px - x;
                let dy = py - y;
                dx * dx + dy * dy <= radius * radius
            }
            ObstacleShape::Rect { x, y, w, h } => {
                (px - x).abs() <= 0.5 * w && (py - y).abs() <= 0.5 * h
            }
        }
    }
}

/// An obstacle that materializes at `appears_at` seconds into the mission,
/// standing `height` meters above the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedObstacle {
    #[serde(flatten)]
    pub shape: ObstacleShape,
    pub height: f64,
    #[serde(default)]
    pub appears_at: f64,
}

/// Load an obstacle script (a JSON list of scripted obstacles).
pub fn read_obstacle_script(path: &Path) -> Result<Vec<ScriptedObstacle>, SimError> {
    let body = fs::read_to_string(path).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&body).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Ground-truth scene the UGV drives through: the surveyed DEM and labels
/// plus obstacles that were not present during the flight.
#[derive(Debug, Clone)]
pub struct TrueScene {
    pub dem: Raster<f64>,
    pub labels: LabelRaster,
    pub obstacles: Vec<ScriptedObstacle>,
}

impl TrueScene {
    /// Ground elevation at a world position (nearest cell), `None` outside
    /// the raster or on nodata.
    pub fn ground_height(&self, x: f64, y: f64) -> Option<f64> {
        let (c, r) = self.dem.transform.world_to_cell(x, y);
        if !self.dem.in_bounds(c, r) {
            return None;
        }
        let v = self.dem.get(c as usize, r as usize);
        if self.dem.is_nodata_value(v) {
            None
        } else {
            Some(v)
        }
    }

    /// Top surface at a world position and mission time: the tallest active
    /// obstacle standing on the ground, else the ground itself.
    pub fn surface_height(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        let ground = self.ground_height(x, y)?;
        let bump = self
            .obstacles
            .iter()
            .filter(|o| o.appears_at <= t && o.shape.contains(x, y))
            .map(|o| o.height)
            .fold(0.0f64, f64::max);
        Some(ground + bump)
    }
}

/// Vehicle state: planar position, heading, commanded speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UgvState {
    pub pos: [f64; 2],
    pub heading: f64,
    pub speed: f64,
}

impl UgvState {
    pub fn new(pos: [f64; 2], speed: f64) -> Result<Self, SimError> {
        if !(0.0..=UGV_MAX_SPEED).contains(&speed) {
            return Err(SimError::SpeedLimit(speed));
        }
        Ok(UgvState {
            pos,
            heading: 0.0,
            speed,
        })
    }
}

// ---------------------------------------------------------------------------
// LiDAR and obstacle detection
// ---------------------------------------------------------------------------

/// Sample surface heights along `n_rays` azimuths out to `range_m`, stepping
/// at the scene raster's resolution. Each return is the top surface at the
/// sample's (x, y); rays stop at the raster edge.
pub fn lidar_scan(
    scene: &TrueScene,
    pose: [f64; 2],
    range_m: f64,
    n_rays: usize,
    t: f64,
) -> Result<Vec<[f64; 3]>, SimError> {
    if !(range_m > 0.0) {
        return Err(SimError::BadParameter("range_m"));
    }
    if n_rays < 8 {
        return Err(SimError::BadRayCount(n_rays));
    }
    if scene.ground_height(pose[0], pose[1]).is_none() {
        return Err(SimError::PoseOutOfBounds(pose[0], pose[1]));
    }
    let step = scene.dem.transform.pixel_size;
    let steps = (range_m / step).floor() as usize;
    let mut points = Vec::with_capacity(n_rays * steps);
    for ray in 0..n_rays {
        let az = 2.0 * std::f64::consts::PI * ray as f64 / n_rays as f64;
        let (dx, dy) = (az.cos(), az.sin());
        for k in 1..=steps {
            let s = k as f64 * step;
            let x = pose[0] + dx * s;
            let y = pose[1] + dy * s;
            match scene.surface_height(x, y, t) {
                Some(z) => points.push([x, y, z]),
                None => break,
            }
        }
    }
    Ok(points)
}

/// World-grid cell index at `cell_size` resolution.
fn world_cell(x: f64, y: f64, cell_size: f64) -> (i64, i64) {
    ((x / cell_size).floor() as i64, (y / cell_size).floor() as i64)
}

/// Center of a world-grid cell.
pub fn world_cell_center(cell: (i64, i64), cell_size: f64) -> (f64, f64) {
    (
        (cell.0 as f64 + 0.5) * cell_size,
        (cell.1 as f64 + 0.5) * cell_size,
    )
}

/// Rasterize a scan into a local max-height grid and return the cells whose
/// height gradient magnitude exceeds `grad_tau`. Gradients use central
/// differences where both neighbors exist, one-sided where only one does. A
/// height jump is attributed to its taller side: a cell is an obstacle only
/// when it also stands more than one threshold-step above its lowest
/// neighbor, so the flat ground ringing an obstacle is never flagged.
pub fn detect_obstacles(
    points: &[[f64; 3]],
    cell_size: f64,
    grad_tau: f64,
) -> BTreeSet<(i64, i64)> {
    let mut heights: HashMap<(i64, i64), f64> = HashMap::new();
    for p in points {
        let cell = world_cell(p[0], p[1], cell_size);
        let h = heights.entry(cell).or_insert(f64::NEG_INFINITY);
        *h = h.max(p[2]);
    }
    let grad_axis = |lo: Option<f64>, hi: Option<f64>, center: f64| -> f64 {
        match (lo, hi) {
            (Some(a), Some(b)) => (b - a) / (2.0 * cell_size),
            (None, Some(b)) => (b - center) / cell_size,
            (Some(a), None) => (center - a) / cell_size,
            (None, None) => 0.0,
        }
    };
    let mut out = BTreeSet::new();
    for (&(ci, cj), &z) in &heights {
        let get = |i: i64, j: i64| heights.get(&(i, j)).copied();
        let gx = grad_axis(get(ci - 1, cj), get(ci + 1, cj), z);
        let gy = grad_axis(get(ci, cj - 1), get(ci, cj + 1), z);
        if (gx * gx + gy * gy).sqrt() <= grad_tau {
            continue;
        }
        let mut min_neighbor = f64::INFINITY;
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                if let Some(nz) = get(ci + di, cj + dj) {
                    min_neighbor = min_neighbor.min(nz);
                }
            }
        }
        if min_neighbor.is_finite() && z - min_neighbor > grad_tau * cell_size {
            out.insert((ci, cj));
        }
    }
    out
}

/// Mark detected world cells in the label raster (dilated by a Chebyshev
/// radius, labeled `obstacle_label`) and remove the matching nodes from the
/// plan grid. Returns the updated grid and labels.
pub fn update_global_map(
    grid: &PlanGrid,
    labels: &LabelRaster,
    cells: &BTreeSet<(i64, i64)>,
    cell_size: f64,
    dilation_radius: usize,
    obstacle_label: Label,
) -> (PlanGrid, LabelRaster) {
    let mut pixel_cells = Vec::with_capacity(cells.len());
    for &cell in cells {
        let (x, y) = world_cell_center(cell, cell_size);
        pixel_cells.push(labels.transform.world_to_cell(x, y));
    }
    let (new_grid, _clipped) = grid.remove_obstacle_nodes(&pixel_cells, dilation_radius);
    let mut new_labels = labels.clone();
    let rad = dilation_radius as i64;
    for &(c, r) in &pixel_cells {
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                let (nc, nr) = (c + dc, r + dr);
                if new_labels.in_bounds(nc, nr) {
                    new_labels.set(nc as usize, nr as usize, obstacle_label.code());
                }
            }
        }
    }
    (new_grid, new_labels)
}

// ---------------------------------------------------------------------------
// Global DEM accumulation
// ---------------------------------------------------------------------------

/// Per-cell running sum and count of observed heights; the exported DEM is
/// the mean, with never-observed cells as nodata.
#[derive(Debug, Clone)]
pub struct DemAccumulator {
    sum: Vec<f64>,
    count: Vec<u32>,
    width: usize,
    height: usize,
    transform: crate::geo::GeoTransform,
}

impl DemAccumulator {
    /// Accumulator co-registered with an existing raster.
    pub fn matching(raster: &Raster<f64>) -> Self {
        DemAccumulator {
            sum: vec![0.0; raster.len()],
            count: vec![0; raster.len()],
            width: raster.width(),
            height: raster.height(),
            transform: raster.transform,
        }
    }

    pub fn insert_point(&mut self, x: f64, y: f64, z: f64) {
        let (c, r) = self.transform.world_to_cell(x, y);
        if c >= 0 && r >= 0 && (c as usize) < self.width && (r as usize) < self.height {
            let i = r as usize * self.width + c as usize;
            self.sum[i] += z;
            self.count[i] += 1;
        }
    }

    pub fn insert_points(&mut self, points: &[[f64; 3]]) {
        for p in points {
            self.insert_point(p[0], p[1], p[2]);
        }
    }

    pub fn observed_cells(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    /// Mean height per observed cell; nodata (-9999) elsewhere.
    pub fn export(&self) -> Raster<f64> {
        let mut out = Raster::filled(self.width, self.height, -9999.0, self.transform)
            .with_nodata(Some(-9999.0));
        for r in 0..self.height {
            for c in 0..self.width {
                let i = r * self.width + c;
                if self.count[i] > 0 {
                    out.set(c, r, self.sum[i] / self.count[i] as f64);
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Waypoint following
// ---------------------------------------------------------------------------

fn dist2d(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist2d(p, a);
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist2d(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Arc-length point-mass follower along a waypoint polyline.
#[derive(Debug, Clone)]
pub struct PathFollower {
    waypoints: Vec<[f64; 2]>,
    cum: Vec<f64>,
    s: f64,
    next: usize,
}

impl PathFollower {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Self {
        assert!(!waypoints.is_empty(), "follower needs at least one waypoint");
        let mut cum = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in waypoints.windows(2) {
            acc += dist2d(w[0], w[1]);
            cum.push(acc);
        }
        PathFollower {
            waypoints,
            cum,
            s: 0.0,
            next: 1,
        }
    }

    pub fn total_length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn finished(&self) -> bool {
        self.s >= self.total_length()
    }

    pub fn position(&self) -> [f64; 2] {
        let s = self.s.min(self.total_length());
        // segment containing arc length s
        let seg = match self
            .cum
            .binary_search_by(|c| c.total_cmp(&s))
        {
            Ok(i) => i,
            Err(i) => i - 1,
        }
        .min(self.waypoints.len().saturating_sub(2));
        if self.waypoints.len() == 1 {
            return self.waypoints[0];
        }
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let seg_len = self.cum[seg + 1] - self.cum[seg];
        if seg_len == 0.0 {
            return a;
        }
        let f = ((s - self.cum[seg]) / seg_len).clamp(0.0, 1.0);
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]
    }

    /// Move `dist` meters along the polyline; returns the waypoint indices
    /// passed during the move, in order.
    pub fn advance(&mut self, dist: f64) -> Vec<usize> {
        self.s = (self.s + dist).min(self.total_length());
        let mut passed = Vec::new();
        while self.next < self.waypoints.len() && self.cum[self.next] <= self.s {
            passed.push(self.next);
            self.next += 1;
        }
        passed
    }

    pub fn waypoint(&self, i: usize) -> [f64; 2] {
        self.waypoints[i]
    }

    /// Minimum distance from a point to the not-yet-traveled part of the path.
    pub fn distance_to_remaining(&self, p: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        let mut prev = self.position();
        for w in &self.waypoints[self.next.min(self.waypoints.len())..] {
            best = best.min(point_segment_distance(p, prev, *w));
            prev = *w;
        }
        if self.next >= self.waypoints.len() {
            best = best.min(dist2d(p, prev));
        }
        best
    }
}

/// Drive a point mass along the path at constant speed, returning one
/// position per tick until it comes within `capture_radius` of the path end.
pub fn follow_path(
    start: [f64; 2],
    path_world: &[[f64; 2]],
    dt: f64,
    speed: f64,
    capture_radius: f64,
) -> Result<Vec<[f64; 2]>, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::BadParameter("dt"));
    }
    if !(speed > 0.0) {
        return Err(SimError::BadParameter("speed"));
    }
    if speed > UGV_MAX_SPEED {
        return Err(SimError::SpeedLimit(speed));
    }
    if path_world.is_empty() {
        return Err(SimError::BadParameter("path_world"));
    }
    let mut waypoints = Vec::with_capacity(path_world.len() + 1);
    waypoints.push(start);
    waypoints.extend_from_slice(path_world);
    let goal = *path_world.last().unwrap();
    let mut follower = PathFollower::new(waypoints);
    let mut trajectory = Vec::new();
    while dist2d(follower.position(), goal) > capture_radius {
        follower.advance(speed * dt);
        trajectory.push(follower.position());
        if follower.finished() {
            break;
        }
    }
    Ok(trajectory)
}

// ---------------------------------------------------------------------------
// Mission log
// ---------------------------------------------------------------------------

pub const MISSION_LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub dist_to_goal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsSample {
    pub t: f64,
    pub counts: u64,
    pub dist_to_goal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissionEventKind {
    ObstacleDetected {
        /// World centers of the newly detected obstacle cells.
        cells: Vec<[f64; 2]>,
    },
    Replanned {
        cost: f64,
        path_len: usize,
    },
    DwellStart,
    DwellEnd,
    Returned,
    Aborted {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: MissionEventKind,
}

/// Complete record of one ground mission.
#[derive(Debug, Clone)]
pub struct MissionLog {
    pub samples: Vec<TrajectorySample>,
    pub counts: Vec<CountsSample>,
    pub events: Vec<MissionEvent>,
    pub outbound_waypoints: Vec<[f64; 2]>,
    pub return_waypoints: Vec<[f64; 2]>,
    /// Mean of all LiDAR returns per cell.
    pub global_dem: Raster<f64>,
    pub aborted: bool,
}

impl MissionLog {
    pub fn replanned(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e.kind, MissionEventKind::Replanned { .. }))
    }

    /// All obstacle-cell world centers reported by detection events.
    pub fn detected_cells(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for e in &self.events {
            if let MissionEventKind::ObstacleDetected { cells } = &e.kind {
                out.extend_from_slice(cells);
            }
        }
        out
    }

    /// Serialize as JSON lines: one trajectory sample, counts sample or
    /// event per line, in time order, each line schema-versioned.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct TrajLine<'a> {
            v: u32,
            #[serde(rename = "type")]
            kind: &'a str,
            t: f64,
            x: f64,
            y: f64,
            dist_to_goal: f64,
        }
        #[derive(Serialize)]
        struct CountsLine<'a> {
            v: u32,
            #[serde(rename = "type")]
            kind: &'a str,
            t: f64,
            counts: u64,
            dist_to_goal: f64,
        }
        #[derive(Serialize)]
        struct EventLine<'a> {
            v: u32,
            #[serde(rename = "type")]
            kind: &'a str,
            t: f64,
            #[serde(flatten)]
            event: &'a MissionEventKind,
        }
        // merge the three streams by time; rank breaks exact ties so reruns
        // serialize identically
        let mut lines: Vec<(f64, u8, String)> = Vec::with_capacity(
            self.samples.len() + self.counts.len() + self.events.len(),
        );
        for s in &self.samples {
            let line = serde_json::to_string(&TrajLine {
                v: MISSION_LOG_SCHEMA_VERSION,
                kind: "trajectory",
                t: s.t,
                x: s.x,
                y: s.y,
                dist_to_goal: s.dist_to_goal,
            })
            .expect("serializable");
            lines.push((s.t, 0, line));
        }
        for c in &self.counts {
            let line = serde_json::to_string(&CountsLine {
                v: MISSION_LOG_SCHEMA_VERSION,
                kind: "counts",
                t: c.t,
                counts: c.counts,
                dist_to_goal: c.dist_to_goal,
            })
            .expect("serializable");
            lines.push((c.t, 1, line));
        }
        for e in &self.events {
            let line = serde_json::to_string(&EventLine {
                v: MISSION_LOG_SCHEMA_VERSION,
                kind: "event",
                t: e.t,
                event: &e.kind,
            })
            .expect("serializable");
            lines.push((e.t, 2, line));
        }
        lines.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = String::new();
        for (_, _, line) in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), SimError> {
        fs::write(path, self.to_jsonl()).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

// ---------------------------------------------------------------------------
// Mission execution
// ---------------------------------------------------------------------------

/// Tunables of the mission loop. Defaults: 0.1 s ticks, 3 m/s, 0.5 m waypoint
/// capture, 10 m obstacle lookahead, 180 s dwell, 15 m / 64-ray LiDAR,
/// detection threshold 0.8 m/m at the scene resolution, 2 px dilation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionParams {
    pub dt: f64,
    pub speed: f64,
    pub capture_radius: f64,
    pub lookahead_m: f64,
    pub dwell_s: f64,
    pub lidar_range_m: f64,
    pub lidar_rays: usize,
    pub detect_cell_size: f64,
    pub detect_grad_tau: f64,
    pub dilation_radius: usize,
    pub obstacle_label: Label,
    /// Detector height above ground.
    pub sensor_height: f64,
    pub weights: CostWeights,
    pub heuristic: Heuristic,
    /// Safety cap; exceeding it aborts the mission.
    pub max_mission_s: f64,
}

impl Default for MissionParams {
    fn default() -> Self {
        MissionParams {
            dt: 0.1,
            speed: 3.0,
            capture_radius: 0.5,
            lookahead_m: 10.0,
            dwell_s: 180.0,
            lidar_range_m: 15.0,
            lidar_rays: 64,
            detect_cell_size: 0.6,
            detect_grad_tau: 0.8,
            dilation_radius: 2,
            obstacle_label: Label::Vehicle,
            sensor_height: 0.6,
            weights: CostWeights::default(),
            heuristic: Heuristic::Euclidean,
            max_mission_s: 3600.0,
        }
    }
}

impl MissionParams {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) {
            return Err(SimError::BadParameter("dt"));
        }
        if !(self.speed > 0.0) {
            return Err(SimError::BadParameter("speed"));
        }
        if self.speed > UGV_MAX_SPEED {
            return Err(SimError::SpeedLimit(self.speed));
        }
        if !(self.dwell_s >= 0.0) {
            return Err(SimError::BadParameter("dwell_s"));
        }
        Ok(())
    }
}

fn path_to_world(path: &crate::planner::Path, labels: &LabelRaster) -> Vec<[f64; 2]> {
    path.pixels
        .iter()
        .map(|&(c, r)| {
            let (x, y) = labels.cell_center(c, r);
            [x, y]
        })
        .collect()
}

struct MissionState<'a> {
    scene: &'a TrueScene,
    grid: PlanGrid,
    labels: LabelRaster,
    params: &'a MissionParams,
    goal_world: [f64; 2],
    goal_px: (usize, usize),
    tick: usize,
    ticks_per_sec: usize,
    log: MissionLog,
    acc: DemAccumulator,
    processed_cells: BTreeSet<(i64, i64)>,
}

impl MissionState<'_> {
    fn t(&self) -> f64 {
        self.tick as f64 * self.params.dt
    }

    fn push_event(&mut self, kind: MissionEventKind) {
        // event times are strictly increasing; simultaneous events within a
        // tick are separated by a microsecond in log order
        let mut t = self.t();
        if let Some(last) = self.log.events.last() {
            if t <= last.t {
                t = last.t + 1e-6;
            }
        }
        self.log.events.push(MissionEvent { t, kind });
    }

    fn sample(&mut self, pos: [f64; 2]) {
        self.log.samples.push(TrajectorySample {
            t: self.t(),
            x: pos[0],
            y: pos[1],
            dist_to_goal: dist2d(pos, self.goal_world),
        });
    }

    fn counts_due(&self) -> bool {
        self.tick % self.ticks_per_sec == 0
    }

    fn sample_counts(
        &mut self,
        pos: [f64; 2],
        det: &DetectorModel,
        sources: &[RadSource],
        rng: &mut impl Rng,
    ) -> Result<(), SimError> {
        let ground = self.scene.ground_height(pos[0], pos[1]).unwrap_or(0.0);
        let t = (self.tick / self.ticks_per_sec) as f64;
        let m = sample_measurement(
            rng,
            det,
            sources,
            [pos[0], pos[1], ground + self.params.sensor_height],
            t,
        )?;
        self.log.counts.push(CountsSample {
            t,
            counts: m.counts,
            dist_to_goal: dist2d(pos, self.goal_world),
        });
        Ok(())
    }

    /// Scan, accumulate, detect; when a new obstacle cell sits within the
    /// lookahead of the remaining path, update the global map and replan.
    /// Returns the new follower on replanning, `Err(reason)` to abort.
    fn sense_and_maybe_replan(
        &mut self,
        follower: &PathFollower,
        pos: [f64; 2],
    ) -> Result<Option<PathFollower>, String> {
        let scan = match lidar_scan(
            self.scene,
            pos,
            self.params.lidar_range_m,
            self.params.lidar_rays,
            self.t(),
        ) {
            Ok(s) => s,
            Err(e) => return Err(format!("lidar failed: {e}")),
        };
        self.acc.insert_points(&scan);
        let detected = detect_obstacles(&scan, self.params.detect_cell_size, self.params.detect_grad_tau);
        let new_cells: Vec<(i64, i64)> = detected
            .difference(&self.processed_cells)
            .copied()
            .collect();
        if new_cells.is_empty() {
            return Ok(None);
        }
        // cells that the global map already knows as non-traversable (the
        // surveyed buildings, vegetation and so on) carry no new information;
        // only detections that contradict the map matter
        let mut novel = BTreeSet::new();
        for &cell in &new_cells {
            let (x, y) = world_cell_center(cell, self.params.detect_cell_size);
            let (c, r) = self.labels.transform.world_to_cell(x, y);
            if !self.labels.in_bounds(c, r) || !self.grid.is_traversable((c as usize, r as usize)) {
                self.processed_cells.insert(cell);
            } else {
                novel.insert(cell);
            }
        }
        if novel.is_empty() {
            return Ok(None);
        }
        let near_path = novel.iter().any(|&cell| {
            let (x, y) = world_cell_center(cell, self.params.detect_cell_size);
            follower.distance_to_remaining([x, y]) <= self.params.lookahead_m
        });
        if !near_path {
            // out-of-the-way novelty is rechecked while it stays in view
            return Ok(None);
        }
        let centers: Vec<[f64; 2]> = novel
            .iter()
            .map(|&cell| {
                let (x, y) = world_cell_center(cell, self.params.detect_cell_size);
                [x, y]
            })
            .collect();
        self.push_event(MissionEventKind::ObstacleDetected {
            cells: centers,
        });
        let (grid, labels) = update_global_map(
            &self.grid,
            &self.labels,
            &novel,
            self.params.detect_cell_size,
            self.params.dilation_radius,
            self.params.obstacle_label,
        );
        self.grid = grid;
        self.labels = labels;
        self.processed_cells.extend(novel);

        let cur = self.labels.transform.world_to_cell(pos[0], pos[1]);
        if !self.labels.in_bounds(cur.0, cur.1) {
            return Err("vehicle left the mapped area".to_string());
        }
        let cur = (cur.0 as usize, cur.1 as usize);
        if !self.grid.is_traversable(cur) {
            return Err("obstacle update covered the vehicle's cell".to_string());
        }
        match astar(
            &self.grid,
            &self.params.weights,
            cur,
            self.goal_px,
            self.params.heuristic,
        ) {
            Ok(path) => {
                self.push_event(MissionEventKind::Replanned {
                    cost: path.cost,
                    path_len: path.pixels.len(),
                });
                let mut waypoints = vec![pos];
                waypoints.extend(path_to_world(&path, &self.labels));
                Ok(Some(PathFollower::new(waypoints)))
            }
            Err(e) => Err(format!("replanning failed: {e}")),
        }
    }
}

/// Execute a full mission: plan, drive out with sensing and replanning,
/// dwell at the goal, retrace the outbound waypoints home. A replanning dead
/// end aborts with a partial log rather than an error.
#[allow(clippy::too_many_arguments)]
pub fn run_mission(
    scene: &TrueScene,
    grid: &PlanGrid,
    start_world: [f64; 2],
    goal_world: [f64; 2],
    det: &DetectorModel,
    sources: &[RadSource],
    params: &MissionParams,
    rng: &mut impl Rng,
) -> Result<MissionLog, SimError> {
    params.validate()?;
    let labels = grid.labels().clone();
    let to_cell = |p: [f64; 2]| -> Result<(usize, usize), SimError> {
        let (c, r) = labels.transform.world_to_cell(p[0], p[1]);
        if !labels.in_bounds(c, r) {
            return Err(SimError::PoseOutOfBounds(p[0], p[1]));
        }
        Ok((c as usize, r as usize))
    };
    let start_px = to_cell(start_world)?;
    let goal_px = to_cell(goal_world)?;
    let ticks_per_sec = (1.0 / params.dt).round().max(1.0) as usize;

    let initial = astar(grid, &params.weights, start_px, goal_px, params.heuristic)?;
    let mut state = MissionState {
        scene,
        grid: grid.clone(),
        labels: labels.clone(),
        params,
        goal_world,
        goal_px,
        tick: 0,
        ticks_per_sec,
        log: MissionLog {
            samples: Vec::new(),
            counts: Vec::new(),
            events: Vec::new(),
            outbound_waypoints: vec![start_world],
            return_waypoints: Vec::new(),
            global_dem: Raster::filled(1, 1, 0.0, labels.transform),
            aborted: false,
        },
        acc: DemAccumulator::matching(&scene.dem),
        processed_cells: BTreeSet::new(),
    };

    let mut waypoints = vec![start_world];
    waypoints.extend(path_to_world(&initial, &labels));
    let mut follower = PathFollower::new(waypoints);
    let max_ticks = (params.max_mission_s / params.dt) as usize;

    // outbound
    let mut outbound_ok = true;
    loop {
        let pos = follower.position();
        state.sample(pos);
        if state.counts_due() {
            state.sample_counts(pos, det, sources, rng)?;
        }
        match state.sense_and_maybe_replan(&follower, pos) {
            Ok(Some(new_follower)) => follower = new_follower,
            Ok(None) => {}
            Err(reason) => {
                state.push_event(MissionEventKind::Aborted { reason });
                state.log.aborted = true;
                outbound_ok = false;
                break;
            }
        }
        for idx in follower.advance(params.speed * params.dt) {
            state.log.outbound_waypoints.push(follower.waypoint(idx));
        }
        state.tick += 1;
        let pos = follower.position();
        debug_assert!(
            {
                let (c, r) = state.labels.transform.world_to_cell(pos[0], pos[1]);
                state.grid.is_traversable((c as usize, r as usize))
            },
            "vehicle entered a non-traversable cell at t={}",
            state.t()
        );
        if follower.finished() && dist2d(pos, goal_world) <= params.capture_radius {
            break;
        }
        if state.tick > max_ticks {
            state.push_event(MissionEventKind::Aborted {
                reason: "mission time limit exceeded".to_string(),
            });
            state.log.aborted = true;
            outbound_ok = false;
            break;
        }
    }

    if outbound_ok {
        // dwell at the goal
        let pos = follower.position();
        state.push_event(MissionEventKind::DwellStart);
        let dwell_ticks = (params.dwell_s / params.dt).round() as usize;
        for _ in 0..dwell_ticks {
            state.sample(pos);
            if state.counts_due() {
                state.sample_counts(pos, det, sources, rng)?;
            }
            if let Ok(scan) = lidar_scan(
                scene,
                pos,
                params.lidar_range_m,
                params.lidar_rays,
                state.tick as f64 * params.dt,
            ) {
                state.acc.insert_points(&scan);
            }
            state.tick += 1;
        }
        state.push_event(MissionEventKind::DwellEnd);

        // retrace: the outbound waypoints in exact reverse order
        let mut back: Vec<[f64; 2]> = state.log.outbound_waypoints.clone();
        back.reverse();
        state.log.return_waypoints = back.clone();
        let mut follower = PathFollower::new(back);
        loop {
            let pos = follower.position();
            state.sample(pos);
            if state.counts_due() {
                state.sample_counts(pos, det, sources, rng)?;
            }
            if let Ok(scan) = lidar_scan(
                scene,
                pos,
                params.lidar_range_m,
                params.lidar_rays,
                state.tick as f64 * params.dt,
            ) {
                state.acc.insert_points(&scan);
            }
            follower.advance(params.speed * params.dt);
            state.tick += 1;
            if follower.finished() {
                state.push_event(MissionEventKind::Returned);
                break;
            }
            if state.tick > 2 * max_ticks {
                state.push_event(MissionEventKind::Aborted {
                    reason: "return leg time limit exceeded".to_string(),
                });
                state.log.aborted = true;
                break;
            }
        }
    }

    state.log.global_dem = state.acc.export();
    Ok(state.log)
}
