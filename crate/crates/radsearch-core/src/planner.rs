//! Segmentation-weighted A* over an 8-connected pixel grid.
//!
//! The world model is a [`PlanGrid`]: the label raster, a traversability
//! mask (road and grass cells that have not been removed), and two exact
//! Euclidean distance fields that feed the move-cost features:
//!
//! * `phi1 = 1 / d_nonroad(current)` when the current cell is road, else 0 -
//!   rewards hugging the road center;
//! * `phi2 = 1` when the neighbor is not road, else 0 - prefers road moves;
//! * `phi3 = 1 / d_obstacle(current)` when the current cell is grass, else 0 -
//!   keeps grass travel clear of obstacles.
//!
//! A move from `xc` to a neighbor `xn` costs `w . [phi1(xc), phi2(xn),
//! phi3(xc)]` with default weights [5, 2, 5], plus an optional per-meter
//! term (`base_step`, default 0). The A* heuristic is Euclidean distance in
//! pixels; because per-step costs can fall below the step length, that
//! heuristic may overestimate and paths are not certified optimal. The zero
//! heuristic degrades to Dijkstra and is exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::Raster;
use crate::segmentation::{Label, LabelRaster};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("label raster holds invalid code {0}")]
    BadLabelCode(u8),
    #[error("dem does not match labels: {0}x{1} vs {2}x{3}")]
    DemMismatch(usize, usize, usize, usize),
    #[error("{which} cell ({0}, {1}) is outside the {2}x{3} grid", .cell.0, .cell.1, .width, .height)]
    OutOfBounds {
        which: &'static str,
        cell: (usize, usize),
        width: usize,
        height: usize,
    },
    #[error("{which} cell ({0}, {1}) is not traversable", .cell.0, .cell.1)]
    EndpointNotTraversable {
        which: &'static str,
        cell: (usize, usize),
    },
    #[error("cells ({0}, {1}) and ({2}, {3}) are not 8-adjacent", .a.0, .a.1, .b.0, .b.1)]
    NotAdjacent {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("cell ({0}, {1}) is not traversable", .cell.0, .cell.1)]
    NotTraversable { cell: (usize, usize) },
    #[error("no path from ({0}, {1}) to ({2}, {3}): search exhausted after reaching {reached} nodes", .start.0, .start.1, .goal.0, .goal.1)]
    NoPath {
        start: (usize, usize),
        goal: (usize, usize),
        /// Cells reached before the frontier emptied.
        reached: usize,
    },
}

/// Cost weights for the three features plus the optional Euclidean step term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Weights of [phi1, phi2, phi3].
    pub w: [f64; 3],
    /// Cost per pixel of Euclidean step length; 0 leaves moves priced by the
    /// features alone.
    #[serde(default)]
    pub base_step: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            w: [5.0, 2.0, 5.0],
            base_step: 0.0,
        }
    }
}

/// Heuristic choices for [`astar`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    /// Straight-line distance to the goal in pixels. Fast, not admissible
    /// under the feature costs.
    Euclidean,
    /// Dijkstra ordering; exact optimal costs.
    Zero,
}

const NEIGHBORS: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Exact Euclidean distance in pixels from every cell to the nearest `true`
/// cell of the mask. Cells of an all-false mask are at infinite distance.
pub fn distance_transform(mask: &Raster<bool>) -> Raster<f64> {
    let squared = edt_squared(mask.width(), mask.height(), |i| mask.cells()[i]);
    let mut out = Raster::filled(mask.width(), mask.height(), 0.0, mask.transform);
    for (i, sq) in squared.iter().enumerate() {
        let (c, r) = (i % mask.width(), i / mask.width());
        out.set(c, r, sq.sqrt());
    }
    out
}

/// Two-pass exact squared Euclidean distance transform (per-column then
/// per-row lower envelopes of parabolas).
fn edt_squared(width: usize, height: usize, is_seed: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut g = vec![f64::INFINITY; width * height];
    let mut column = vec![0.0f64; height];
    let mut out_col = vec![0.0f64; height];
    for c in 0..width {
        for r in 0..height {
            column[r] = if is_seed(r * width + c) { 0.0 } else { f64::INFINITY };
        }
        dt_1d(&column, &mut out_col);
        for r in 0..height {
            g[r * width + c] = out_col[r];
        }
    }
    let mut row_buf = vec![0.0f64; width];
    let mut out_row = vec![0.0f64; width];
    let mut out = vec![f64::INFINITY; width * height];
    for r in 0..height {
        row_buf.copy_from_slice(&g[r * width..(r + 1) * width]);
        dt_1d(&row_buf, &mut out_row);
        out[r * width..(r + 1) * width].copy_from_slice(&out_row);
    }
    out
}

/// 1D squared-distance transform of sampled parabolas; infinite entries
/// contribute nothing.
fn dt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    let mut started = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !started {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            started = true;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if !started {
        d.fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for q in 0..n {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Planner world model: labels, traversability, removed nodes and the two
/// distance fields. Immutable once built; node removal returns a new grid.
#[derive(Debug, Clone)]
pub struct PlanGrid {
    labels: LabelRaster,
    dem: Option<Raster<f64>>,
    removed: Vec<bool>,
    traversable: Vec<bool>,
    d_nonroad: Vec<f64>,
    d_obstacle: Vec<f64>,
}

impl PlanGrid {
    /// Build the grid from labels (and an optional DEM, carried for
    /// diagnostics; it does not enter the default cost).
    pub fn new(labels: LabelRaster, dem: Option<Raster<f64>>) -> Result<Self, PlanError> {
        for &v in labels.cells() {
            if !labels.is_nodata_value(v) && Label::from_code(v).is_none() {
                return Err(PlanError::BadLabelCode(v));
            }
        }
        if let Some(d) = &dem {
            if d.width() != labels.width() || d.height() != labels.height() {
                return Err(PlanError::DemMismatch(
                    d.width(),
                    d.height(),
                    labels.width(),
                    labels.height(),
                ));
            }
        }
        let n = labels.len();
        let removed = vec![false; n];
        let mut grid = PlanGrid {
            labels,
            dem,
            removed,
            traversable: vec![false; n],
            d_nonroad: Vec::new(),
            d_obstacle: Vec::new(),
        };
        grid.rebuild_fields();
        Ok(grid)
    }

    fn cell_label(&self, i: usize) -> Option<Label> {
        let v = self.labels.cells()[i];
        if self.labels.is_nodata_value(v) {
            None
        } else {
            Label::from_code(v)
        }
    }

    /// Recompute traversability and distance fields. `d_nonroad` is purely
    /// label-based; `d_obstacle` also treats removed cells as obstacles.
    fn rebuild_fields(&mut self) {
        let n = self.labels.len();
        let (w, h) = (self.labels.width(), self.labels.height());
        let mut traversable = vec![false; n];
        for (i, slot) in traversable.iter_mut().enumerate() {
            *slot = !self.removed[i] && self.cell_label(i).is_some_and(Label::traversable);
        }
        self.traversable = traversable;
        let labels = &self.labels;
        let nonroad = |i: usize| -> bool {
            let v = labels.cells()[i];
            labels.is_nodata_value(v) || v != Label::Road.code()
        };
        let removed = &self.removed;
        let obstacle = |i: usize| -> bool {
            let v = labels.cells()[i];
            removed[i]
                || labels.is_nodata_value(v)
                || Label::from_code(v).is_none_or(|l| !l.traversable())
        };
        self.d_nonroad = edt_squared(w, h, nonroad)
            .into_iter()
            .map(f64::sqrt)
            .collect();
        self.d_obstacle = edt_squared(w, h, obstacle)
            .into_iter()
            .map(f64::sqrt)
            .collect();
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn labels(&self) -> &LabelRaster {
        &self.labels
    }

    pub fn dem(&self) -> Option<&Raster<f64>> {
        self.dem.as_ref()
    }

    pub fn is_traversable(&self, cell: (usize, usize)) -> bool {
        cell.0 < self.width()
            && cell.1 < self.height()
            && self.traversable[cell.1 * self.width() + cell.0]
    }

    pub fn is_removed(&self, cell: (usize, usize)) -> bool {
        self.removed[cell.1 * self.width() + cell.0]
    }

    /// Distance in pixels to the nearest non-road cell.
    pub fn d_nonroad(&self, cell: (usize, usize)) -> f64 {
        self.d_nonroad[cell.1 * self.width() + cell.0]
    }

    /// Distance in pixels to the nearest obstacle (non-road, non-grass or
    /// removed) cell.
    pub fn d_obstacle(&self, cell: (usize, usize)) -> f64 {
        self.d_obstacle[cell.1 * self.width() + cell.0]
    }

    fn check_cell(&self, which: &'static str, cell: (usize, usize)) -> Result<usize, PlanError> {
        if cell.0 >= self.width() || cell.1 >= self.height() {
            return Err(PlanError::OutOfBounds {
                which,
                cell,
                width: self.width(),
                height: self.height(),
            });
        }
        Ok(cell.1 * self.width() + cell.0)
    }

    /// The three move features for a current cell and an 8-adjacent,
    /// traversable neighbor.
    pub fn features(
        &self,
        xc: (usize, usize),
        xn: (usize, usize),
    ) -> Result<[f64; 3], PlanError> {
        let ic = self.check_cell("current", xc)?;
        let _ = self.check_cell("neighbor", xn)?;
        let dc = (xc.0 as i64 - xn.0 as i64).abs();
        let dr = (xc.1 as i64 - xn.1 as i64).abs();
        if dc > 1 || dr > 1 || (dc == 0 && dr == 0) {
            return Err(PlanError::NotAdjacent { a: xc, b: xn });
        }
        if !self.is_traversable(xc) {
            return Err(PlanError::NotTraversable { cell: xc });
        }
        if !self.is_traversable(xn) {
            return Err(PlanError::NotTraversable { cell: xn });
        }
        Ok(self.features_unchecked(ic, xn))
    }

    #[inline]
    fn features_unchecked(&self, ic: usize, xn: (usize, usize)) -> [f64; 3] {
        let label_c = self.cell_label(ic).expect("traversable cell has a label");
        let in_ = xn.1 * self.width() + xn.0;
        let label_n = self.cell_label(in_).expect("traversable cell has a label");
        // on-class cells are at least 1 px from the nearest other-class cell,
        // so the inverse distances stay in (0, 1]
        let phi1 = if label_c == Label::Road {
            debug_assert!(self.d_nonroad[ic] >= 1.0);
            1.0 / self.d_nonroad[ic]
        } else {
            0.0
        };
        let phi2 = if label_n != Label::Road { 1.0 } else { 0.0 };
        let phi3 = if label_c == Label::Grass {
            debug_assert!(self.d_obstacle[ic] >= 1.0);
            1.0 / self.d_obstacle[ic]
        } else {
            0.0
        };
        [phi1, phi2, phi3]
    }

    /// Cost of one move: the weighted features plus the optional step term.
    pub fn step_cost(
        &self,
        weights: &CostWeights,
        xc: (usize, usize),
        xn: (usize, usize),
    ) -> Result<f64, PlanError> {
        let phi = self.features(xc, xn)?;
        Ok(self.combine(weights, phi, xc, xn))
    }

    #[inline]
    fn combine(
        &self,
        weights: &CostWeights,
        phi: [f64; 3],
        xc: (usize, usize),
        xn: (usize, usize),
    ) -> f64 {
        let base = if weights.base_step > 0.0 {
            let step = if xc.0 != xn.0 && xc.1 != xn.1 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            };
            weights.base_step * step
        } else {
            0.0
        };
        weights.w[0] * phi[0] + weights.w[1] * phi[1] + weights.w[2] * phi[2] + base
    }

    /// New grid with `cells` plus their Chebyshev-disk dilation marked as
    /// removed and the obstacle distance field recomputed. Labels stay
    /// untouched. Out-of-bounds cells are clipped; the count of clipped input
    /// cells is returned alongside.
    pub fn remove_obstacle_nodes(
        &self,
        cells: &[(i64, i64)],
        dilation_radius: usize,
    ) -> (PlanGrid, usize) {
        let mut grid = self.clone();
        let mut clipped = 0usize;
        let rad = dilation_radius as i64;
        let mut any = false;
        for &(c, r) in cells {
            if !self.labels.in_bounds(c, r) {
                clipped += 1;
            }
            for dr in -rad..=rad {
                for dc in -rad..=rad {
                    let (nc, nr) = (c + dc, r + dr);
                    if grid.labels.in_bounds(nc, nr) {
                        let i = nr as usize * grid.width() + nc as usize;
                        if !grid.removed[i] {
                            grid.removed[i] = true;
                            any = true;
                        }
                    }
                }
            }
        }
        if any {
            grid.rebuild_fields();
        }
        (grid, clipped)
    }
}

/// A planned path: 8-connected traversable pixels from start to goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// `(col, row)` pixels, start first.
    pub pixels: Vec<(usize, usize)>,
    /// Accumulated step cost.
    pub cost: f64,
    /// Nodes expanded by the search.
    pub expansions: usize,
}

#[derive(PartialEq)]
struct OpenEntry {
    f: f64,
    h: f64,
    index: usize,
    g: f64,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: reverse for (f, h, index) ascending
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* search over the grid's traversable 8-connectivity. Expansion order
/// breaks ties by (f, h, row-major index). Diagonal moves may not squeeze
/// between two orthogonally-adjacent blocked cells.
pub fn astar(
    grid: &PlanGrid,
    weights: &CostWeights,
    start: (usize, usize),
    goal: (usize, usize),
    heuristic: Heuristic,
) -> Result<Path, PlanError> {
    grid.check_cell("start", start)?;
    grid.check_cell("goal", goal)?;
    if !grid.is_traversable(start) {
        return Err(PlanError::EndpointNotTraversable {
            which: "start",
            cell: start,
        });
    }
    if !grid.is_traversable(goal) {
        return Err(PlanError::EndpointNotTraversable {
            which: "goal",
            cell: goal,
        });
    }
    if start == goal {
        return Ok(Path {
            pixels: vec![start],
            cost: 0.0,
            expansions: 0,
        });
    }

    let w = grid.width();
    let h_fn = |cell: (usize, usize)| -> f64 {
        match heuristic {
            Heuristic::Zero => 0.0,
            Heuristic::Euclidean => {
                let dx = cell.0 as f64 - goal.0 as f64;
                let dy = cell.1 as f64 - goal.1 as f64;
                (dx * dx + dy * dy).sqrt()
            }
        }
    };

    let n = w * grid.height();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let start_i = start.1 * w + start.0;
    let goal_i = goal.1 * w + goal.0;
    g[start_i] = 0.0;
    let mut open = BinaryHeap::new();
    open.push(OpenEntry {
        f: h_fn(start),
        h: h_fn(start),
        index: start_i,
        g: 0.0,
    });
    let mut expansions = 0usize;
    let mut reached = 1usize;

    while let Some(entry) = open.pop() {
        let i = entry.index;
        if closed[i] || entry.g > g[i] {
            continue;
        }
        closed[i] = true;
        expansions += 1;
        if i == goal_i {
            let mut pixels = Vec::new();
            let mut cur = i;
            while cur != usize::MAX {
                pixels.push((cur % w, cur / w));
                cur = parent[cur];
            }
            pixels.reverse();
            return Ok(Path {
                pixels,
                cost: g[i],
                expansions,
            });
        }
        let xc = (i % w, i / w);
        for (dc, dr) in NEIGHBORS {
            let (nc, nr) = (xc.0 as i64 + dc, xc.1 as i64 + dr);
            if nc < 0 || nr < 0 || nc as usize >= w || nr as usize >= grid.height() {
                continue;
            }
            let xn = (nc as usize, nr as usize);
            if !grid.is_traversable(xn) {
                continue;
            }
            // no corner cutting: a diagonal between two blocked orthogonal
            // cells is physically impossible
            if dc != 0 && dr != 0 {
                let side_a = (nc as usize, xc.1);
                let side_b = (xc.0, nr as usize);
                if !grid.is_traversable(side_a) && !grid.is_traversable(side_b) {
                    continue;
                }
            }
            let ni = xn.1 * w + xn.0;
            if closed[ni] {
                continue;
            }
            let phi = grid.features_unchecked(i, xn);
            let cost = grid.combine(weights, phi, xc, xn);
            debug_assert!(cost >= 0.0);
            let ng = g[i] + cost;
            if ng < g[ni] {
                if g[ni].is_infinite() {
                    reached += 1;
                }
                g[ni] = ng;
                parent[ni] = i;
                let h = h_fn(xn);
                open.push(OpenEntry {
                    f: ng + h,
                    h,
                    index: ni,
                    g: ng,
                });
            }
        }
    }
    Err(PlanError::NoPath {
        start,
        goal,
        reached,
    })
}

/// Deterministic grids shared by the test suites.
pub mod fixtures {
    use super::PlanGrid;
    use crate::geo::{GeoTransform, Raster};
    use crate::segmentation::Label;

    /// The canonical road-preference fixture: an 11-pixel road ring around a
    /// grass courtyard with a building block in the middle. The cheap route
    /// between opposite ring points is around the ring, not across the
    /// courtyard.
    pub fn road_ring_grid() -> PlanGrid {
        let size = 61usize;
        let mut labels =
            Raster::filled(size, size, Label::Grass.code(), GeoTransform::identity());
        let in_band = |i: usize| (4..15).contains(&i) || (size - 15..size - 4).contains(&i);
        let in_span = |i: usize| (4..size - 4).contains(&i);
        for row in 0..size {
            for col in 0..size {
                if (in_band(col) && in_span(row)) || (in_band(row) && in_span(col)) {
                    labels.set(col, row, Label::Road.code());
                }
            }
        }
        for row in 22..39 {
            for col in 22..39 {
                labels.set(col, row, Label::Building.code());
            }
        }
        PlanGrid::new(labels, None).expect("valid fixture")
    }
}

/// Serialized plan request, the CLI's planning interface.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlanRequest {
    pub labels_path: String,
    #[serde(default)]
    pub dem_path: Option<String>,
    /// World meters.
    pub start: [f64; 2],
    pub goal: [f64; 2],
    #[serde(default = "default_weights")]
    pub weights: [f64; 3],
    #[serde(default)]
    pub base_step: f64,
    #[serde(default = "default_heuristic")]
    pub heuristic: Heuristic,
    /// Chebyshev radius applied to `remove_cells`.
    #[serde(default = "default_dilation")]
    pub dilation_radius: usize,
    /// Pixel cells to remove before planning.
    #[serde(default)]
    pub remove_cells: Vec<[i64; 2]>,
}

fn default_weights() -> [f64; 3] {
    CostWeights::default().w
}

fn default_heuristic() -> Heuristic {
    Heuristic::Euclidean
}

fn default_dilation() -> usize {
    2
}

/// Serialized path result.
#[derive(Debug, Serialize, Deserialize)]
pub struct PathRecord {
    /// `(col, row)` pixels.
    pub pixels: Vec<[usize; 2]>,
    /// Pixel centers in world meters.
    pub world: Vec<[f64; 2]>,
    pub cost: f64,
    pub expansions: usize,
}

impl PathRecord {
    pub fn from_path(path: &Path, labels: &LabelRaster) -> Self {
        PathRecord {
            pixels: path.pixels.iter().map(|&(c, r)| [c, r]).collect(),
            world: path
                .pixels
                .iter()
                .map(|&(c, r)| {
                    let (x, y) = labels.cell_center(c, r);
                    [x, y]
                })
                .collect(),
            cost: path.cost,
            expansions: path.expansions,
        }
    }
}
