//! Semantic label taxonomy, synthetic per-pixel category scores, DEM-driven
//! obstacle-region detection, label refinement and evaluation metrics.
//!
//! Six categories cover the scenes: road, grass, vehicle, building,
//! vegetation and shadow. Road and grass are traversable; everything else,
//! including shadow, is an obstacle to the planner. Refinement finds regions
//! of the DEM enclosed by high gradients and reassigns traversable-labeled
//! pixels inside them to the region's most likely non-traversable category,
//! leaving every other pixel untouched.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{gradient_magnitude, GeoError, GeoTransform, Raster};

#[derive(Debug, Error)]
pub enum SegError {
    #[error("noise level must lie in [0, 1], got {0}")]
    BadNoiseLevel(f64),
    #[error("label code {0} is not a known category")]
    BadLabelCode(u8),
    #[error("rasters are not co-registered: {0}")]
    NotCoregistered(String),
    #[error("score vector at pixel ({0}, {1}) sums to {2}, expected 1")]
    BadScoreSum(usize, usize, f64),
    #[error("confuser weights for {0:?} must be non-negative and not all zero")]
    BadConfusers(Label),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Scene categories. Codes are stable and appear in label rasters on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Road = 0,
    Grass = 1,
    Vehicle = 2,
    Building = 3,
    Vegetation = 4,
    Shadow = 5,
}

pub const LABEL_COUNT: usize = 6;

impl Label {
    pub const ALL: [Label; LABEL_COUNT] = [
        Label::Road,
        Label::Grass,
        Label::Vehicle,
        Label::Building,
        Label::Vegetation,
        Label::Shadow,
    ];

    /// Categories the ground vehicle may drive on.
    pub const TRAVERSABLE: [Label; 2] = [Label::Road, Label::Grass];

    /// Obstacle categories, in code order.
    pub const NON_TRAVERSABLE: [Label; 4] = [
        Label::Vehicle,
        Label::Building,
        Label::Vegetation,
        Label::Shadow,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Label> {
        Label::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Road => "road",
            Label::Grass => "grass",
            Label::Vehicle => "vehicle",
            Label::Building => "building",
            Label::Vegetation => "vegetation",
            Label::Shadow => "shadow",
        }
    }

    pub fn traversable(self) -> bool {
        matches!(self, Label::Road | Label::Grass)
    }
}

/// Raster of category codes.
pub type LabelRaster = Raster<u8>;

/// Check every non-nodata cell holds a known category code.
pub fn validate_labels(labels: &LabelRaster) -> Result<(), SegError> {
    for &v in labels.cells() {
        if labels.is_nodata_value(v) {
            continue;
        }
        if Label::from_code(v).is_none() {
            return Err(SegError::BadLabelCode(v));
        }
    }
    Ok(())
}

/// Per-pixel category score vectors, each summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryRaster {
    width: usize,
    height: usize,
    pub transform: GeoTransform,
    scores: Vec<[f64; LABEL_COUNT]>,
}

impl UnaryRaster {
    pub fn new(
        width: usize,
        height: usize,
        transform: GeoTransform,
        scores: Vec<[f64; LABEL_COUNT]>,
    ) -> Result<Self, SegError> {
        if scores.len() != width * height {
            return Err(GeoError::CellCount {
                width,
                height,
                cells: scores.len(),
            }
            .into());
        }
        let u = UnaryRaster {
            width,
            height,
            transform,
            scores,
        };
        u.validate()?;
        Ok(u)
    }

    fn validate(&self) -> Result<(), SegError> {
        for row in 0..self.height {
            for col in 0..self.width {
                let s = self.get(col, row);
                let sum: f64 = s.iter().sum();
                if (sum - 1.0).abs() > 1e-6 || s.iter().any(|&v| v < 0.0) {
                    return Err(SegError::BadScoreSum(col, row, sum));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> &[f64; LABEL_COUNT] {
        &self.scores[row * self.width + col]
    }

    /// Write one ASCII grid per category: `<prefix>unary_c{code}.asc`.
    pub fn write_grids(&self, dir: &Path) -> Result<(), SegError> {
        for (ch, _) in Label::ALL.iter().enumerate() {
            let mut layer = Raster::filled(
                self.width,
                self.height,
                0.0,
                self.transform,
            );
            for row in 0..self.height {
                for col in 0..self.width {
                    layer.set(col, row, self.get(col, row)[ch]);
                }
            }
            crate::geo::write_ascii_grid(&dir.join(format!("unary_c{ch}.asc")), &layer)?;
        }
        Ok(())
    }

    /// Read the six per-category grids written by [`UnaryRaster::write_grids`].
    pub fn read_grids(dir: &Path) -> Result<Self, SegError> {
        let mut layers = Vec::with_capacity(LABEL_COUNT);
        for ch in 0..LABEL_COUNT {
            layers.push(crate::geo::read_ascii_grid(&dir.join(format!("unary_c{ch}.asc")))?);
        }
        let (w, h) = (layers[0].width(), layers[0].height());
        for l in &layers[1..] {
            if l.width() != w || l.height() != h {
                return Err(SegError::NotCoregistered(format!(
                    "unary layer {}x{} vs {}x{}",
                    l.width(),
                    l.height(),
                    w,
                    h
                )));
            }
        }
        let mut scores = vec![[0.0; LABEL_COUNT]; w * h];
        for (ch, layer) in layers.iter().enumerate() {
            for (i, &v) in layer.cells().iter().enumerate() {
                scores[i][ch] = v;
            }
        }
        UnaryRaster::new(w, h, layers[0].transform, scores)
    }
}

/// Label legend written next to label rasters: code, name, traversability.
#[derive(Debug, Serialize, Deserialize)]
pub struct LegendEntry {
    pub code: u8,
    pub name: String,
    pub traversable: bool,
}

/// Write the category legend as JSON.
pub fn write_legend_json(path: &Path) -> Result<(), SegError> {
    let legend: Vec<LegendEntry> = Label::ALL
        .iter()
        .map(|l| LegendEntry {
            code: l.code(),
            name: l.name().to_string(),
            traversable: l.traversable(),
        })
        .collect();
    let body = serde_json::to_string_pretty(&legend).expect("serializable");
    fs::write(path, body).map_err(|e| {
        SegError::Geo(GeoError::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

// ---------------------------------------------------------------------------
// Synthetic unaries
// ---------------------------------------------------------------------------

/// Which categories absorb the noise mass for each true category, with
/// relative weights. Stands in for a trained per-pixel classifier.
#[derive(Debug, Clone)]
pub struct ConfuserMap {
    targets: [Vec<(Label, f64)>; LABEL_COUNT],
}

impl ConfuserMap {
    pub fn new(targets: [Vec<(Label, f64)>; LABEL_COUNT]) -> Result<Self, SegError> {
        for (code, t) in targets.iter().enumerate() {
            let sum: f64 = t.iter().map(|(_, w)| *w).sum();
            if t.iter().any(|(_, w)| *w < 0.0) || (!t.is_empty() && sum <= 0.0) {
                return Err(SegError::BadConfusers(Label::from_code(code as u8).unwrap()));
            }
        }
        Ok(ConfuserMap { targets })
    }

    /// Every category confused uniformly with all six categories.
    pub fn uniform() -> Self {
        let all: Vec<(Label, f64)> = Label::ALL.iter().map(|&l| (l, 1.0)).collect();
        ConfuserMap {
            targets: std::array::from_fn(|_| all.clone()),
        }
    }

    /// Plausible aerial-imagery confusions; buildings leak mostly into
    /// traversable grass, the hard failure mode the DEM refinement targets.
    pub fn scene_default() -> Self {
        use Label::*;
        ConfuserMap {
            targets: [
                vec![(Grass, 0.5), (Shadow, 0.5)],                  // road
                vec![(Road, 0.5), (Vegetation, 0.5)],               // grass
                vec![(Road, 0.6), (Shadow, 0.4)],                   // vehicle
                vec![(Grass, 0.85), (Vehicle, 0.15)],               // building
                vec![(Grass, 0.7), (Shadow, 0.3)],                  // vegetation
                vec![(Road, 0.6), (Vehicle, 0.4)],                  // shadow
            ],
        }
    }

    pub fn set(&mut self, truth: Label, confusers: Vec<(Label, f64)>) {
        self.targets[truth.code() as usize] = confusers;
    }

    fn confusers(&self, truth: u8) -> &[(Label, f64)] {
        &self.targets[truth as usize]
    }
}

/// Generate per-pixel scores from ground-truth labels: mass `1 - noise_level`
/// on the true category and the rest spread over that category's confusers
/// with per-pixel random proportions. Deterministic for a fixed RNG stream.
pub fn synth_unaries(
    truth: &LabelRaster,
    noise_level: f64,
    confusers: &ConfuserMap,
    rng: &mut impl Rng,
) -> Result<UnaryRaster, SegError> {
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(SegError::BadNoiseLevel(noise_level));
    }
    validate_labels(truth)?;
    let mut scores = Vec::with_capacity(truth.len());
    for row in 0..truth.height() {
        for col in 0..truth.width() {
            let v = truth.get(col, row);
            let mut s = [0.0f64; LABEL_COUNT];
            if truth.is_nodata_value(v) {
                s = [1.0 / LABEL_COUNT as f64; LABEL_COUNT];
                scores.push(s);
                continue;
            }
            s[v as usize] = 1.0 - noise_level;
            if noise_level > 0.0 {
                let conf = confusers.confusers(v);
                if !conf.is_empty() {
                    // exponential draws weighted by the configured confuser
                    // weights, normalized to the noise mass
                    let draws: Vec<f64> = conf
                        .iter()
                        .map(|(_, w)| w * -(rng.gen::<f64>().max(1e-300)).ln())
                        .collect();
                    let total: f64 = draws.iter().sum();
                    for ((label, _), draw) in conf.iter().zip(&draws) {
                        s[label.code() as usize] += noise_level * draw / total;
                    }
                } else {
                    s[v as usize] += noise_level;
                }
            }
            scores.push(s);
        }
    }
    UnaryRaster::new(truth.width(), truth.height(), truth.transform, scores)
}

/// Per-pixel argmax of the scores; ties pick the lowest category code.
pub fn argmax_labels(u: &UnaryRaster) -> LabelRaster {
    let mut out = Raster::filled(u.width(), u.height(), 0u8, u.transform);
    for row in 0..u.height() {
        for col in 0..u.width() {
            let s = u.get(col, row);
            let mut best = 0usize;
            for (i, &v) in s.iter().enumerate().skip(1) {
                if v > s[best] {
                    best = i;
                }
            }
            out.set(col, row, best as u8);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Obstacle regions from the DEM
// ---------------------------------------------------------------------------

/// A detected enclosed region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegionInfo {
    pub id: u32,
    pub cell_count: usize,
    /// Inclusive pixel bounding box `(col_min, row_min, col_max, row_max)`.
    pub bbox: (usize, usize, usize, usize),
}

/// Region id raster (0 = no region) plus per-region metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleRegions {
    pub ids: Raster<u32>,
    pub regions: Vec<RegionInfo>,
}

impl ObstacleRegions {
    pub fn is_region(&self, col: usize, row: usize) -> bool {
        self.ids.get(col, row) != 0
    }
}

/// Default number of morphological closing iterations.
pub const DEFAULT_CLOSING_ITERATIONS: usize = 2;

fn dilate(mask: &mut Vec<bool>, w: usize, h: usize) {
    let src = mask.clone();
    for row in 0..h {
        for col in 0..w {
            if src[row * w + col] {
                continue;
            }
            'scan: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (c, r) = (col as i64 + dc, row as i64 + dr);
                    if c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h
                        && src[r as usize * w + c as usize]
                    {
                        mask[row * w + col] = true;
                        break 'scan;
                    }
                }
            }
        }
    }
}

fn erode(mask: &mut Vec<bool>, w: usize, h: usize) {
    let src = mask.clone();
    for row in 0..h {
        for col in 0..w {
            if !src[row * w + col] {
                continue;
            }
            'scan: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (c, r) = (col as i64 + dc, row as i64 + dr);
                    // cells beyond the border count as foreground so that a
                    // mask touching the border keeps touching it
                    if !(c >= 0 && r >= 0 && (c as usize) < w && (r as usize) < h) {
                        continue;
                    }
                    if !src[r as usize * w + c as usize] {
                        mask[row * w + col] = false;
                        break 'scan;
                    }
                }
            }
        }
    }
}

/// Find enclosed obstacle regions in a DEM: threshold the gradient magnitude
/// (`tau`, or mean + 2 sigma when `None`), close the mask morphologically,
/// flood the background in from the border, and keep the 4-connected
/// components that the flood cannot reach. Components touching the border
/// are dropped, so a gradient band that runs off the raster encloses nothing.
pub fn detect_obstacle_regions(
    dem: &Raster<f64>,
    tau: Option<f64>,
    closing_iterations: usize,
) -> Result<ObstacleRegions, SegError> {
    let grad = gradient_magnitude(dem)?;
    let (w, h) = (grad.width(), grad.height());

    let valid: Vec<f64> = grad
        .cells()
        .iter()
        .copied()
        .filter(|&v| !grad.is_nodata_value(v) && !v.is_nan())
        .collect();
    let tau = tau.unwrap_or_else(|| {
        if valid.is_empty() {
            return f64::INFINITY;
        }
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        let var = valid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / valid.len() as f64;
        mean + 2.0 * var.sqrt()
    });

    let mut mask: Vec<bool> = grad
        .cells()
        .iter()
        .map(|&v| !grad.is_nodata_value(v) && !v.is_nan() && v > tau)
        .collect();
    for _ in 0..closing_iterations {
        dilate(&mut mask, w, h);
    }
    for _ in 0..closing_iterations {
        erode(&mut mask, w, h);
    }

    // flood fill the background from every open border cell, 4-connected
    let mut background = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |c: usize, r: usize, background: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
        let i = r * w + c;
        if !mask[i] && !background[i] {
            background[i] = true;
            queue.push_back((c, r));
        }
    };
    for c in 0..w {
        seed(c, 0, &mut background, &mut queue);
        seed(c, h - 1, &mut background, &mut queue);
    }
    for r in 0..h {
        seed(0, r, &mut background, &mut queue);
        seed(w - 1, r, &mut background, &mut queue);
    }
    while let Some((c, r)) = queue.pop_front() {
        for (dc, dr) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nc, nr) = (c as i64 + dc, r as i64 + dr);
            if nc < 0 || nr < 0 || nc as usize >= w || nr as usize >= h {
                continue;
            }
            let i = nr as usize * w + nc as usize;
            if !mask[i] && !background[i] {
                background[i] = true;
                queue.push_back((nc as usize, nr as usize));
            }
        }
    }

    // 4-connected components of everything the flood could not reach
    let mut ids = Raster::filled(w, h, 0u32, dem.transform);
    let mut regions = Vec::new();
    let mut next_id = 1u32;
    let mut component = Vec::new();
    for start_r in 0..h {
        for start_c in 0..w {
            let i0 = start_r * w + start_c;
            if background[i0] || ids.get(start_c, start_r) != 0 {
                continue;
            }
            component.clear();
            let mut touches_border = false;
            let mut stack = vec![(start_c, start_r)];
            ids.set(start_c, start_r, next_id);
            while let Some((c, r)) = stack.pop() {
                if c == 0 || r == 0 || c == w - 1 || r == h - 1 {
                    touches_border = true;
                }
                component.push((c, r));
                for (dc, dr) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                    if nc < 0 || nr < 0 || nc as usize >= w || nr as usize >= h {
                        continue;
                    }
                    let (nc, nr) = (nc as usize, nr as usize);
                    if !background[nr * w + nc] && ids.get(nc, nr) == 0 {
                        ids.set(nc, nr, next_id);
                        stack.push((nc, nr));
                    }
                }
            }
            if touches_border {
                for &(c, r) in &component {
                    ids.set(c, r, 0);
                }
                continue;
            }
            let mut bbox = (usize::MAX, usize::MAX, 0usize, 0usize);
            for &(c, r) in &component {
                bbox.0 = bbox.0.min(c);
                bbox.1 = bbox.1.min(r);
                bbox.2 = bbox.2.max(c);
                bbox.3 = bbox.3.max(r);
            }
            regions.push(RegionInfo {
                id: next_id,
                cell_count: component.len(),
                bbox,
            });
            next_id += 1;
        }
    }
    // ids must stay dense from 1: renumber after border drops
    if regions.iter().enumerate().any(|(i, r)| r.id != i as u32 + 1) {
        let mut remap = std::collections::HashMap::new();
        for (i, r) in regions.iter_mut().enumerate() {
            remap.insert(r.id, i as u32 + 1);
            r.id = i as u32 + 1;
        }
        for row in 0..h {
            for col in 0..w {
                let id = ids.get(col, row);
                if id != 0 {
                    ids.set(col, row, remap[&id]);
                }
            }
        }
    }
    Ok(ObstacleRegions { ids, regions })
}

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

fn check_coregistered(
    aw: usize,
    ah: usize,
    bw: usize,
    bh: usize,
    what: &str,
) -> Result<(), SegError> {
    if aw != bw || ah != bh {
        return Err(SegError::NotCoregistered(format!(
            "{what}: {aw}x{ah} vs {bw}x{bh}"
        )));
    }
    Ok(())
}

/// Reassign traversable-labeled pixels inside each detected region to the
/// region's mode of the per-pixel most-likely non-traversable category.
/// Pixels outside regions, and non-traversable pixels anywhere, never change.
pub fn refine_with_dem(
    labels: &LabelRaster,
    unaries: &UnaryRaster,
    regions: &ObstacleRegions,
) -> Result<LabelRaster, SegError> {
    check_coregistered(labels.width(), labels.height(), unaries.width(), unaries.height(), "labels vs unaries")?;
    check_coregistered(
        labels.width(),
        labels.height(),
        regions.ids.width(),
        regions.ids.height(),
        "labels vs regions",
    )?;
    validate_labels(labels)?;

    let mut out = labels.clone();
    if regions.regions.is_empty() {
        return Ok(out);
    }

    // most likely non-traversable category per region: mode over the
    // per-pixel restricted argmax, ties to the lowest code
    let nregions = regions.regions.len();
    let mut tallies = vec![[0usize; LABEL_COUNT]; nregions + 1];
    for row in 0..labels.height() {
        for col in 0..labels.width() {
            let id = regions.ids.get(col, row) as usize;
            if id == 0 {
                continue;
            }
            let s = unaries.get(col, row);
            let mut best = Label::NON_TRAVERSABLE[0];
            for &cand in &Label::NON_TRAVERSABLE[1..] {
                if s[cand.code() as usize] > s[best.code() as usize] {
                    best = cand;
                }
            }
            tallies[id][best.code() as usize] += 1;
        }
    }
    let mut region_mode = vec![Label::Vehicle; nregions + 1];
    for (id, tally) in tallies.iter().enumerate().skip(1) {
        let mut best = Label::NON_TRAVERSABLE[0];
        for &cand in &Label::NON_TRAVERSABLE[1..] {
            if tally[cand.code() as usize] > tally[best.code() as usize] {
                best = cand;
            }
        }
        region_mode[id] = best;
    }

    for row in 0..labels.height() {
        for col in 0..labels.width() {
            let id = regions.ids.get(col, row) as usize;
            if id == 0 {
                continue;
            }
            let v = labels.get(col, row);
            if labels.is_nodata_value(v) {
                continue;
            }
            if Label::from_code(v).is_some_and(Label::traversable) {
                out.set(col, row, region_mode[id].code());
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Per-category precision/recall. A metric is `None` when its denominator is
/// zero (no predictions, or no truth pixels, of that category).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

/// Full evaluation of a predicted label raster against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegMetrics {
    pub per_category: Vec<CategoryMetrics>,
    pub global_accuracy: f64,
    /// Mean of the defined per-category recalls.
    pub average_recall: f64,
    /// `confusion[truth][prediction]`, row-major.
    pub confusion: [[u64; LABEL_COUNT]; LABEL_COUNT],
    pub pixels: u64,
}

impl SegMetrics {
    pub fn recall_of(&self, label: Label) -> Option<f64> {
        self.per_category[label.code() as usize].recall
    }

    pub fn precision_of(&self, label: Label) -> Option<f64> {
        self.per_category[label.code() as usize].precision
    }
}

/// Confusion matrix, per-category precision/recall, global accuracy and
/// average recall. Pixels that are nodata in either raster are excluded.
pub fn precision_recall(pred: &LabelRaster, truth: &LabelRaster) -> Result<SegMetrics, SegError> {
    check_coregistered(pred.width(), pred.height(), truth.width(), truth.height(), "pred vs truth")?;
    validate_labels(pred)?;
    validate_labels(truth)?;

    let mut confusion = [[0u64; LABEL_COUNT]; LABEL_COUNT];
    let mut pixels = 0u64;
    for row in 0..truth.height() {
        for col in 0..truth.width() {
            let t = truth.get(col, row);
            let p = pred.get(col, row);
            if truth.is_nodata_value(t) || pred.is_nodata_value(p) {
                continue;
            }
            confusion[t as usize][p as usize] += 1;
            pixels += 1;
        }
    }

    let mut per_category = Vec::with_capacity(LABEL_COUNT);
    let mut correct = 0u64;
    let mut recall_sum = 0.0;
    let mut recall_n = 0usize;
    for c in 0..LABEL_COUNT {
        let tp = confusion[c][c];
        let truth_total: u64 = confusion[c].iter().sum();
        let pred_total: u64 = (0..LABEL_COUNT).map(|t| confusion[t][c]).sum();
        let fp = pred_total - tp;
        let fn_ = truth_total - tp;
        let precision = (pred_total > 0).then(|| tp as f64 / pred_total as f64);
        let recall = (truth_total > 0).then(|| tp as f64 / truth_total as f64);
        if let Some(r) = recall {
            recall_sum += r;
            recall_n += 1;
        }
        correct += tp;
        per_category.push(CategoryMetrics {
            precision,
            recall,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        });
    }
    Ok(SegMetrics {
        per_category,
        global_accuracy: if pixels > 0 {
            correct as f64 / pixels as f64
        } else {
            0.0
        },
        average_recall: if recall_n > 0 {
            recall_sum / recall_n as f64
        } else {
            0.0
        },
        confusion,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoTransform;

    fn unit() -> GeoTransform {
        GeoTransform::identity()
    }

    fn label_raster(w: usize, h: usize, fill: Label) -> LabelRaster {
        Raster::filled(w, h, fill.code(), unit())
    }

    #[test]
    fn zero_noise_reproduces_truth() {
        let mut truth = label_raster(16, 12, Label::Grass);
        truth.set(3, 4, Label::Building.code());
        truth.set(10, 2, Label::Road.code());
        let mut rng = crate::mission_rng(1);
        let u = synth_unaries(&truth, 0.0, &ConfuserMap::scene_default(), &mut rng).unwrap();
        assert_eq!(argmax_labels(&u), truth);
    }

    #[test]
    fn full_noise_uniform_confusers_is_chance_level() {
        let truth = label_raster(64, 64, Label::Road);
        let mut rng = crate::mission_rng(7);
        let u = synth_unaries(&truth, 1.0, &ConfuserMap::uniform(), &mut rng).unwrap();
        let pred = argmax_labels(&u);
        let metrics = precision_recall(&pred, &truth).unwrap();
        // chance level 1/6 with a generous Monte-Carlo band over 4096 pixels
        let acc = metrics.global_accuracy;
        assert!((acc - 1.0 / 6.0).abs() < 0.03, "accuracy {acc}");
    }

    #[test]
    fn building_confusers_depress_building_recall() {
        let mut truth = label_raster(48, 48, Label::Road);
        for row in 10..30 {
            for col in 10..30 {
                truth.set(col, row, Label::Building.code());
            }
        }
        let mut rng = crate::mission_rng(3);
        let u = synth_unaries(&truth, 0.55, &ConfuserMap::scene_default(), &mut rng).unwrap();
        let pred = argmax_labels(&u);
        let metrics = precision_recall(&pred, &truth).unwrap();
        let building = metrics.recall_of(Label::Building).unwrap();
        let road = metrics.recall_of(Label::Road).unwrap();
        assert!(building < road, "building {building} vs road {road}");
        assert!(building < 0.6);
    }

    #[test]
    fn argmax_tie_picks_lowest_code() {
        let mut scores = vec![[1.0 / 6.0; LABEL_COUNT]];
        scores[0] = {
            let mut s = [0.0; LABEL_COUNT];
            s[Label::Grass.code() as usize] = 0.5;
            s[Label::Vehicle.code() as usize] = 0.5;
            s
        };
        let u = UnaryRaster::new(1, 1, unit(), scores).unwrap();
        assert_eq!(argmax_labels(&u).get(0, 0), Label::Grass.code());

        let one_hot = {
            let mut s = [0.0; LABEL_COUNT];
            s[Label::Shadow.code() as usize] = 1.0;
            s
        };
        let u = UnaryRaster::new(1, 1, unit(), vec![one_hot]).unwrap();
        assert_eq!(argmax_labels(&u).get(0, 0), Label::Shadow.code());
    }

    #[test]
    fn argmax_matches_brute_force_oracle() {
        let mut rng = crate::mission_rng(15);
        let truth = label_raster(20, 20, Label::Grass);
        let u = synth_unaries(&truth, 0.9, &ConfuserMap::uniform(), &mut rng).unwrap();
        let pred = argmax_labels(&u);
        for row in 0..20 {
            for col in 0..20 {
                let s = u.get(col, row);
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for (i, &v) in s.iter().enumerate() {
                    if v > best_v {
                        best_v = v;
                        best = i;
                    }
                }
                assert_eq!(pred.get(col, row) as usize, best);
            }
        }
    }

    fn flat_dem(w: usize, h: usize) -> Raster<f64> {
        Raster::filled(w, h, 2.0, unit())
    }

    #[test]
    fn flat_dem_has_no_regions() {
        let regions = detect_obstacle_regions(&flat_dem(20, 20), None, 2).unwrap();
        assert!(regions.regions.is_empty());
        assert!(regions.ids.cells().iter().all(|&v| v == 0));
    }

    #[test]
    fn raised_box_becomes_one_region() {
        let mut dem = flat_dem(40, 40);
        for row in 15..25 {
            for col in 15..25 {
                dem.set(col, row, 4.0);
            }
        }
        let regions = detect_obstacle_regions(&dem, Some(0.5), 2).unwrap();
        assert_eq!(regions.regions.len(), 1, "{:?}", regions.regions);
        // the region covers the box give or take a one-cell boundary band
        let info = &regions.regions[0];
        assert!(info.bbox.0 >= 12 && info.bbox.1 >= 12);
        assert!(info.bbox.2 <= 27 && info.bbox.3 <= 27);
        for row in 16..24 {
            for col in 16..24 {
                assert!(regions.is_region(col, row), "interior cell {col},{row}");
            }
        }
        // flood-fill oracle: everything outside the band stays region-free
        assert!(!regions.is_region(2, 2));
        assert!(!regions.is_region(35, 20));
    }

    #[test]
    fn ramp_spanning_raster_encloses_nothing() {
        let mut dem = flat_dem(30, 30);
        for row in 0..30 {
            for col in 0..30 {
                dem.set(col, row, 2.0 * col as f64);
            }
        }
        let regions = detect_obstacle_regions(&dem, Some(0.5), 2).unwrap();
        assert!(regions.regions.is_empty());
    }

    #[test]
    fn regions_never_touch_the_border() {
        let mut dem = flat_dem(24, 24);
        // high box pushed against the border
        for row in 0..8 {
            for col in 0..8 {
                dem.set(col, row, 5.0);
            }
        }
        // and one interior box
        for row in 14..19 {
            for col in 14..19 {
                dem.set(col, row, 5.0);
            }
        }
        let regions = detect_obstacle_regions(&dem, Some(0.5), 1).unwrap();
        for info in &regions.regions {
            assert!(info.bbox.0 > 0 && info.bbox.1 > 0);
            assert!(info.bbox.2 < 23 && info.bbox.3 < 23);
        }
        assert!(regions.regions.iter().all(|r| r.id >= 1));
        let ids: Vec<u32> = regions.regions.iter().map(|r| r.id).collect();
        assert_eq!(ids, (1..=ids.len() as u32).collect::<Vec<_>>());
    }

    #[test]
    fn refine_without_regions_is_identity() {
        let labels = label_raster(10, 10, Label::Grass);
        let mut rng = crate::mission_rng(2);
        let u = synth_unaries(&labels, 0.2, &ConfuserMap::uniform(), &mut rng).unwrap();
        let regions = detect_obstacle_regions(&flat_dem(10, 10), None, 2).unwrap();
        let refined = refine_with_dem(&labels, &u, &regions).unwrap();
        assert_eq!(refined, labels);
    }

    #[test]
    fn refine_reassigns_only_traversable_pixels_inside_regions() {
        let w = 40;
        let h = 40;
        // truth: building block in a grass field
        let mut truth = label_raster(w, h, Label::Grass);
        let mut dem = flat_dem(w, h);
        for row in 15..25 {
            for col in 15..25 {
                truth.set(col, row, Label::Building.code());
                dem.set(col, row, 5.0);
            }
        }
        // 2D labels miss the building: everything grass except one vehicle px
        let mut labels2d = label_raster(w, h, Label::Grass);
        labels2d.set(2, 2, Label::Vehicle.code());
        // unaries rank building highest among non-traversable inside the box
        let mut rng = crate::mission_rng(4);
        let u = synth_unaries(&truth, 0.4, &ConfuserMap::scene_default(), &mut rng).unwrap();
        let regions = detect_obstacle_regions(&dem, Some(0.5), 2).unwrap();
        assert_eq!(regions.regions.len(), 1);
        let refined = refine_with_dem(&labels2d, &u, &regions).unwrap();

        let mut changed_outside = 0;
        let mut changed_nontraversable = 0;
        for row in 0..h {
            for col in 0..w {
                let before = labels2d.get(col, row);
                let after = refined.get(col, row);
                if before != after {
                    if !regions.is_region(col, row) {
                        changed_outside += 1;
                    }
                    if !Label::from_code(before).unwrap().traversable() {
                        changed_nontraversable += 1;
                    }
                }
            }
        }
        assert_eq!(changed_outside, 0);
        assert_eq!(changed_nontraversable, 0);
        // the box interior flipped to building
        for row in 16..24 {
            for col in 16..24 {
                assert_eq!(refined.get(col, row), Label::Building.code());
            }
        }
        // untouched vehicle pixel far from the region
        assert_eq!(refined.get(2, 2), Label::Vehicle.code());
    }

    #[test]
    fn refine_leaves_nontraversable_regions_alone() {
        let labels = label_raster(20, 20, Label::Vehicle);
        let mut dem = flat_dem(20, 20);
        for row in 8..13 {
            for col in 8..13 {
                dem.set(col, row, 6.0);
            }
        }
        let mut rng = crate::mission_rng(5);
        let u = synth_unaries(&labels, 0.3, &ConfuserMap::uniform(), &mut rng).unwrap();
        let regions = detect_obstacle_regions(&dem, Some(0.5), 1).unwrap();
        assert!(!regions.regions.is_empty());
        let refined = refine_with_dem(&labels, &u, &regions).unwrap();
        assert_eq!(refined, labels);
    }

    #[test]
    fn metrics_perfect_prediction() {
        let mut truth = label_raster(12, 12, Label::Grass);
        truth.set(0, 0, Label::Road.code());
        truth.set(5, 5, Label::Shadow.code());
        let m = precision_recall(&truth, &truth).unwrap();
        assert_eq!(m.global_accuracy, 1.0);
        assert_eq!(m.average_recall, 1.0);
        for c in 0..LABEL_COUNT {
            for p in 0..LABEL_COUNT {
                if c != p {
                    assert_eq!(m.confusion[c][p], 0);
                }
            }
        }
    }

    #[test]
    fn metrics_constant_prediction_hand_count() {
        // truth: left half road, right half grass; prediction: all road
        let mut truth = label_raster(10, 4, Label::Road);
        for row in 0..4 {
            for col in 5..10 {
                truth.set(col, row, Label::Grass.code());
            }
        }
        let pred = label_raster(10, 4, Label::Road);
        let m = precision_recall(&pred, &truth).unwrap();
        assert_eq!(m.precision_of(Label::Road), Some(0.5));
        assert_eq!(m.recall_of(Label::Road), Some(1.0));
        assert_eq!(m.recall_of(Label::Grass), Some(0.0));
        assert_eq!(m.precision_of(Label::Grass), None);
        assert_eq!(m.global_accuracy, 0.5);
    }

    #[test]
    fn metrics_match_counting_oracle() {
        let mut rng = crate::mission_rng(9);
        let truth = {
            let mut r = label_raster(30, 30, Label::Road);
            for row in 0..30 {
                for col in 0..30 {
                    r.set(col, row, rng.gen_range(0u8..6));
                }
            }
            r
        };
        let pred = {
            let mut r = label_raster(30, 30, Label::Road);
            for row in 0..30 {
                for col in 0..30 {
                    r.set(col, row, rng.gen_range(0u8..6));
                }
            }
            r
        };
        let m = precision_recall(&pred, &truth).unwrap();
        let total: u64 = m.confusion.iter().flatten().sum();
        assert_eq!(total, 900);
        assert_eq!(m.pixels, 900);
        for c in 0..LABEL_COUNT {
            let truth_count = truth
                .cells()
                .iter()
                .filter(|&&v| v as usize == c)
                .count() as u64;
            let pred_count = pred.cells().iter().filter(|&&v| v as usize == c).count() as u64;
            let cm = &m.per_category[c];
            assert_eq!(cm.true_positives + cm.false_negatives, truth_count);
            assert_eq!(cm.true_positives + cm.false_positives, pred_count);
        }
    }

    #[test]
    fn unary_grids_round_trip() {
        let dir = std::env::temp_dir().join("radsearch-seg-test");
        fs::create_dir_all(&dir).unwrap();
        let truth = label_raster(9, 7, Label::Grass);
        let mut rng = crate::mission_rng(6);
        let u = synth_unaries(&truth, 0.5, &ConfuserMap::uniform(), &mut rng).unwrap();
        u.write_grids(&dir).unwrap();
        let back = UnaryRaster::read_grids(&dir).unwrap();
        assert_eq!(back.width(), 9);
        for row in 0..7 {
            for col in 0..9 {
                let a = u.get(col, row);
                let b = back.get(col, row);
                for ch in 0..LABEL_COUNT {
                    assert!((a[ch] - b[ch]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn noise_level_validation() {
        let truth = label_raster(2, 2, Label::Road);
        let mut rng = crate::mission_rng(1);
        assert!(matches!(
            synth_unaries(&truth, 1.5, &ConfuserMap::uniform(), &mut rng),
            Err(SegError::BadNoiseLevel(_))
        ));
        assert!(matches!(
            synth_unaries(&truth, -0.1, &ConfuserMap::uniform(), &mut rng),
            Err(SegError::BadNoiseLevel(_))
        ));
    }
}
