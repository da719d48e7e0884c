//! Synthetic test-area generator: a farm-like scene with a ring road and
//! entry spur, buildings with shadow bands, vehicles, vegetation patches, a
//! gently undulating DEM, a colored orthophoto and a default source layout.
//! Everything derives deterministically from the seed.

use std::path::Path;

use rand::Rng;
use radsearch_core::geo::{GeoTransform, Raster, Rgb};
use radsearch_core::radiation::{sources, RadSource};
use radsearch_core::segmentation::{
    synth_unaries, ConfuserMap, Label, LabelRaster, UnaryRaster,
};
use radsearch_core::MissionRng;
use serde::Serialize;

use crate::config::SceneConfig;
use crate::error::CliError;

/// Everything the generator produces before it is written to disk.
pub struct GeneratedScene {
    pub dem: Raster<f64>,
    pub labels: LabelRaster,
    pub ortho: Raster<Rgb>,
    pub unaries: UnaryRaster,
    pub sources: Vec<RadSource>,
    pub truth: TruthMeta,
}

/// Scene metadata written as truth.json.
#[derive(Debug, Serialize)]
pub struct TruthMeta {
    pub schema: String,
    pub seed: u64,
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_size: f64,
    pub category_cells: Vec<(String, usize)>,
    pub road_components: usize,
    pub objects: Vec<SceneObject>,
    pub source_position: [f64; 3],
}

#[derive(Debug, Serialize)]
pub struct SceneObject {
    pub kind: String,
    /// Pixel bounding box (col_min, row_min, col_max, row_max), inclusive.
    pub bbox: [usize; 4],
    pub height_m: f64,
}

/// Palette used for the orthophoto and for report overlays.
pub fn label_color(label: Label) -> [u8; 3] {
    match label {
        Label::Road => [92, 92, 98],
        Label::Grass => [88, 148, 66],
        Label::Vehicle => [178, 40, 36],
        Label::Building => [158, 126, 98],
        Label::Vegetation => [34, 96, 40],
        Label::Shadow => [38, 38, 52],
    }
}

struct Painter {
    labels: LabelRaster,
    dem: Raster<f64>,
    objects: Vec<SceneObject>,
}

impl Painter {
    fn fill_rect(
        &mut self,
        c0: usize,
        r0: usize,
        c1: usize,
        r1: usize,
        label: Label,
        raise: f64,
    ) {
        let c1 = c1.min(self.labels.width() - 1);
        let r1 = r1.min(self.labels.height() - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                self.labels.set(c, r, label.code());
                if raise != 0.0 {
                    let v = self.dem.get(c, r);
                    self.dem.set(c, r, v + raise);
                }
            }
        }
        if raise != 0.0 || !label.traversable() {
            self.objects.push(SceneObject {
                kind: label.name().to_string(),
                bbox: [c0, r0, c1, r1],
                height_m: raise,
            });
        }
    }

    /// Paint a label only over grass cells (shadows must not sever roads).
    fn stain_rect(&mut self, c0: usize, r0: usize, c1: usize, r1: usize, label: Label) {
        let c1 = c1.min(self.labels.width() - 1);
        let r1 = r1.min(self.labels.height() - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                if self.labels.get(c, r) == Label::Grass.code() {
                    self.labels.set(c, r, label.code());
                }
            }
        }
        self.objects.push(SceneObject {
            kind: label.name().to_string(),
            bbox: [c0, r0, c1, r1],
            height_m: 0.0,
        });
    }

    fn fill_disc(&mut self, cc: usize, cr: usize, radius: usize, label: Label, raise: f64) {
        let rad = radius as i64;
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                if dc * dc + dr * dr > rad * rad {
                    continue;
                }
                let (c, r) = (cc as i64 + dc, cr as i64 + dr);
                if self.labels.in_bounds(c, r) && self.labels.get(c as usize, r as usize) == Label::Grass.code()
                {
                    self.labels.set(c as usize, r as usize, label.code());
                    if raise != 0.0 {
                        let v = self.dem.get(c as usize, r as usize);
                        self.dem.set(c as usize, r as usize, v + raise);
                    }
                }
            }
        }
        self.objects.push(SceneObject {
            kind: label.name().to_string(),
            bbox: [
                cc.saturating_sub(radius),
                cr.saturating_sub(radius),
                cc + radius,
                cr + radius,
            ],
            height_m: raise,
        });
    }
}

/// Count 4-connected components of the road label.
pub fn road_components(labels: &LabelRaster) -> usize {
    let (w, h) = (labels.width(), labels.height());
    let mut seen = vec![false; w * h];
    let mut components = 0;
    for start in 0..w * h {
        if seen[start] || labels.cells()[start] != Label::Road.code() {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (c, r) = (i % w, i / w);
            for (dc, dr) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                if nc < 0 || nr < 0 || nc as usize >= w || nr as usize >= h {
                    continue;
                }
                let ni = nr as usize * w + nc as usize;
                if !seen[ni] && labels.cells()[ni] == Label::Road.code() {
                    seen[ni] = true;
                    stack.push(ni);
                }
            }
        }
    }
    components
}

/// Generate the scene. The layout is a ring road with a western entry spur,
/// two buildings (with shadow bands) inside the courtyard quadrants, parked
/// vehicles on and off the road, and vegetation discs in the open grass.
pub fn generate(cfg: &SceneConfig, seed: u64, rng: &mut MissionRng) -> Result<GeneratedScene, CliError> {
    let (w, h) = (cfg.width_px, cfg.height_px);
    if w < 60 || h < 60 {
        return Err(CliError::config(format!(
            "scene must be at least 60x60 pixels, got {w}x{h}"
        )));
    }
    let ps = cfg.pixel_size;
    let gt = GeoTransform::new(0.5 * ps, 0.5 * ps, ps)
        .map_err(|e| CliError::config(e.to_string()))?;

    // gently undulating ground
    let mut dem = Raster::filled(w, h, 0.0, gt).with_nodata(Some(-9999.0));
    for r in 0..h {
        for c in 0..w {
            let (x, y) = dem.cell_center(c, r);
            let z = 0.6 + 0.004 * x + 0.002 * y + 0.25 * (x / 17.0).sin() * (y / 23.0).cos();
            dem.set(c, r, z);
        }
    }

    let labels = Raster::filled(w, h, Label::Grass.code(), gt);
    let mut p = Painter {
        labels,
        dem,
        objects: Vec::new(),
    };

    // ring road with a western entry spur
    let road_w = 8usize;
    let margin = (w.min(h) as f64 * 0.16) as usize;
    let (left, right) = (margin, w - 1 - margin);
    let (bottom, top) = (margin, h - 1 - margin);
    p.fill_rect(left, bottom, right, bottom + road_w - 1, Label::Road, 0.0);
    p.fill_rect(left, top + 1 - road_w, right, top, Label::Road, 0.0);
    p.fill_rect(left, bottom, left + road_w - 1, top, Label::Road, 0.0);
    p.fill_rect(right + 1 - road_w, bottom, right, top, Label::Road, 0.0);
    let spur_mid = h / 2;
    p.fill_rect(0, spur_mid - road_w / 2, left, spur_mid + road_w / 2, Label::Road, 0.0);
    p.objects.clear(); // roads are layout, not objects

    // two buildings in opposite courtyard quadrants, shadows to their east
    let yard_l = left + road_w + 3;
    let yard_b = bottom + road_w + 3;
    let yard_r = right - road_w - 3;
    let yard_t = top - road_w - 3;
    let yard_w = yard_r.saturating_sub(yard_l);
    let yard_h = yard_t.saturating_sub(yard_b);
    let building_at = |p: &mut Painter, c0: usize, r0: usize, rng: &mut MissionRng| {
        let bw = rng.gen_range(10..15);
        let bh = rng.gen_range(8..13);
        let height = rng.gen_range(5.0..7.5);
        p.fill_rect(c0, r0, c0 + bw, r0 + bh, Label::Building, height);
        // shadow band cast east of the building
        let sc0 = c0 + bw + 1;
        p.stain_rect(sc0, r0, sc0 + bw / 2, r0 + bh, Label::Shadow);
    };
    building_at(&mut p, yard_l + yard_w / 6, yard_b + yard_h / 6, rng);
    building_at(&mut p, yard_l + yard_w / 2, yard_b + (2 * yard_h) / 3, rng);

    // vehicles: two parked on the ring road, one in the grass
    let south_road_r = bottom + road_w / 2;
    let vc = left + (right - left) / 3;
    p.fill_rect(vc, south_road_r - 1, vc + 4, south_road_r + 1, Label::Vehicle, 1.6);
    let east_road_c = right - road_w / 2;
    let vr = bottom + (top - bottom) / 3;
    p.fill_rect(east_road_c - 1, vr, east_road_c + 1, vr + 4, Label::Vehicle, 1.6);
    p.fill_rect(yard_l + yard_w / 8, yard_b + (3 * yard_h) / 5, yard_l + yard_w / 8 + 4, yard_b + (3 * yard_h) / 5 + 2, Label::Vehicle, 1.7);

    // vegetation discs scattered in the grass
    for _ in 0..4 {
        let cc = rng.gen_range(6..w - 6);
        let cr = rng.gen_range(6..h - 6);
        let radius = rng.gen_range(3..6);
        p.fill_disc(cc, cr, radius, Label::Vegetation, rng.gen_range(2.0..3.5));
    }

    let Painter {
        labels,
        dem,
        objects,
    } = p;

    // orthophoto: palette colors with per-pixel jitter
    let mut ortho = Raster::filled(w, h, Rgb([0, 0, 0]), gt);
    for r in 0..h {
        for c in 0..w {
            let label = Label::from_code(labels.get(c, r)).expect("painted label");
            let base = label_color(label);
            let mut px = [0u8; 3];
            for (i, chan) in base.iter().enumerate() {
                let jitter = rng.gen_range(-12i16..=12);
                px[i] = (*chan as i16 + jitter).clamp(0, 255) as u8;
            }
            ortho.set(c, r, Rgb(px));
        }
    }

    // per-pixel category scores standing in for the learned classifier
    let unaries = synth_unaries(&labels, cfg.unary_noise, &ConfuserMap::scene_default(), rng)?;

    // default sources: the four-source stack on grass inside the courtyard
    let src_c = yard_l + (4 * yard_w) / 5;
    let src_r = yard_b + yard_h / 5;
    let (sx, sy) = labels.cell_center(src_c, src_r);
    let source_position = [sx, sy, 1.0];
    let srcs = sources::colocated_four(source_position);

    let mut category_cells: Vec<(String, usize)> = Label::ALL
        .iter()
        .map(|&l| {
            let n = labels.cells().iter().filter(|&&v| v == l.code()).count();
            (l.name().to_string(), n)
        })
        .collect();
    category_cells.sort();

    let truth = TruthMeta {
        schema: "scene/1".to_string(),
        seed,
        width_px: w,
        height_px: h,
        pixel_size: ps,
        category_cells,
        road_components: road_components(&labels),
        objects,
        source_position,
    };

    Ok(GeneratedScene {
        dem,
        labels,
        ortho,
        unaries,
        sources: srcs,
        truth,
    })
}

/// File names a generated scene is written under.
pub struct ScenePaths {
    pub dem: std::path::PathBuf,
    pub labels: std::path::PathBuf,
    pub ortho: std::path::PathBuf,
    pub legend: std::path::PathBuf,
    pub sources: std::path::PathBuf,
    pub truth: std::path::PathBuf,
}

impl ScenePaths {
    pub fn in_dir(dir: &Path) -> Self {
        ScenePaths {
            dem: dir.join("dem.asc"),
            labels: dir.join("labels.asc"),
            ortho: dir.join("ortho.ppm"),
            legend: dir.join("legend.json"),
            sources: dir.join("sources.json"),
            truth: dir.join("truth.json"),
        }
    }
}

/// Write a label raster as an ASCII grid of integer codes.
pub fn write_labels(path: &Path, labels: &LabelRaster) -> Result<(), CliError> {
    let mut as_f64 = Raster::filled(labels.width(), labels.height(), 0.0, labels.transform)
        .with_nodata(Some(-9999.0));
    for r in 0..labels.height() {
        for c in 0..labels.width() {
            let v = labels.get(c, r);
            if labels.is_nodata_value(v) {
                as_f64.set(c, r, -9999.0);
            } else {
                as_f64.set(c, r, v as f64);
            }
        }
    }
    radsearch_core::geo::write_ascii_grid(path, &as_f64)?;
    Ok(())
}

/// Read a label raster written by [`write_labels`], validating codes.
pub fn read_labels(path: &Path) -> Result<LabelRaster, CliError> {
    let grid = radsearch_core::geo::read_ascii_grid(path)?;
    let mut labels = Raster::filled(grid.width(), grid.height(), 0u8, grid.transform)
        .with_nodata(Some(255));
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            let v = grid.get(c, r);
            if grid.is_nodata_value(v) {
                labels.set(c, r, 255);
                continue;
            }
            let code = v.round();
            if (code - v).abs() > 1e-9 || !(0.0..6.0).contains(&code) {
                return Err(CliError::Format(format!(
                    "{}: cell ({c}, {r}) holds {v}, not a category code",
                    path.display()
                )));
            }
            labels.set(c, r, code as u8);
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SceneConfig;

    fn gen(seed: u64) -> GeneratedScene {
        let cfg = SceneConfig::default();
        let mut rng = radsearch_core::mission_rng(seed);
        generate(&cfg, seed, &mut rng).unwrap()
    }

    #[test]
    fn scene_contains_all_six_categories() {
        let s = gen(42);
        for l in Label::ALL {
            let n = s
                .labels
                .cells()
                .iter()
                .filter(|&&v| v == l.code())
                .count();
            assert!(n > 0, "category {} missing", l.name());
        }
    }

    #[test]
    fn road_is_one_connected_component() {
        for seed in [1u64, 7, 42, 1234] {
            let s = gen(seed);
            assert_eq!(road_components(&s.labels), 1, "seed {seed}");
            assert_eq!(s.truth.road_components, 1);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen(99);
        let b = gen(99);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.dem, b.dem);
        assert_eq!(a.ortho, b.ortho);
        let c = gen(100);
        assert!(c.ortho != a.ortho);
    }

    #[test]
    fn buildings_are_raised_and_shadows_flat() {
        let s = gen(5);
        let mut building_min = f64::INFINITY;
        let mut shadow_max = f64::NEG_INFINITY;
        let mut grass_max = f64::NEG_INFINITY;
        for r in 0..s.labels.height() {
            for c in 0..s.labels.width() {
                let z = s.dem.get(c, r);
                match Label::from_code(s.labels.get(c, r)).unwrap() {
                    Label::Building => building_min = building_min.min(z),
                    Label::Shadow => shadow_max = shadow_max.max(z),
                    Label::Grass => grass_max = grass_max.max(z),
                    _ => {}
                }
            }
        }
        assert!(building_min > grass_max + 2.0);
        assert!(shadow_max <= grass_max + 1e-9);
    }

    #[test]
    fn labels_round_trip_via_ascii_grid() {
        let dir = std::env::temp_dir().join("radsearch-scene-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labels.asc");
        let s = gen(3);
        write_labels(&path, &s.labels).unwrap();
        let back = read_labels(&path).unwrap();
        assert_eq!(back.cells(), s.labels.cells());
    }
}
