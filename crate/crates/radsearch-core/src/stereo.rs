//! Stereo back-projection: calibration to reprojection matrix, disparity to
//! 3D points, and median filtering of disparity/depth rasters.
//!
//! The reprojection matrix maps homogeneous pixel-disparity vectors
//! `[x, y, d, 1]` to scaled camera-frame points `w [X, Y, Z, 1]`:
//!
//! ```text
//!     | 1  0    0     -Cx          |
//! Q = | 0  1    0     -Cy          |
//!     | 0  0    0      f           |
//!     | 0  0  -1/B   (Cx - C'x)/B  |
//! ```
//!
//! Sign convention: with the matrix written this way (positive baseline in
//! the denominators), a point in front of the rig carries a disparity of
//! `d = (Cx - C'x) - f*B/Z`, which is negative when the principal points
//! coincide. Equivalently, the disparity is `x_left - x_right` for a second
//! camera displaced along -X. The round-trip tests pin this convention; only
//! self-consistency is claimed, not agreement with any external matcher.

use rand::Rng;
use thiserror::Error;

use crate::geo::Raster;

/// Homogeneous scales below this magnitude are treated as degenerate.
pub const DEGENERATE_W_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StereoError {
    #[error("focal length must be positive, got {0}")]
    BadFocalLength(f64),
    #[error("baseline must be positive, got {0}")]
    BadBaseline(f64),
    #[error("median filter window must be odd and >= 1, got {0}")]
    BadWindow(usize),
    #[error("degenerate disparity: homogeneous scale w = {0} is below {DEGENERATE_W_EPS}")]
    DegenerateDisparity(f64),
}

/// Rectified stereo rig calibration. All pixel quantities refer to the left
/// camera except `cx_r`, the right camera's principal point x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoCalibration {
    /// Focal length in pixels.
    pub f: f64,
    /// Left principal point, pixels.
    pub cx: f64,
    pub cy: f64,
    /// Right principal point x, pixels.
    pub cx_r: f64,
    /// Baseline between the cameras in meters.
    pub baseline_b: f64,
}

impl StereoCalibration {
    pub fn new(f: f64, cx: f64, cy: f64, cx_r: f64, baseline_b: f64) -> Result<Self, StereoError> {
        if !(f > 0.0) {
            return Err(StereoError::BadFocalLength(f));
        }
        if !(baseline_b > 0.0) {
            return Err(StereoError::BadBaseline(baseline_b));
        }
        Ok(StereoCalibration {
            f,
            cx,
            cy,
            cx_r,
            baseline_b,
        })
    }

    /// The two-camera boom flown in the missions: a 1.38 m baseline.
    pub const DEFAULT_BASELINE_M: f64 = 1.38;
}

/// Disparity raster; cells equal to the nodata sentinel are unmatched pixels.
pub type DisparityImage = Raster<f64>;

/// Camera-frame point cloud with optional per-point color.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with a one-line header: `x,y,z` or `x,y,z,r,g,b`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.colors {
            Some(colors) => {
                out.push_str("x,y,z,r,g,b\n");
                for (p, c) in self.points.iter().zip(colors) {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        p[0], p[1], p[2], c[0], c[1], c[2]
                    ));
                }
            }
            None => {
                out.push_str("x,y,z\n");
                for p in &self.points {
                    out.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
                }
            }
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// Build the 4x4 reprojection matrix from a calibration.
pub fn build_q(calib: &StereoCalibration) -> [[f64; 4]; 4] {
    let b = calib.baseline_b;
    [
        [1.0, 0.0, 0.0, -calib.cx],
        [0.0, 1.0, 0.0, -calib.cy],
        [0.0, 0.0, 0.0, calib.f],
        [0.0, 0.0, -1.0 / b, (calib.cx - calib.cx_r) / b],
    ]
}

/// Apply the reprojection matrix to one pixel-disparity triple and
/// dehomogenize. Errors when the homogeneous scale is near zero.
pub fn back_project(q: &[[f64; 4]; 4], x: f64, y: f64, d: f64) -> Result<[f64; 3], StereoError> {
    let v = [x, y, d, 1.0];
    let mut h = [0.0f64; 4];
    for (row, hr) in h.iter_mut().enumerate() {
        *hr = q[row].iter().zip(&v).map(|(a, b)| a * b).sum();
    }
    let w = h[3];
    if w.abs() < DEGENERATE_W_EPS {
        return Err(StereoError::DegenerateDisparity(w));
    }
    Ok([h[0] / w, h[1] / w, h[2] / w])
}

/// Median filter over a real raster. Invalid (nodata) cells stay invalid and
/// are excluded from every window, so the filter smooths the valid field
/// without inventing values. Windows with an even count of valid values take
/// the mean of the two middle ones.
pub fn median_filter_depth(depth: &Raster<f64>, window: usize) -> Result<Raster<f64>, StereoError> {
    if window % 2 == 0 || window == 0 {
        return Err(StereoError::BadWindow(window));
    }
    if window == 1 {
        return Ok(depth.clone());
    }
    let r = (window / 2) as i64;
    let nodata = depth.nodata.unwrap_or(f64::NAN);
    let mut out = depth.clone();
    let mut vals = Vec::with_capacity(window * window);
    for row in 0..depth.height() {
        for col in 0..depth.width() {
            let center = depth.get(col, row);
            if depth.is_nodata_value(center) || center.is_nan() {
                out.set(col, row, nodata);
                continue;
            }
            vals.clear();
            for dr in -r..=r {
                for dc in -r..=r {
                    let (c, rr) = (col as i64 + dc, row as i64 + dr);
                    if depth.in_bounds(c, rr) {
                        let v = depth.get(c as usize, rr as usize);
                        if !depth.is_nodata_value(v) && !v.is_nan() {
                            vals.push(v);
                        }
                    }
                }
            }
            if vals.is_empty() {
                out.set(col, row, nodata);
                continue;
            }
            vals.sort_by(f64::total_cmp);
            let n = vals.len();
            let med = if n % 2 == 1 {
                vals[n / 2]
            } else {
                0.5 * (vals[n / 2 - 1] + vals[n / 2])
            };
            out.set(col, row, med);
        }
    }
    Ok(out)
}

/// Conversion report: how many pixels became points and what was skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CloudReport {
    pub points: usize,
    pub invalid_skipped: usize,
    pub degenerate_skipped: usize,
}

/// Median-filter a disparity image and back-project every valid pixel.
/// Degenerate pixels (near-zero homogeneous scale) are skipped and counted.
pub fn disparity_to_cloud(
    disp: &DisparityImage,
    calib: &StereoCalibration,
    median_window: usize,
) -> Result<(PointCloud, CloudReport), StereoError> {
    let filtered = median_filter_depth(disp, median_window)?;
    let q = build_q(calib);
    let mut cloud = PointCloud::default();
    let mut report = CloudReport::default();
    for row in 0..filtered.height() {
        for col in 0..filtered.width() {
            let d = filtered.get(col, row);
            if filtered.is_nodata_value(d) || d.is_nan() {
                report.invalid_skipped += 1;
                continue;
            }
            match back_project(&q, col as f64, row as f64, d) {
                Ok(p) => {
                    cloud.points.push(p);
                    report.points += 1;
                }
                Err(StereoError::DegenerateDisparity(_)) => report.degenerate_skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok((cloud, report))
}

/// Synthetic rectified projector matching the sign convention of [`build_q`]:
/// projects a camera-frame point to left-image pixels and a disparity such
/// that back-projection recovers the point exactly.
pub fn project_to_pixel_disparity(calib: &StereoCalibration, p: [f64; 3]) -> (f64, f64, f64) {
    let [x, y, z] = p;
    let xl = calib.f * x / z + calib.cx;
    let yl = calib.f * y / z + calib.cy;
    let d = (calib.cx - calib.cx_r) - calib.f * calib.baseline_b / z;
    (xl, yl, d)
}

/// Random-calibration round-trip error check used by the acceptance suite:
/// returns the maximum |back_project(project(p)) - p| over `n` draws.
pub fn round_trip_max_error(rng: &mut impl Rng, n: usize) -> f64 {
    let mut max_err = 0.0f64;
    for _ in 0..n {
        let calib = StereoCalibration::new(
            rng.gen_range(200.0..2000.0),
            rng.gen_range(-100.0..700.0),
            rng.gen_range(-100.0..700.0),
            rng.gen_range(-100.0..700.0),
            rng.gen_range(0.2..3.0),
        )
        .unwrap();
        let p = [
            rng.gen_range(-30.0..30.0),
            rng.gen_range(-30.0..30.0),
            rng.gen_range(1.0..120.0),
        ];
        let (x, y, d) = project_to_pixel_disparity(&calib, p);
        let q = build_q(&calib);
        let rec = back_project(&q, x, y, d).expect("non-degenerate by construction");
        for axis in 0..3 {
            max_err = max_err.max((rec[axis] - p[axis]).abs());
        }
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoTransform;

    fn unit_raster(width: usize, height: usize, fill: f64) -> Raster<f64> {
        Raster::filled(width, height, fill, GeoTransform::identity()).with_nodata(Some(-1e9))
    }

    #[test]
    fn q_matrix_unit_calibration() {
        let calib = StereoCalibration::new(1.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        let q = build_q(&calib);
        assert_eq!(
            q,
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [0.0, 0.0, -1.0, 0.0],
            ]
        );
    }

    #[test]
    fn q_matrix_mission_calibration() {
        let calib = StereoCalibration::new(1000.0, 320.0, 240.0, 320.0, 1.38).unwrap();
        let q = build_q(&calib);
        assert_eq!(q[3][2], -1.0 / 1.38);
        assert_eq!(q[3][3], 0.0);
        assert_eq!(q[2], [0.0, 0.0, 0.0, 1000.0]);
        assert_eq!(q[0][3], -320.0);
        assert_eq!(q[1][3], -240.0);
    }

    #[test]
    fn back_project_canonical_depth() {
        // coincident principal points, pixel at the principal point,
        // d = -100 => Z = f B / |d| = 13.8 m
        let calib = StereoCalibration::new(1000.0, 320.0, 240.0, 320.0, 1.38).unwrap();
        let q = build_q(&calib);
        let p = back_project(&q, 320.0, 240.0, -100.0).unwrap();
        assert!((p[0]).abs() < 1e-12);
        assert!((p[1]).abs() < 1e-12);
        assert!((p[2] - 13.8).abs() < 1e-9);
    }

    #[test]
    fn back_project_degenerate_w() {
        let calib = StereoCalibration::new(1000.0, 320.0, 240.0, 300.0, 1.38).unwrap();
        let q = build_q(&calib);
        // w vanishes exactly when d = cx - cx_r
        let err = back_project(&q, 10.0, 10.0, 20.0);
        assert!(matches!(err, Err(StereoError::DegenerateDisparity(_))));
    }

    #[test]
    fn projector_round_trip() {
        let calib = StereoCalibration::new(800.0, 321.5, 239.5, 318.0, 1.38).unwrap();
        let q = build_q(&calib);
        let p = [3.0, -2.0, 25.0];
        let (x, y, d) = project_to_pixel_disparity(&calib, p);
        let rec = back_project(&q, x, y, d).unwrap();
        for axis in 0..3 {
            assert!((rec[axis] - p[axis]).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_many_random() {
        let mut rng = crate::mission_rng(2024);
        assert!(round_trip_max_error(&mut rng, 500) < 1e-9);
    }

    #[test]
    fn median_window_one_is_identity() {
        let mut r = unit_raster(4, 4, 2.0);
        r.set(1, 1, 9.0);
        assert_eq!(median_filter_depth(&r, 1).unwrap(), r);
    }

    #[test]
    fn median_rejects_even_window() {
        let r = unit_raster(4, 4, 2.0);
        assert!(matches!(median_filter_depth(&r, 2), Err(StereoError::BadWindow(2))));
        assert!(matches!(median_filter_depth(&r, 0), Err(StereoError::BadWindow(0))));
    }

    #[test]
    fn median_removes_single_outlier() {
        let mut r = unit_raster(5, 5, 3.0);
        r.set(2, 2, 50.0);
        let f = median_filter_depth(&r, 3).unwrap();
        assert_eq!(f.get(2, 2), 3.0);
    }

    #[test]
    fn median_all_invalid_stays_invalid() {
        let r = unit_raster(3, 3, -1e9);
        let f = median_filter_depth(&r, 3).unwrap();
        assert!((0..3).all(|row| (0..3).all(|col| f.is_nodata(col, row))));
    }

    #[test]
    fn median_idempotent_on_constant_and_bounded() {
        use rand::Rng;
        let mut rng = crate::mission_rng(5);
        let mut r = unit_raster(8, 8, 0.0);
        for row in 0..8 {
            for col in 0..8 {
                r.set(col, row, rng.gen_range(-5.0..5.0));
            }
        }
        let f = median_filter_depth(&r, 3).unwrap();
        // each output lies within the min/max of its window
        for row in 0..8i64 {
            for col in 0..8i64 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        if r.in_bounds(col + dc, row + dr) {
                            let v = r.get((col + dc) as usize, (row + dr) as usize);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                }
                let v = f.get(col as usize, row as usize);
                assert!(v >= lo && v <= hi);
            }
        }
        let c = unit_raster(6, 6, 1.25);
        assert_eq!(median_filter_depth(&c, 5).unwrap(), c);
    }

    #[test]
    fn cloud_from_all_invalid_is_empty() {
        let calib = StereoCalibration::new(1000.0, 0.0, 0.0, 0.0, 1.38).unwrap();
        let disp = unit_raster(4, 4, -1e9);
        let (cloud, report) = disparity_to_cloud(&disp, &calib, 3).unwrap();
        assert!(cloud.is_empty());
        assert_eq!(report.invalid_skipped, 16);
    }

    #[test]
    fn cloud_single_pixel_matches_back_project() {
        let calib = StereoCalibration::new(1000.0, 2.0, 2.0, 2.0, 1.38).unwrap();
        let mut disp = unit_raster(5, 5, -1e9);
        disp.set(2, 3, -90.0);
        let (cloud, report) = disparity_to_cloud(&disp, &calib, 3).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(report.points, 1);
        let q = build_q(&calib);
        assert_eq!(cloud.points[0], back_project(&q, 2.0, 3.0, -90.0).unwrap());
    }

    #[test]
    fn cloud_constant_disparity_is_constant_depth() {
        let calib = StereoCalibration::new(700.0, 32.0, 32.0, 32.0, 1.38).unwrap();
        let z = 21.5;
        let d = (calib.cx - calib.cx_r) - calib.f * calib.baseline_b / z;
        let disp = unit_raster(16, 16, d);
        let (cloud, report) = disparity_to_cloud(&disp, &calib, 3).unwrap();
        assert_eq!(report.points, 256);
        assert_eq!(cloud.len(), 256);
        for p in &cloud.points {
            assert!((p[2] - z).abs() < 1e-9);
        }
    }

    #[test]
    fn cloud_counts_degenerate_pixels() {
        let calib = StereoCalibration::new(1000.0, 10.0, 10.0, 10.0, 1.0).unwrap();
        let mut disp = unit_raster(3, 1, -50.0);
        disp.set(1, 0, 0.0); // w = 0 exactly
        let (cloud, report) = disparity_to_cloud(&disp, &calib, 1).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(report.degenerate_skipped, 1);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cloud = PointCloud {
            points: vec![[1.0, 2.0, 3.0]],
            colors: Some(vec![[9, 8, 7]]),
        };
        assert_eq!(cloud.to_csv(), "x,y,z,r,g,b\n1,2,3,9,8,7\n");
    }
}
