//! Georeferenced rasters, coordinate transforms, gradients, resampling and
//! raster file I/O.
//!
//! Rasters are stored row-major with row 0 at the *southern* edge of the
//! scene, so the geotransform maps pixel indices to world meters without an
//! axis flip: `x = origin_x + col * pixel_size`, `y = origin_y + row *
//! pixel_size`, where the origin is the world position of the center of
//! pixel (0, 0). File formats that store rows north-first (ESRI ASCII grid,
//! PPM) are flipped at the I/O boundary, never in memory.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by raster construction, processing and file I/O.
#[derive(Debug, Error)]
pub enum GeoError {
    #[error("pixel size must be positive, got {0}")]
    BadPixelSize(f64),
    #[error("{width}x{height} raster needs {} cells, got {cells}", width * height)]
    CellCount {
        width: usize,
        height: usize,
        cells: usize,
    },
    #[error("raster too small: need at least {min_width}x{min_height}, got {width}x{height}")]
    TooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
    },
    #[error("downsample factor must be >= 1")]
    BadFactor,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GeoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        GeoError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        GeoError::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}

/// Affine mapping between pixel indices and world meters: a world origin for
/// the center of pixel (0, 0) plus a square pixel size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self, GeoError> {
        if !(pixel_size > 0.0) {
            return Err(GeoError::BadPixelSize(pixel_size));
        }
        Ok(GeoTransform {
            origin_x,
            origin_y,
            pixel_size,
        })
    }

    /// Unit transform: origin (0, 0), 1 m pixels.
    pub fn identity() -> Self {
        GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 1.0,
        }
    }

    /// World meters to fractional pixel coordinates `(col, row)`.
    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size,
            (y - self.origin_y) / self.pixel_size,
        )
    }

    /// Fractional pixel coordinates `(col, row)` to world meters.
    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_size,
            self.origin_y + row * self.pixel_size,
        )
    }

    /// World meters to the nearest integer pixel, unclamped.
    pub fn world_to_cell(&self, x: f64, y: f64) -> (i64, i64) {
        let (c, r) = self.world_to_pixel(x, y);
        (c.round() as i64, r.round() as i64)
    }

    /// Transform of a raster downsampled by `factor`: pixel size scales,
    /// and the new pixel (0, 0) center is the center of the first block.
    pub fn scaled(&self, factor: usize) -> GeoTransform {
        let shift = 0.5 * (factor as f64 - 1.0) * self.pixel_size;
        GeoTransform {
            origin_x: self.origin_x + shift,
            origin_y: self.origin_y + shift,
            pixel_size: self.pixel_size * factor as f64,
        }
    }
}

/// 8-bit RGB pixel for orthophoto rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub [u8; 3]);

/// Row-major 2D grid of values with a geotransform and an optional nodata
/// sentinel. Rasters are immutable in spirit: every operation returns a new
/// raster, and in-place mutation is only used while building one.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    cells: Vec<T>,
    pub transform: GeoTransform,
    pub nodata: Option<T>,
}

impl<T: Copy + PartialEq> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T, transform: GeoTransform) -> Self {
        Raster {
            width,
            height,
            cells: vec![value; width * height],
            transform,
            nodata: None,
        }
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        cells: Vec<T>,
        transform: GeoTransform,
    ) -> Result<Self, GeoError> {
        if cells.len() != width * height {
            return Err(GeoError::CellCount {
                width,
                height,
                cells: cells.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            cells,
            transform,
            nodata: None,
        })
    }

    pub fn with_nodata(mut self, nodata: Option<T>) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    #[inline]
    pub fn idx(&self, col: usize, row: usize) -> usize {
        debug_assert!(col < self.width && row < self.height);
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.cells[self.idx(col, row)]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: T) {
        let i = self.idx(col, row);
        self.cells[i] = value;
    }

    /// True when `value` equals the configured nodata sentinel.
    pub fn is_nodata_value(&self, value: T) -> bool {
        self.nodata.is_some_and(|nd| nd == value)
    }

    /// True when the cell holds the nodata sentinel.
    pub fn is_nodata(&self, col: usize, row: usize) -> bool {
        self.is_nodata_value(self.get(col, row))
    }

    /// World position of the cell center.
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.transform.pixel_to_world(col as f64, row as f64)
    }
}

/// Gradient magnitude of an elevation raster in meters of rise per meter of
/// run: central differences in the interior, one-sided differences on the
/// borders, both scaled by the pixel size. Any stencil that touches a nodata
/// cell (or sits on one) emits nodata.
pub fn gradient_magnitude(dem: &Raster<f64>) -> Result<Raster<f64>, GeoError> {
    if dem.width() < 2 || dem.height() < 2 {
        return Err(GeoError::TooSmall {
            width: dem.width(),
            height: dem.height(),
            min_width: 2,
            min_height: 2,
        });
    }
    let nodata = dem.nodata.unwrap_or(f64::NAN);
    let mut out = Raster::filled(dem.width(), dem.height(), 0.0, dem.transform)
        .with_nodata(Some(nodata));
    let ps = dem.transform.pixel_size;
    for row in 0..dem.height() {
        for col in 0..dem.width() {
            if dem.is_nodata(col, row) {
                out.set(col, row, nodata);
                continue;
            }
            let axis = |lo: Option<f64>, hi: Option<f64>, center: f64| -> Option<f64> {
                match (lo, hi) {
                    (Some(a), Some(b)) => Some((b - a) / (2.0 * ps)),
                    (None, Some(b)) => Some((b - center) / ps),
                    (Some(a), None) => Some((center - a) / ps),
                    (None, None) => None,
                }
            };
            let sample = |c: i64, r: i64| -> Option<Option<f64>> {
                // Outer None: outside the raster. Inner None: nodata.
                if !dem.in_bounds(c, r) {
                    return Some(None);
                }
                let v = dem.get(c as usize, r as usize);
                if dem.is_nodata_value(v) {
                    None
                } else {
                    Some(Some(v))
                }
            };
            let center = dem.get(col, row);
            let (c, r) = (col as i64, row as i64);
            let neighbors = [
                sample(c - 1, r),
                sample(c + 1, r),
                sample(c, r - 1),
                sample(c, r + 1),
            ];
            if neighbors.iter().any(|n| n.is_none()) {
                out.set(col, row, nodata);
                continue;
            }
            let west = neighbors[0].unwrap();
            let east = neighbors[1].unwrap();
            let south = neighbors[2].unwrap();
            let north = neighbors[3].unwrap();
            // width/height >= 2 guarantees at least one neighbor per axis.
            let gx = axis(west, east, center).expect("x neighbor");
            let gy = axis(south, north, center).expect("y neighbor");
            out.set(col, row, (gx * gx + gy * gy).sqrt());
        }
    }
    Ok(out)
}

fn downsampled_dims(width: usize, height: usize, factor: usize) -> (usize, usize) {
    (width.div_ceil(factor), height.div_ceil(factor))
}

/// Block-mean downsampling for real-valued rasters. Nodata cells are skipped;
/// a block with no valid cell emits nodata.
pub fn downsample_mean(r: &Raster<f64>, factor: usize) -> Result<Raster<f64>, GeoError> {
    if factor < 1 {
        return Err(GeoError::BadFactor);
    }
    if factor == 1 {
        return Ok(r.clone());
    }
    let (w, h) = downsampled_dims(r.width(), r.height(), factor);
    let nodata = r.nodata.unwrap_or(f64::NAN);
    let mut out = Raster::filled(w, h, 0.0, r.transform.scaled(factor)).with_nodata(r.nodata.or(Some(nodata)));
    for br in 0..h {
        for bc in 0..w {
            let mut sum = 0.0;
            let mut n = 0usize;
            for row in br * factor..((br + 1) * factor).min(r.height()) {
                for col in bc * factor..((bc + 1) * factor).min(r.width()) {
                    let v = r.get(col, row);
                    if !r.is_nodata_value(v) {
                        sum += v;
                        n += 1;
                    }
                }
            }
            out.set(bc, br, if n == 0 { nodata } else { sum / n as f64 });
        }
    }
    Ok(out)
}

/// Block-mode downsampling for category rasters; ties pick the lowest code.
pub fn downsample_mode(r: &Raster<u8>, factor: usize) -> Result<Raster<u8>, GeoError> {
    if factor < 1 {
        return Err(GeoError::BadFactor);
    }
    if factor == 1 {
        return Ok(r.clone());
    }
    let (w, h) = downsampled_dims(r.width(), r.height(), factor);
    let mut out = Raster::filled(w, h, 0u8, r.transform.scaled(factor)).with_nodata(r.nodata);
    for br in 0..h {
        for bc in 0..w {
            let mut counts = [0u32; 256];
            let mut any = false;
            for row in br * factor..((br + 1) * factor).min(r.height()) {
                for col in bc * factor..((bc + 1) * factor).min(r.width()) {
                    let v = r.get(col, row);
                    if !r.is_nodata_value(v) {
                        counts[v as usize] += 1;
                        any = true;
                    }
                }
            }
            let value = if any {
                // max count, lowest code on ties
                let mut best = 0usize;
                for code in 1..256 {
                    if counts[code] > counts[best] {
                        best = code;
                    }
                }
                best as u8
            } else {
                r.nodata.unwrap_or(0)
            };
            out.set(bc, br, value);
        }
    }
    Ok(out)
}

/// Nearest-sample downsampling (top-left cell of each block), any cell type.
pub fn downsample_nearest<T: Copy + PartialEq>(
    r: &Raster<T>,
    factor: usize,
) -> Result<Raster<T>, GeoError> {
    if factor < 1 {
        return Err(GeoError::BadFactor);
    }
    if factor == 1 {
        return Ok(r.clone());
    }
    let (w, h) = downsampled_dims(r.width(), r.height(), factor);
    let mut cells = Vec::with_capacity(w * h);
    for br in 0..h {
        for bc in 0..w {
            cells.push(r.get(bc * factor, br * factor));
        }
    }
    Ok(Raster::from_cells(w, h, cells, r.transform.scaled(factor))?.with_nodata(r.nodata))
}

// ---------------------------------------------------------------------------
// ESRI ASCII grid I/O
// ---------------------------------------------------------------------------

const DEFAULT_NODATA: f64 = -9999.0;

/// Geotransform sidecar written next to every raster file.
#[derive(Debug, Serialize, Deserialize)]
struct GeoSidecar {
    origin_x: f64,
    origin_y: f64,
    pixel_size: f64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("geo.json")
}

/// Write the `.geo.json` sidecar recording the raster's geotransform.
pub fn write_geo_sidecar(path: &Path, transform: &GeoTransform) -> Result<(), GeoError> {
    let sc = GeoSidecar {
        origin_x: transform.origin_x,
        origin_y: transform.origin_y,
        pixel_size: transform.pixel_size,
    };
    let sp = sidecar_path(path);
    let body = serde_json::to_string_pretty(&sc).expect("sidecar serializes");
    fs::write(&sp, body).map_err(|e| GeoError::io(&sp, e))
}

/// Read the `.geo.json` sidecar for a raster file, if present.
pub fn read_geo_sidecar(path: &Path) -> Result<Option<GeoTransform>, GeoError> {
    let sp = sidecar_path(path);
    if !sp.exists() {
        return Ok(None);
    }
    let body = fs::read_to_string(&sp).map_err(|e| GeoError::io(&sp, e))?;
    let sc: GeoSidecar = serde_json::from_str(&body)
        .map_err(|e| GeoError::parse(&sp, 1, e.to_string()))?;
    Ok(Some(GeoTransform::new(sc.origin_x, sc.origin_y, sc.pixel_size)?))
}

/// Write a real-valued raster as an ESRI ASCII grid plus geotransform
/// sidecar. The first data row in the file is the northernmost raster row.
pub fn write_ascii_grid(path: &Path, r: &Raster<f64>) -> Result<(), GeoError> {
    let nodata = r.nodata.unwrap_or(DEFAULT_NODATA);
    let ps = r.transform.pixel_size;
    let mut body = String::new();
    body.push_str(&format!("ncols {}\n", r.width()));
    body.push_str(&format!("nrows {}\n", r.height()));
    body.push_str(&format!("xllcorner {}\n", r.transform.origin_x - 0.5 * ps));
    body.push_str(&format!("yllcorner {}\n", r.transform.origin_y - 0.5 * ps));
    body.push_str(&format!("cellsize {}\n", ps));
    body.push_str(&format!("NODATA_value {}\n", nodata));
    for row in (0..r.height()).rev() {
        let mut line = String::new();
        for col in 0..r.width() {
            if col > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{}", r.get(col, row)));
        }
        body.push_str(&line);
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| GeoError::io(path, e))?;
    write_geo_sidecar(path, &r.transform)
}

struct TokenScanner<'a> {
    tokens: Vec<(usize, &'a str)>, // (1-based line, token)
    pos: usize,
}

impl<'a> TokenScanner<'a> {
    fn new(text: &'a str) -> Self {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                tokens.push((i + 1, tok));
            }
        }
        TokenScanner { tokens, pos: 0 }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.tokens.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn last_line(&self) -> usize {
        self.tokens.last().map_or(1, |(l, _)| *l)
    }
}

fn parse_token<T: FromStr>(path: &Path, tok: (usize, &str), what: &str) -> Result<T, GeoError> {
    tok.1
        .parse()
        .map_err(|_| GeoError::parse(path, tok.0, format!("invalid {what} `{}`", tok.1)))
}

/// Read an ESRI ASCII grid. The header (ncols, nrows, xllcorner, yllcorner,
/// cellsize, optional NODATA_value) is authoritative for the geotransform.
pub fn read_ascii_grid(path: &Path) -> Result<Raster<f64>, GeoError> {
    let text = fs::read_to_string(path).map_err(|e| GeoError::io(path, e))?;
    let mut scan = TokenScanner::new(&text);

    let mut ncols: Option<usize> = None;
    let mut nrows: Option<usize> = None;
    let mut xll: Option<f64> = None;
    let mut yll: Option<f64> = None;
    let mut cellsize: Option<f64> = None;
    let mut nodata: Option<f64> = None;

    loop {
        let Some((line, tok)) = scan.peek() else {
            return Err(GeoError::parse(path, scan.last_line(), "missing grid data"));
        };
        let key = tok.to_ascii_lowercase();
        let is_key = matches!(
            key.as_str(),
            "ncols" | "nrows" | "xllcorner" | "yllcorner" | "cellsize" | "nodata_value"
        );
        if !is_key {
            break;
        }
        scan.next();
        let Some(value) = scan.next() else {
            return Err(GeoError::parse(path, line, format!("missing value for {key}")));
        };
        match key.as_str() {
            "ncols" => ncols = Some(parse_token(path, value, "ncols")?),
            "nrows" => nrows = Some(parse_token(path, value, "nrows")?),
            "xllcorner" => xll = Some(parse_token(path, value, "xllcorner")?),
            "yllcorner" => yll = Some(parse_token(path, value, "yllcorner")?),
            "cellsize" => cellsize = Some(parse_token(path, value, "cellsize")?),
            "nodata_value" => nodata = Some(parse_token(path, value, "NODATA_value")?),
            _ => unreachable!(),
        }
    }

    let header_line = scan.peek().map_or(1, |(l, _)| l);
    let missing = |what: &str| GeoError::parse(path, header_line, format!("missing header key {what}"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let xll = xll.ok_or_else(|| missing("xllcorner"))?;
    let yll = yll.ok_or_else(|| missing("yllcorner"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    if !(cellsize > 0.0) {
        return Err(GeoError::parse(path, header_line, "cellsize must be positive"));
    }
    if ncols == 0 || nrows == 0 {
        return Err(GeoError::parse(path, header_line, "ncols and nrows must be positive"));
    }

    let mut cells = vec![0.0; ncols * nrows];
    // File rows run north to south; in-memory row 0 is the southern edge.
    for file_row in 0..nrows {
        let mem_row = nrows - 1 - file_row;
        for col in 0..ncols {
            let Some(tok) = scan.next() else {
                return Err(GeoError::parse(
                    path,
                    scan.last_line(),
                    format!("grid data ended early: expected {} values", ncols * nrows),
                ));
            };
            cells[mem_row * ncols + col] = parse_token(path, tok, "cell value")?;
        }
    }
    if let Some((line, tok)) = scan.peek() {
        return Err(GeoError::parse(
            path,
            line,
            format!("unexpected extra data `{tok}` after {} values", ncols * nrows),
        ));
    }

    let transform = GeoTransform::new(xll + 0.5 * cellsize, yll + 0.5 * cellsize, cellsize)?;
    Ok(Raster::from_cells(ncols, nrows, cells, transform)?.with_nodata(nodata))
}

// ---------------------------------------------------------------------------
// Binary PPM (P6) I/O
// ---------------------------------------------------------------------------

/// Write an RGB raster as binary PPM (P6, 8-bit) plus geotransform sidecar.
/// The first image row is the northernmost raster row. Round trips are
/// byte-exact.
pub fn write_ppm(path: &Path, r: &Raster<Rgb>) -> Result<(), GeoError> {
    let mut buf = Vec::with_capacity(r.len() * 3 + 32);
    write!(buf, "P6\n{} {}\n255\n", r.width(), r.height()).expect("header");
    for row in (0..r.height()).rev() {
        for col in 0..r.width() {
            buf.extend_from_slice(&r.get(col, row).0);
        }
    }
    fs::write(path, buf).map_err(|e| GeoError::io(path, e))?;
    write_geo_sidecar(path, &r.transform)
}

/// Read a binary PPM (P6, 8-bit). The geotransform comes from the `.geo.json`
/// sidecar when present, otherwise the identity transform.
pub fn read_ppm(path: &Path) -> Result<Raster<Rgb>, GeoError> {
    let data = fs::read(path).map_err(|e| GeoError::io(path, e))?;
    let mut line = 1usize;

    let skip_ws_and_comments = |data: &[u8], pos: &mut usize, line: &mut usize| {
        loop {
            while *pos < data.len() && data[*pos].is_ascii_whitespace() {
                if data[*pos] == b'\n' {
                    *line += 1;
                }
                *pos += 1;
            }
            if *pos < data.len() && data[*pos] == b'#' {
                while *pos < data.len() && data[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
    };

    if data.len() < 2 || &data[0..2] != b"P6" {
        return Err(GeoError::parse(path, 1, "not a binary PPM (P6 magic missing)"));
    }
    let mut pos = 2usize;

    let read_uint = |data: &[u8], pos: &mut usize, line: &mut usize, what: &str| -> Result<usize, GeoError> {
        skip_ws_and_comments(data, pos, line);
        let start = *pos;
        while *pos < data.len() && data[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(GeoError::parse(path, *line, format!("missing {what}")));
        }
        std::str::from_utf8(&data[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| GeoError::parse(path, *line, format!("invalid {what}")))
    };

    let width = read_uint(&data, &mut pos, &mut line, "width")?;
    let height = read_uint(&data, &mut pos, &mut line, "height")?;
    let maxval = read_uint(&data, &mut pos, &mut line, "maxval")?;
    if maxval != 255 {
        return Err(GeoError::parse(path, line, format!("unsupported maxval {maxval}, want 255")));
    }
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(GeoError::parse(path, line, "missing whitespace before pixel data"));
    }
    pos += 1;

    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| GeoError::parse(path, line, "image dimensions overflow"))?;
    let body = &data[pos..];
    if body.len() < needed {
        return Err(GeoError::parse(
            path,
            line,
            format!("truncated pixel data: need {needed} bytes, have {}", body.len()),
        ));
    }
    if body.len() > needed {
        return Err(GeoError::parse(path, line, "trailing bytes after pixel data"));
    }

    let transform = read_geo_sidecar(path)?.unwrap_or_else(GeoTransform::identity);
    let mut r = Raster::filled(width, height, Rgb([0, 0, 0]), transform);
    let mut i = 0usize;
    for img_row in 0..height {
        let mem_row = height - 1 - img_row;
        for col in 0..width {
            r.set(col, mem_row, Rgb([body[i], body[i + 1], body[i + 2]]));
            i += 3;
        }
    }
    Ok(r)
}

/// Format helper shared by CSV writers: shortest representation that parses
/// back to the same f64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{}", v)
}
