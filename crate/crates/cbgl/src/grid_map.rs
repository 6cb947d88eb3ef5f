//! Occupancy-grid maps: PGM loading, cell classification, coordinate
//! transforms, and free-space sampling.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scan_geometry::Pose;

/// Classification of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

/// Map metadata, stored next to the image in a `<name>.map.txt` sidecar of
/// `key: value` lines.
///
/// `origin` is the pose of cell (0, 0)'s lower-left corner in the world
/// frame. A pixel value `v` maps to occupancy `p = (max_val - v) / max_val`
/// (or `v / max_val` with `negate`); `p > occupied_thresh` is occupied,
/// `p < free_thresh` is free, anything else unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct MapMetadata {
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub origin_theta: f64,
    pub occupied_thresh: f64,
    pub free_thresh: f64,
    pub negate: bool,
}

impl Default for MapMetadata {
    fn default() -> Self {
        MapMetadata {
            resolution: 0.05,
            origin_x: 0.0,
            origin_y: 0.0,
            origin_theta: 0.0,
            occupied_thresh: 0.65,
            free_thresh: 0.196,
            negate: false,
        }
    }
}

impl MapMetadata {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::Metadata(format!(
                "resolution {} must be positive",
                self.resolution
            )));
        }
        if !(0.0..=1.0).contains(&self.free_thresh)
            || !(0.0..=1.0).contains(&self.occupied_thresh)
            || self.free_thresh >= self.occupied_thresh
        {
            return Err(Error::Metadata(format!(
                "thresholds free {} / occupied {} must satisfy 0 <= free < occupied <= 1",
                self.free_thresh, self.occupied_thresh
            )));
        }
        Ok(())
    }

    /// Parses sidecar text. `resolution` is required; every other key is
    /// optional and defaults as in [`MapMetadata::default`]. Blank lines and
    /// `#` comments are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = MapMetadata::default();
        let mut saw_resolution = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                Error::Metadata(format!("line {}: expected `key: value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let num = || -> Result<f64> {
                value.parse::<f64>().map_err(|_| {
                    Error::Metadata(format!("line {}: bad number for {key}", lineno + 1))
                })
            };
            match key {
                "resolution" => {
                    meta.resolution = num()?;
                    saw_resolution = true;
                }
                "origin_x" => meta.origin_x = num()?,
                "origin_y" => meta.origin_y = num()?,
                "origin_theta" => meta.origin_theta = num()?,
                "occupied_thresh" => meta.occupied_thresh = num()?,
                "free_thresh" => meta.free_thresh = num()?,
                "negate" => {
                    meta.negate = match value {
                        "0" | "false" => false,
                        "1" | "true" => true,
                        _ => {
                            return Err(Error::Metadata(format!(
                                "line {}: negate must be 0/1/true/false",
                                lineno + 1
                            )))
                        }
                    }
                }
                other => {
                    return Err(Error::Metadata(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        if !saw_resolution {
            return Err(Error::Metadata("missing required key `resolution`".into()));
        }
        meta.validate()?;
        Ok(meta)
    }

    pub fn to_text(&self) -> String {
        format!(
            "resolution: {}\norigin_x: {}\norigin_y: {}\norigin_theta: {}\noccupied_thresh: {}\nfree_thresh: {}\nnegate: {}\n",
            self.resolution,
            self.origin_x,
            self.origin_y,
            self.origin_theta,
            self.occupied_thresh,
            self.free_thresh,
            self.negate as u8,
        )
    }

    pub fn origin(&self) -> Pose {
        Pose::new(self.origin_x, self.origin_y, self.origin_theta)
    }
}

/// A classified occupancy grid. Row 0 is the bottom of the map; cell
/// `(cx, cy)` spans world-frame grid coordinates
/// `[cx * resolution, (cx+1) * resolution) x [cy * resolution, ...)`
/// relative to the origin pose.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Pose,
    cells: Vec<CellState>,
    free_cells: Vec<u32>,
    origin_sin: f64,
    origin_cos: f64,
}

impl OccupancyGrid {
    pub fn from_cell_states(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Pose,
        cells: Vec<CellState>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::MapFormat(format!(
                "grid dimensions {width}x{height} must be positive"
            )));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::MapFormat(format!(
                "resolution {resolution} must be positive"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::MapFormat(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        if width.max(height) > u32::MAX as usize || width * height > u32::MAX as usize {
            return Err(Error::MapFormat("grid too large".into()));
        }
        let free_cells = cells
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == CellState::Free)
            .map(|(i, _)| i as u32)
            .collect();
        let (origin_sin, origin_cos) = origin.theta.sin_cos();
        Ok(OccupancyGrid {
            width,
            height,
            resolution,
            origin,
            cells,
            free_cells,
            origin_sin,
            origin_cos,
        })
    }

    /// Loads a binary (P5) PGM image and classifies every pixel with the
    /// given metadata. Image row 0 is the top of the map and becomes the
    /// highest-index grid row.
    pub fn load_map(pgm_bytes: &[u8], meta: &MapMetadata) -> Result<Self> {
        meta.validate()?;
        let image = parse_pgm(pgm_bytes)?;
        let mut cells = vec![CellState::Unknown; image.width * image.height];
        let max = image.max_val as f64;
        for row in 0..image.height {
            let flipped = image.height - 1 - row;
            for col in 0..image.width {
                let v = image.pixels[row * image.width + col] as f64;
                let p = if meta.negate { v / max } else { (max - v) / max };
                let state = if p > meta.occupied_thresh {
                    CellState::Occupied
                } else if p < meta.free_thresh {
                    CellState::Free
                } else {
                    CellState::Unknown
                };
                cells[flipped * image.width + col] = state;
            }
        }
        Self::from_cell_states(image.width, image.height, meta.resolution, meta.origin(), cells)
    }

    /// Loads `<name>.pgm` plus its `<name>.map.txt` sidecar.
    pub fn load_from_files(pgm_path: &Path) -> Result<(Self, MapMetadata)> {
        let sidecar = pgm_path.with_extension("map.txt");
        let bytes = std::fs::read(pgm_path).map_err(|e| Error::io(pgm_path, e))?;
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta = MapMetadata::parse(&text)?;
        let grid = Self::load_map(&bytes, &meta)?;
        Ok((grid, meta))
    }

    /// Encodes the classification back to a binary PGM (free 255, occupied
    /// 0, unknown 205), undoing the row flip applied on load.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for row in 0..self.height {
            let flipped = self.height - 1 - row;
            for col in 0..self.width {
                out.push(match self.cells[flipped * self.width + col] {
                    CellState::Free => 255,
                    CellState::Occupied => 0,
                    CellState::Unknown => 205,
                });
            }
        }
        out
    }

    /// Writes `<name>.pgm` and `<name>.map.txt` for this grid.
    pub fn save_to_files(&self, pgm_path: &Path, meta: &MapMetadata) -> Result<()> {
        let sidecar = pgm_path.with_extension("map.txt");
        std::fs::write(pgm_path, self.to_pgm()).map_err(|e| Error::io(pgm_path, e))?;
        std::fs::write(&sidecar, meta.to_text()).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> &Pose {
        &self.origin
    }

    /// Total area of free cells in square meters.
    pub fn free_area(&self) -> f64 {
        self.free_cells.len() as f64 * self.resolution * self.resolution
    }

    pub fn state_at_cell(&self, cx: usize, cy: usize) -> Option<CellState> {
        if cx < self.width && cy < self.height {
            Some(self.cells[cy * self.width + cx])
        } else {
            None
        }
    }

    /// Whether a cell (signed coordinates) is inside the grid and free.
    #[inline]
    pub(crate) fn cell_is_free(&self, cx: i64, cy: i64) -> bool {
        cx >= 0
            && cy >= 0
            && (cx as usize) < self.width
            && (cy as usize) < self.height
            && self.cells[cy as usize * self.width + cx as usize] == CellState::Free
    }

    /// World point to axis-aligned grid-frame meters (cell (0,0) corner at
    /// the grid-frame origin).
    #[inline]
    pub(crate) fn world_to_grid_frame(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.origin.x, y - self.origin.y);
        (
            dx * self.origin_cos + dy * self.origin_sin,
            -dx * self.origin_sin + dy * self.origin_cos,
        )
    }

    #[inline]
    pub(crate) fn grid_frame_to_world(&self, gx: f64, gy: f64) -> (f64, f64) {
        (
            self.origin.x + gx * self.origin_cos - gy * self.origin_sin,
            self.origin.y + gx * self.origin_sin + gy * self.origin_cos,
        )
    }

    /// Cell containing a world point, if inside the grid.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (gx, gy) = self.world_to_grid_frame(x, y);
        let cx = (gx / self.resolution).floor();
        let cy = (gy / self.resolution).floor();
        if cx >= 0.0 && cy >= 0.0 && (cx as usize) < self.width && (cy as usize) < self.height {
            Some((cx as usize, cy as usize))
        } else {
            None
        }
    }

    /// World coordinates of a cell's center.
    pub fn cell_to_world(&self, cx: usize, cy: usize) -> (f64, f64) {
        self.grid_frame_to_world(
            (cx as f64 + 0.5) * self.resolution,
            (cy as f64 + 0.5) * self.resolution,
        )
    }

    /// Whether the world point lies in a free cell.
    pub fn is_free(&self, x: f64, y: f64) -> bool {
        match self.world_to_cell(x, y) {
            Some((cx, cy)) => self.cells[cy * self.width + cx] == CellState::Free,
            None => false,
        }
    }

    /// Draws a point uniformly over the free area: a uniform free cell, then
    /// a uniform position within it. The returned point always satisfies
    /// [`OccupancyGrid::is_free`].
    pub fn sample_free_point(&self, rng: &mut impl Rng) -> Result<(f64, f64)> {
        if self.free_cells.is_empty() {
            return Err(Error::NoFreeSpace);
        }
        loop {
            let idx = self.free_cells[rng.random_range(0..self.free_cells.len())] as usize;
            let (cx, cy) = (idx % self.width, idx / self.width);
            let gx = (cx as f64 + rng.random::<f64>()) * self.resolution;
            let gy = (cy as f64 + rng.random::<f64>()) * self.resolution;
            let (x, y) = self.grid_frame_to_world(gx, gy);
            // Guards against the rotation round trip landing on the edge of
            // a neighboring non-free cell.
            if self.is_free(x, y) {
                return Ok((x, y));
            }
        }
    }
}

struct PgmImage {
    width: usize,
    height: usize,
    max_val: u16,
    pixels: Vec<u8>,
}

/// Parses a binary (P5) PGM with 8-bit depth. Header comments (`#` to end of
/// line) are allowed anywhere between tokens.
fn parse_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MapFormat(format!("missing {what}")));
        }
        String::from_utf8(bytes[start..pos].to_vec())
            .map_err(|_| Error::MapFormat(format!("non-ASCII {what}")))
    };

    if token("magic number")? != "P5" {
        return Err(Error::MapFormat("not a binary (P5) PGM".into()));
    }
    let width: usize = token("width")?
        .parse()
        .map_err(|_| Error::MapFormat("bad width".into()))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| Error::MapFormat("bad height".into()))?;
    let max_val: u32 = token("max value")?
        .parse()
        .map_err(|_| Error::MapFormat("bad max value".into()))?;
    if width == 0 || height == 0 {
        return Err(Error::MapFormat(format!(
            "image dimensions {width}x{height} must be positive"
        )));
    }
    if max_val == 0 || max_val > 255 {
        return Err(Error::MapFormat(format!(
            "max value {max_val} unsupported (8-bit only)"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::MapFormat(format!("raster truncated: need {need} bytes")))?;
    Ok(PgmImage {
        width,
        height,
        max_val: max_val as u16,
        pixels: raster.to_vec(),
    })
}
