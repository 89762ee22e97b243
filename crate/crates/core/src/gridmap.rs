//! Occupancy-grid floor plans: loading, thresholding and the interior mask.
//!
//! Pixel `(row, col)` maps to metric `(origin_x + col * resolution,
//! origin_y + row * resolution)`. Rows grow downward, as in the raster.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default intensity at or below which a pixel is an obstacle.
pub const DEFAULT_OCC_THRESH: u8 = 50;
/// Default intensity at or above which a pixel is free space.
pub const DEFAULT_FREE_THRESH: u8 = 205;

#[derive(Debug, Error)]
pub enum GridMapError {
    #[error("cannot read map image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot read metadata file {path}: {source}")]
    Metadata {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata {path}, line {line}: {message}")]
    MetadataSyntax {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("map image has zero area")]
    Empty,
    #[error(
        "no resolution for {0}: pass --resolution or provide a sidecar .yaml/.meta file with `resolution: <m/px>`"
    )]
    MissingResolution(PathBuf),
    #[error("resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("thresholds must satisfy occ_thresh < free_thresh (got {occ} and {free})")]
    BadThresholds { occ: u8, free: u8 },
    #[error("cell buffer holds {got} cells, expected {width}x{height}")]
    Shape {
        width: usize,
        height: usize,
        got: usize,
    },
    #[error("no closed boundary found: the map has no occupied contour enclosing free space")]
    NoBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

impl CellState {
    /// Unknown cells block sensing and motion just like walls.
    pub fn is_blocking(self) -> bool {
        !matches!(self, CellState::Free)
    }

    /// Grey level used when rendering a map back to an image.
    pub fn intensity(self) -> u8 {
        match self {
            CellState::Free => 254,
            CellState::Occupied => 0,
            CellState::Unknown => 128,
        }
    }
}

/// Options controlling how a raster becomes a [`GridMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapMeta {
    /// Metres per pixel. When `None` a sidecar file must supply it.
    pub resolution: Option<f64>,
    pub origin: Option<(f64, f64)>,
    pub occ_thresh: u8,
    pub free_thresh: u8,
    /// Explicit sidecar path; otherwise `<image>.yaml`, `<stem>.yaml`,
    /// `<image>.meta` and `<stem>.meta` are tried in that order.
    pub sidecar: Option<PathBuf>,
}

impl Default for MapMeta {
    fn default() -> Self {
        Self {
            resolution: None,
            origin: None,
            occ_thresh: DEFAULT_OCC_THRESH,
            free_thresh: DEFAULT_FREE_THRESH,
            sidecar: None,
        }
    }
}

impl MapMeta {
    pub fn with_resolution(resolution: f64) -> Self {
        Self {
            resolution: Some(resolution),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: (f64, f64),
    cells: Vec<CellState>,
}

impl GridMap {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        cells: Vec<CellState>,
    ) -> Result<Self, GridMapError> {
        if width == 0 || height == 0 {
            return Err(GridMapError::Empty);
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(GridMapError::BadResolution(resolution));
        }
        if cells.len() != width * height {
            return Err(GridMapError::Shape {
                width,
                height,
                got: cells.len(),
            });
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin: (0.0, 0.0),
            cells,
        })
    }

    /// A map of `width x height` cells all set to `state`.
    pub fn filled(
        width: usize,
        height: usize,
        resolution: f64,
        state: CellState,
    ) -> Result<Self, GridMapError> {
        Self::new(width, height, resolution, vec![state; width * height])
    }

    /// Thresholds 8-bit grey levels row by row.
    pub fn from_gray(
        width: usize,
        height: usize,
        pixels: &[u8],
        resolution: f64,
        occ_thresh: u8,
        free_thresh: u8,
    ) -> Result<Self, GridMapError> {
        if occ_thresh >= free_thresh {
            return Err(GridMapError::BadThresholds {
                occ: occ_thresh,
                free: free_thresh,
            });
        }
        let cells = pixels
            .iter()
            .map(|&v| threshold(v, occ_thresh, free_thresh))
            .collect();
        Self::new(width, height, resolution, cells)
    }

    pub fn with_origin(mut self, origin: (f64, f64)) -> Self {
        self.origin = origin;
        self
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

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> CellState {
        self.cells[self.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, state: CellState) {
        let i = self.index(row, col);
        self.cells[i] = state;
    }

    /// Cell state with everything outside the raster treated as blocking.
    pub fn get_signed(&self, row: i64, col: i64) -> CellState {
        if row < 0 || col < 0 || row >= self.height as i64 || col >= self.width as i64 {
            CellState::Unknown
        } else {
            self.get(row as usize, col as usize)
        }
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    /// Renders the map back to grey levels (see [`CellState::intensity`]).
    pub fn to_gray(&self) -> Vec<u8> {
        self.cells.iter().map(|c| c.intensity()).collect()
    }

    pub fn pixel_to_metric(&self, row: f64, col: f64) -> (f64, f64) {
        (
            self.origin.0 + col * self.resolution,
            self.origin.1 + row * self.resolution,
        )
    }

    /// Inverse of [`pixel_to_metric`](Self::pixel_to_metric), returning
    /// fractional `(row, col)`.
    pub fn metric_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (y - self.origin.1) / self.resolution,
            (x - self.origin.0) / self.resolution,
        )
    }

    /// Copy of the map shifted by whole pixels, growing the raster with
    /// `fill` cells on the top/left.
    pub fn padded(&self, top: usize, left: usize, bottom: usize, right: usize, fill: CellState) -> GridMap {
        let width = self.width + left + right;
        let height = self.height + top + bottom;
        let mut cells = vec![fill; width * height];
        for r in 0..self.height {
            let dst = (r + top) * width + left;
            cells[dst..dst + self.width].copy_from_slice(&self.cells[r * self.width..(r + 1) * self.width]);
        }
        GridMap {
            width,
            height,
            resolution: self.resolution,
            origin: self.origin,
            cells,
        }
    }
}

#[inline]
pub fn threshold(v: u8, occ_thresh: u8, free_thresh: u8) -> CellState {
    if v <= occ_thresh {
        CellState::Occupied
    } else if v >= free_thresh {
        CellState::Free
    } else {
        CellState::Unknown
    }
}

/// Loads a PGM (P5) or PNG floor plan and thresholds it.
pub fn load_gridmap(path: &Path, meta: &MapMeta) -> Result<GridMap, GridMapError> {
    let img = image::open(path)
        .map_err(|source| GridMapError::Image {
            path: path.to_owned(),
            source,
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(GridMapError::Empty);
    }

    let sidecar = match &meta.sidecar {
        Some(p) => Some(read_sidecar(p)?),
        None => match find_sidecar(path) {
            Some(p) => Some(read_sidecar(&p)?),
            None => None,
        },
    };
    let resolution = meta
        .resolution
        .or(sidecar.as_ref().and_then(|s| s.resolution))
        .ok_or_else(|| GridMapError::MissingResolution(path.to_owned()))?;
    let origin = meta
        .origin
        .or(sidecar.map(|s| (s.origin_x, s.origin_y)))
        .unwrap_or((0.0, 0.0));

    Ok(GridMap::from_gray(
        w as usize,
        h as usize,
        img.as_raw(),
        resolution,
        meta.occ_thresh,
        meta.free_thresh,
    )?
    .with_origin(origin))
}

/// Writes the map as a grey-level image; the format follows the extension.
/// Resolution and origin are not stored.
pub fn save_gridmap(map: &GridMap, path: &Path) -> Result<(), GridMapError> {
    let img = image::GrayImage::from_raw(map.width() as u32, map.height() as u32, map.to_gray())
        .ok_or(GridMapError::Empty)?;
    img.save(path).map_err(|source| GridMapError::Image {
        path: path.to_owned(),
        source,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Sidecar {
    pub resolution: Option<f64>,
    pub origin_x: f64,
    pub origin_y: f64,
}

fn find_sidecar(image: &Path) -> Option<PathBuf> {
    let mut candidates = Vec::new();
    for ext in ["yaml", "meta"] {
        let mut full = image.as_os_str().to_owned();
        full.push(".");
        full.push(ext);
        candidates.push(PathBuf::from(full));
        candidates.push(image.with_extension(ext));
    }
    candidates.into_iter().find(|p| p.is_file())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar, GridMapError> {
    let text = fs::read_to_string(path).map_err(|source| GridMapError::Metadata {
        path: path.to_owned(),
        source,
    })?;
    parse_sidecar(&text).map_err(|(line, message)| GridMapError::MetadataSyntax {
        path: path.to_owned(),
        line,
        message,
    })
}

/// Parses `key: value` lines. Unknown keys are ignored so ROS map yaml
/// files (`image:`, `negate:` ...) load as-is.
pub fn parse_sidecar(text: &str) -> Result<Sidecar, (usize, String)> {
    let mut out = Sidecar::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once(':').or_else(|| line.split_once('=')) else {
            return Err((n + 1, format!("expected `key: value`, got `{line}`")));
        };
        let value = value.trim();
        let number = || {
            value
                .parse::<f64>()
                .map_err(|_| (n + 1, format!("`{}` is not a number", value)))
        };
        match key.trim() {
            "resolution" => out.resolution = Some(number()?),
            "origin_x" => out.origin_x = number()?,
            "origin_y" => out.origin_y = number()?,
            // ROS style `origin: [x, y, yaw]`
            "origin" => {
                let parts: Vec<&str> = value
                    .trim_matches(|c| c == '[' || c == ']')
                    .split(',')
                    .map(str::trim)
                    .collect();
                if parts.len() >= 2 {
                    let parse = |s: &str| {
                        s.parse::<f64>()
                            .map_err(|_| (n + 1, format!("`{s}` is not a number")))
                    };
                    out.origin_x = parse(parts[0])?;
                    out.origin_y = parse(parts[1])?;
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Boolean raster with the same shape as a [`GridMap`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// Pixels inside the building outline.
pub type InteriorMask = Mask;

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask buffer size mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Iterates `(row, col)` of set pixels in raster order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }
}

const N4: [(i64, i64); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
const N8: [(i64, i64); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// 4-connected flood fill of non-`wall` pixels starting from every raster
/// edge pixel. Returns the set of reached pixels.
fn fill_from_border(width: usize, height: usize, wall: impl Fn(usize) -> bool) -> Vec<bool> {
    let mut reached = vec![false; width * height];
    let mut queue = VecDeque::new();
    let seed = |i: usize, reached: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        if !reached[i] && !wall(i) {
            reached[i] = true;
            queue.push_back(i);
        }
    };
    for c in 0..width {
        seed(c, &mut reached, &mut queue);
        seed((height - 1) * width + c, &mut reached, &mut queue);
    }
    for r in 0..height {
        seed(r * width, &mut reached, &mut queue);
        seed(r * width + width - 1, &mut reached, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / width) as i64, (i % width) as i64);
        for (dr, dc) in N4 {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                continue;
            }
            let j = nr as usize * width + nc as usize;
            if !reached[j] && !wall(j) {
                reached[j] = true;
                queue.push_back(j);
            }
        }
    }
    reached
}

/// Outer border of one 8-connected blocking component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    /// First pixel of the component in raster order.
    pub start: (usize, usize),
    /// Number of component pixels on the outer border.
    pub length: usize,
    pub component: usize,
}

/// Labels 8-connected components of blocking cells. Returns per-pixel labels
/// (`usize::MAX` for free cells) and the component count.
fn label_blocking(map: &GridMap) -> (Vec<usize>, usize) {
    let (w, h) = (map.width, map.height);
    let mut labels = vec![usize::MAX; w * h];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if labels[start] != usize::MAX || !map.cells[start].is_blocking() {
            continue;
        }
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for (dr, dc) in N8 {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if labels[j] == usize::MAX && map.cells[j].is_blocking() {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    (labels, next)
}

/// Outer contours of every blocking component that touches the exterior,
/// longest first (ties: smallest starting row, then column).
pub fn outer_contours(map: &GridMap) -> Vec<Contour> {
    let (w, h) = (map.width, map.height);
    let (labels, n) = label_blocking(map);
    let exterior = fill_from_border(w, h, |i| map.cells[i].is_blocking());

    let mut length = vec![0usize; n];
    let mut start = vec![None; n];
    for i in 0..w * h {
        let label = labels[i];
        if label == usize::MAX {
            continue;
        }
        if start[label].is_none() {
            start[label] = Some((i / w, i % w));
        }
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        let on_border = N4.iter().any(|&(dr, dc)| {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                return true;
            }
            exterior[nr as usize * w + nc as usize]
        });
        if on_border {
            length[label] += 1;
        }
    }

    let mut contours: Vec<Contour> = (0..n)
        .filter(|&k| length[k] > 0)
        .map(|k| Contour {
            start: start[k].expect("labelled component has a first pixel"),
            length: length[k],
            component: k,
        })
        .collect();
    contours.sort_by(|a, b| b.length.cmp(&a.length).then(a.start.cmp(&b.start)));
    contours
}

/// Interior of the building: pixels strictly inside the longest outer
/// contour of the blocking cells.
pub fn interior_mask(map: &GridMap) -> Result<InteriorMask, GridMapError> {
    interior_with_contour(map).map(|(mask, _)| mask)
}

/// Like [`interior_mask`] but also returns the contour that was used.
///
/// When the longest contour encloses nothing (an open scribble), the next
/// longest one is tried.
pub fn interior_with_contour(map: &GridMap) -> Result<(InteriorMask, Contour), GridMapError> {
    let (w, h) = (map.width, map.height);
    let (labels, _) = label_blocking(map);
    for contour in outer_contours(map) {
        let k = contour.component;
        let outside = fill_from_border(w, h, |i| labels[i] == k);
        let bits: Vec<bool> = (0..w * h).map(|i| !outside[i] && labels[i] != k).collect();
        if bits.iter().any(|&b| b) {
            return Ok((Mask::from_bits(w, h, bits), contour));
        }
    }
    Err(GridMapError::NoBoundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use CellState::*;

    fn ring(w: usize, h: usize) -> GridMap {
        let mut m = GridMap::filled(w, h, 0.05, Free).unwrap();
        for c in 0..w {
            m.set(0, c, Occupied);
            m.set(h - 1, c, Occupied);
        }
        for r in 0..h {
            m.set(r, 0, Occupied);
            m.set(r, w - 1, Occupied);
        }
        m
    }

    #[test]
    fn thresholds_two_by_two() {
        let m = GridMap::from_gray(2, 2, &[0, 255, 255, 0], 1.0, 50, 200).unwrap();
        assert_eq!(m.cells(), &[Occupied, Free, Free, Occupied]);
    }

    #[test]
    fn uniform_white_is_all_free() {
        let m = GridMap::from_gray(10, 10, &[255; 100], 1.0, 50, 205).unwrap();
        assert_eq!(m.count(Free), 100);
    }

    #[test]
    fn grey_pixel_is_unknown() {
        let mut px = [255u8; 9];
        px[4] = 128;
        let m = GridMap::from_gray(3, 3, &px, 1.0, 50, 205).unwrap();
        assert_eq!(m.get(1, 1), Unknown);
        assert_eq!(m.count(Unknown), 1);
    }

    #[test]
    fn rethresholding_rendered_map_is_identity() {
        let m = GridMap::from_gray(4, 1, &[0, 100, 210, 255], 1.0, 50, 205).unwrap();
        let again = GridMap::from_gray(4, 1, &m.to_gray(), 1.0, 50, 205).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(GridMap::filled(0, 3, 1.0, Free), Err(GridMapError::Empty)));
        assert!(matches!(
            GridMap::filled(2, 2, 0.0, Free),
            Err(GridMapError::BadResolution(_))
        ));
        assert!(matches!(
            GridMap::new(2, 2, 1.0, vec![Free; 3]),
            Err(GridMapError::Shape { .. })
        ));
        assert!(matches!(
            GridMap::from_gray(1, 1, &[0], 1.0, 200, 100),
            Err(GridMapError::BadThresholds { .. })
        ));
    }

    #[test]
    fn ring_interior_is_inner_square() {
        let m = ring(10, 10);
        let mask = interior_mask(&m).unwrap();
        assert_eq!(mask.count(), 64);
        for r in 0..10 {
            for c in 0..10 {
                let inside = (1..9).contains(&r) && (1..9).contains(&c);
                assert_eq!(mask.get(r, c), inside, "({r},{c})");
            }
        }
    }

    #[test]
    fn nested_rectangles_follow_outer_contour() {
        let mut m = ring(20, 20);
        for r in 8..13 {
            for c in 8..13 {
                m.set(r, c, Occupied);
            }
        }
        let (mask, contour) = interior_with_contour(&m).unwrap();
        assert_eq!(contour.start, (0, 0));
        assert_eq!(contour.length, 76);
        // island pixels are enclosed by the outer contour as well
        assert_eq!(mask.count(), 18 * 18);
        assert!(mask.get(10, 10));
    }

    #[test]
    fn all_free_has_no_boundary() {
        let m = GridMap::filled(5, 5, 1.0, Free).unwrap();
        assert!(matches!(interior_mask(&m), Err(GridMapError::NoBoundary)));
    }

    #[test]
    fn open_wall_has_no_boundary() {
        let mut m = GridMap::filled(6, 6, 1.0, Free).unwrap();
        for c in 0..6 {
            m.set(2, c, Occupied);
        }
        assert!(matches!(interior_mask(&m), Err(GridMapError::NoBoundary)));
    }

    #[test]
    fn diagonal_walls_still_seal() {
        // diamond outline: 8-connected walls must block a 4-connected fill
        let mut m = GridMap::filled(9, 9, 1.0, Free).unwrap();
        for k in 0..5 {
            m.set(k, 4 + k, Occupied);
            m.set(k, 4 - k, Occupied);
            m.set(8 - k, 4 + k, Occupied);
            m.set(8 - k, 4 - k, Occupied);
        }
        let mask = interior_mask(&m).unwrap();
        assert!(mask.get(4, 4));
        assert!(!mask.get(0, 0));
        assert_eq!(mask.count(), 25);
    }

    #[test]
    fn sidecar_parsing() {
        let s = parse_sidecar("image: map.pgm\nresolution: 0.05\norigin: [-1.5, 2.0, 0.0]\n").unwrap();
        assert_eq!(s.resolution, Some(0.05));
        assert_eq!((s.origin_x, s.origin_y), (-1.5, 2.0));
        let s = parse_sidecar("resolution=0.1\norigin_x: 3\n# comment\n").unwrap();
        assert_eq!(s.resolution, Some(0.1));
        assert_eq!(s.origin_x, 3.0);
        assert!(parse_sidecar("resolution: abc").is_err());
        assert!(parse_sidecar("garbage").is_err());
    }

    #[test]
    fn missing_resolution_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        image::GrayImage::from_raw(2, 2, vec![0, 255, 255, 0])
            .unwrap()
            .save(&path)
            .unwrap();
        let err = load_gridmap(&path, &MapMeta::default()).unwrap_err();
        assert!(matches!(err, GridMapError::MissingResolution(_)));

        std::fs::write(dir.path().join("m.yaml"), "resolution: 0.25\norigin_x: 1.0\n").unwrap();
        let m = load_gridmap(&path, &MapMeta::default()).unwrap();
        assert_eq!(m.resolution(), 0.25);
        assert_eq!(m.origin(), (1.0, 0.0));

        let m = load_gridmap(&path, &MapMeta::with_resolution(0.5)).unwrap();
        assert_eq!(m.resolution(), 0.5);
    }

    #[test]
    fn loads_binary_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 255, 255, 10]);
        std::fs::write(&path, bytes).unwrap();
        let m = load_gridmap(&path, &MapMeta::with_resolution(0.05)).unwrap();
        assert_eq!((m.width(), m.height()), (3, 2));
        assert_eq!(m.cells(), &[Occupied, Unknown, Free, Free, Free, Occupied]);
    }

    #[test]
    fn save_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = ring(6, 4);
        m.set(1, 2, Unknown);
        for name in ["m.pgm", "m.png"] {
            let path = dir.path().join(name);
            save_gridmap(&m, &path).unwrap();
            let back = load_gridmap(&path, &MapMeta::with_resolution(0.05)).unwrap();
            assert_eq!(back.cells(), m.cells());
        }
    }
}
