//! Raster data model: multi-band georeferenced grids with an explicit
//! nodata mask, bilinear/nearest resampling, patch extraction with
//! reflection padding, and overlapped tiling for windowed inference.
//!
//! Grids are immutable once built (construction helpers aside); every
//! operation here is pure, so windows of the same grid can be processed
//! concurrently without locking.

pub mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid pixel size {0}")]
    InvalidPixelSize(f64),
    #[error("band count mismatch: expected {expected}, got {got}")]
    BandMismatch { expected: usize, got: usize },
    #[error("band native size {0} m is not an integer multiple of {1} m")]
    NonMultipleNativeSize(f64, f64),
    #[error("grid dimension {dim} is not divisible by resampling factor {factor}")]
    NonDivisibleDimension { dim: usize, factor: usize },
    #[error("native size list has {got} entries for {expected} bands")]
    NativeSizeCount { expected: usize, got: usize },
    #[error("patch center ({col}, {row}) outside grid {width}x{height}")]
    CenterOutOfBounds {
        col: i64,
        row: i64,
        width: usize,
        height: usize,
    },
    #[error("patch size {0} must be odd")]
    EvenPatchSize(usize),
    #[error("grids are not co-registered")]
    Misaligned,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed grid file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, GridError>;

/// Affine georeferencing for a north-up grid with square pixels.
///
/// `origin_x`/`origin_y` are the map coordinates of the upper-left corner of
/// pixel (0, 0); columns increase eastward, rows increase southward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        if pixel_size <= 0.0 || !pixel_size.is_finite() {
            return Err(GridError::InvalidPixelSize(pixel_size));
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_size,
        })
    }

    /// Map coordinates of the upper-left corner of pixel (col, row).
    pub fn pixel_to_map(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_size,
            self.origin_y - row * self.pixel_size,
        )
    }

    /// Map coordinates of the center of pixel (col, row).
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.pixel_to_map(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Inverse of [`pixel_to_map`](Self::pixel_to_map); exact for in-bounds pixels.
    pub fn map_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size,
            (self.origin_y - y) / self.pixel_size,
        )
    }
}

/// Georeferenced multi-band raster backed by a band-major `f32` buffer and a
/// per-pixel validity mask (`true` = nodata). Nodata pixels are excluded
/// from every statistic and every loss downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    bands: usize,
    transform: GeoTransform,
    band_names: Vec<String>,
    values: Vec<f32>,
    nodata: Vec<bool>,
}

impl Grid {
    pub fn filled(
        width: usize,
        height: usize,
        bands: usize,
        transform: GeoTransform,
        fill: f32,
    ) -> Self {
        Self {
            width,
            height,
            bands,
            transform,
            band_names: (0..bands).map(|b| format!("band_{b}")).collect(),
            values: vec![fill; width * height * bands],
            nodata: vec![false; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        bands: usize,
        transform: GeoTransform,
        band_names: Vec<String>,
        values: Vec<f32>,
        nodata: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != width * height * bands {
            return Err(GridError::Format(format!(
                "payload length {} does not match {}x{}x{}",
                values.len(),
                width,
                height,
                bands
            )));
        }
        if nodata.len() != width * height {
            return Err(GridError::Format("mask length mismatch".into()));
        }
        if band_names.len() != bands {
            return Err(GridError::Format("band name count mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            bands,
            transform,
            band_names,
            values,
            nodata,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn transform(&self) -> &GeoTransform {
        self.transform_ref()
    }
    fn transform_ref(&self) -> &GeoTransform {
        &self.transform
    }
    pub fn pixel_size(&self) -> f64 {
        self.transform.pixel_size
    }
    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }
    pub fn set_band_names(&mut self, names: Vec<String>) {
        assert_eq!(names.len(), self.bands);
        self.band_names = names;
    }
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    fn index(&self, band: usize, col: usize, row: usize) -> usize {
        debug_assert!(band < self.bands && col < self.width && row < self.height);
        (band * self.height + row) * self.width + col
    }

    #[inline]
    pub fn value(&self, band: usize, col: usize, row: usize) -> f32 {
        self.values[self.index(band, col, row)]
    }

    #[inline]
    pub fn set_value(&mut self, band: usize, col: usize, row: usize, v: f32) {
        let i = self.index(band, col, row);
        self.values[i] = v;
    }

    #[inline]
    pub fn is_nodata(&self, col: usize, row: usize) -> bool {
        self.nodata[row * self.width + col]
    }

    #[inline]
    pub fn set_nodata(&mut self, col: usize, row: usize, nodata: bool) {
        self.nodata[row * self.width + col] = nodata;
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.pixels();
        &self.values[band * n..(band + 1) * n]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.values[band * n..(band + 1) * n]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nodata_mask(&self) -> &[bool] {
        &self.nodata
    }

    pub fn valid_count(&self) -> usize {
        self.nodata.iter().filter(|&&m| !m).count()
    }

    /// True when `other` has the same shape, band count, and georeferencing.
    pub fn co_registered(&self, other: &Grid) -> bool {
        self.width == other.width
            && self.height == other.height
            && (self.transform.pixel_size - other.transform.pixel_size).abs() < 1e-9
            && (self.transform.origin_x - other.transform.origin_x).abs() < 1e-6
            && (self.transform.origin_y - other.transform.origin_y).abs() < 1e-6
    }

    /// Same-shape check that additionally requires matching band counts.
    pub fn check_aligned(&self, other: &Grid) -> Result<()> {
        if self.co_registered(other) {
            Ok(())
        } else {
            Err(GridError::Misaligned)
        }
    }

    /// Copy of a rectangular window (all bands). The window must lie inside.
    pub fn window(&self, col0: usize, row0: usize, w: usize, h: usize) -> Grid {
        assert!(col0 + w <= self.width && row0 + h <= self.height);
        let (ox, oy) = self.transform.pixel_to_map(col0 as f64, row0 as f64);
        let mut out = Grid::filled(
            w,
            h,
            self.bands,
            GeoTransform {
                origin_x: ox,
                origin_y: oy,
                pixel_size: self.transform.pixel_size,
            },
            0.0,
        );
        out.band_names = self.band_names.clone();
        for b in 0..self.bands {
            for r in 0..h {
                let src = self.index(b, col0, row0 + r);
                let dst = out.index(b, 0, r);
                out.values[dst..dst + w].copy_from_slice(&self.values[src..src + w]);
            }
        }
        for r in 0..h {
            for c in 0..w {
                out.nodata[r * w + c] = self.nodata[(row0 + r) * self.width + col0 + c];
            }
        }
        out
    }
}

/// Mirror an out-of-bounds index back into `[0, n)`, repeating the edge
/// sample (`-1 -> 0`, `-2 -> 1`, `n -> n-1`, ...). Folds as often as needed
/// so it also works for pads wider than the grid.
#[inline]
pub fn reflect_index(i: i64, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as i64;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Resample a grid to a new pixel size with bilinear interpolation between
/// source pixel centers.
///
/// The outer extent is preserved; the output width/height are the source
/// extent divided by the target pixel size, rounded to the nearest integer.
/// Output centers outside the source center lattice (a half-pixel fringe)
/// are linearly extrapolated from the nearest source cell, which keeps the
/// operation exact on affine fields. Any output pixel whose 2x2 stencil
/// touches nodata is nodata.
pub fn bilinear_resample(src: &Grid, target_pixel_size: f64) -> Result<Grid> {
    resample(src, target_pixel_size, ResampleKind::Bilinear)
}

/// Nearest-neighbor resampling for categorical layers (class labels must
/// not be blended). Nodata propagates from the selected source pixel.
pub fn nearest_resample(src: &Grid, target_pixel_size: f64) -> Result<Grid> {
    resample(src, target_pixel_size, ResampleKind::Nearest)
}

enum ResampleKind {
    Bilinear,
    Nearest,
}

fn resample(src: &Grid, target_pixel_size: f64, kind: ResampleKind) -> Result<Grid> {
    if src.width == 0 || src.height == 0 || src.bands == 0 {
        return Err(GridError::EmptyInput);
    }
    if target_pixel_size <= 0.0 || !target_pixel_size.is_finite() {
        return Err(GridError::InvalidPixelSize(target_pixel_size));
    }
    let sps = src.transform.pixel_size;
    let scale = sps / target_pixel_size;
    let out_w = ((src.width as f64 * scale).round() as usize).max(1);
    let out_h = ((src.height as f64 * scale).round() as usize).max(1);
    let mut out = Grid::filled(
        out_w,
        out_h,
        src.bands,
        GeoTransform {
            origin_x: src.transform.origin_x,
            origin_y: src.transform.origin_y,
            pixel_size: target_pixel_size,
        },
        0.0,
    );
    out.band_names = src.band_names.clone();

    for row in 0..out_h {
        // Position of the output pixel center on the source center lattice.
        let v = (row as f64 + 0.5) / scale - 0.5;
        for col in 0..out_w {
            let u = (col as f64 + 0.5) / scale - 0.5;
            match kind {
                ResampleKind::Nearest => {
                    let sc = (u.round() as i64).clamp(0, src.width as i64 - 1) as usize;
                    let sr = (v.round() as i64).clamp(0, src.height as i64 - 1) as usize;
                    if src.is_nodata(sc, sr) {
                        out.set_nodata(col, row, true);
                        continue;
                    }
                    for b in 0..src.bands {
                        out.set_value(b, col, row, src.value(b, sc, sr));
                    }
                }
                ResampleKind::Bilinear => {
                    // Clamp to the last full cell; t/s may leave [0,1] at the
                    // fringe, which extrapolates linearly.
                    let i0 = if src.width == 1 {
                        0
                    } else {
                        (u.floor() as i64).clamp(0, src.width as i64 - 2) as usize
                    };
                    let j0 = if src.height == 1 {
                        0
                    } else {
                        (v.floor() as i64).clamp(0, src.height as i64 - 2) as usize
                    };
                    let i1 = (i0 + 1).min(src.width - 1);
                    let j1 = (j0 + 1).min(src.height - 1);
                    let t = if src.width == 1 { 0.0 } else { u - i0 as f64 };
                    let s = if src.height == 1 { 0.0 } else { v - j0 as f64 };
                    if src.is_nodata(i0, j0)
                        || src.is_nodata(i1, j0)
                        || src.is_nodata(i0, j1)
                        || src.is_nodata(i1, j1)
                    {
                        out.set_nodata(col, row, true);
                        continue;
                    }
                    for b in 0..src.bands {
                        let f00 = src.value(b, i0, j0) as f64;
                        let f10 = src.value(b, i1, j0) as f64;
                        let f01 = src.value(b, i0, j1) as f64;
                        let f11 = src.value(b, i1, j1) as f64;
                        let top = f00 + (f10 - f00) * t;
                        let bot = f01 + (f11 - f01) * t;
                        out.set_value(b, col, row, (top + (bot - top) * s) as f32);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Bring every band of a multi-band grid to the target pixel size.
///
/// Bands whose native size is coarser than the grid's pixel size are assumed
/// to be stored block-replicated (each native sample repeated over a
/// `factor x factor` block, as produced by the import converter). Such bands
/// are rebuilt on their native lattice and bilinearly resampled; bands
/// already at the target size are copied untouched.
pub fn upsample_bands(image: &Grid, band_native_sizes: &[f64]) -> Result<Grid> {
    if image.width == 0 || image.height == 0 || image.bands == 0 {
        return Err(GridError::EmptyInput);
    }
    if band_native_sizes.len() != image.bands {
        return Err(GridError::NativeSizeCount {
            expected: image.bands,
            got: band_native_sizes.len(),
        });
    }
    let target = image.transform.pixel_size;
    let mut out = image.clone();
    for (b, &native) in band_native_sizes.iter().enumerate() {
        let ratio = native / target;
        let factor = ratio.round() as usize;
        if factor == 0 || (ratio - factor as f64).abs() > 1e-9 {
            return Err(GridError::NonMultipleNativeSize(native, target));
        }
        if factor == 1 {
            continue;
        }
        if !image.width.is_multiple_of(factor) {
            return Err(GridError::NonDivisibleDimension {
                dim: image.width,
                factor,
            });
        }
        if !image.height.is_multiple_of(factor) {
            return Err(GridError::NonDivisibleDimension {
                dim: image.height,
                factor,
            });
        }
        let cw = image.width / factor;
        let ch = image.height / factor;
        let mut coarse = Grid::filled(
            cw,
            ch,
            1,
            GeoTransform {
                origin_x: image.transform.origin_x,
                origin_y: image.transform.origin_y,
                pixel_size: native,
            },
            0.0,
        );
        for r in 0..ch {
            for c in 0..cw {
                coarse.set_value(0, c, r, image.value(b, c * factor, r * factor));
                if image.is_nodata(c * factor, r * factor) {
                    coarse.set_nodata(c, r, true);
                }
            }
        }
        let fine = bilinear_resample(&coarse, target)?;
        if fine.width != image.width || fine.height != image.height {
            return Err(GridError::Format(
                "upsampled band does not cover the grid".into(),
            ));
        }
        for r in 0..image.height {
            for c in 0..image.width {
                out.set_value(b, c, r, fine.value(0, c, r));
                if fine.is_nodata(c, r) {
                    out.set_nodata(c, r, true);
                }
            }
        }
    }
    Ok(out)
}

/// A patch extracted around a pixel; cells outside the grid were filled by
/// reflection and are counted in `reflected_cells`.
#[derive(Debug, Clone)]
pub struct Patch {
    /// `size x size x bands`, channel-last.
    pub data: Tensor<f32>,
    pub reflected_cells: usize,
}

/// Extract a `size x size x bands` patch centered at (`center_col`,
/// `center_row`). Out-of-bounds cells mirror the in-bounds data.
pub fn extract_patch(
    image: &Grid,
    center_col: usize,
    center_row: usize,
    size: usize,
) -> Result<Patch> {
    if size.is_multiple_of(2) {
        return Err(GridError::EvenPatchSize(size));
    }
    if center_col >= image.width || center_row >= image.height {
        return Err(GridError::CenterOutOfBounds {
            col: center_col as i64,
            row: center_row as i64,
            width: image.width,
            height: image.height,
        });
    }
    let half = (size / 2) as i64;
    let mut data = Tensor::zeros(size, size, image.bands);
    let mut reflected = 0usize;
    for pr in 0..size {
        let rr = center_row as i64 + pr as i64 - half;
        let sr = reflect_index(rr, image.height);
        for pc in 0..size {
            let cc = center_col as i64 + pc as i64 - half;
            let sc = reflect_index(cc, image.width);
            if sr as i64 != rr || sc as i64 != cc {
                reflected += 1;
            }
            for b in 0..image.bands {
                data.set(pr, pc, b, image.value(b, sc, sr));
            }
        }
    }
    Ok(Patch {
        data,
        reflected_cells: reflected,
    })
}

/// One window of an overlapped tiling. `core_*` is the non-overlap core;
/// cores of all windows partition the grid exactly once, and each core keeps
/// at least `overlap` pixels of margin to the window edge on interior sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileWindow {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
    pub core_col0: usize,
    pub core_row0: usize,
    pub core_width: usize,
    pub core_height: usize,
}

fn segment_axis(n: usize, tile: usize, overlap: usize) -> Vec<(usize, usize, usize, usize)> {
    // (start, len, core_start, core_len)
    if n <= tile {
        return vec![(0, n, 0, n)];
    }
    let step = tile - 2 * overlap;
    let mut starts = Vec::new();
    let mut s = 0usize;
    loop {
        if s + tile >= n {
            starts.push(n - tile);
            break;
        }
        starts.push(s);
        s += step;
    }
    let k = starts.len();
    let mut segs = Vec::with_capacity(k);
    for (i, &st) in starts.iter().enumerate() {
        let core_start = if i == 0 { 0 } else { st + overlap };
        let core_end = if i + 1 == k {
            n
        } else {
            starts[i + 1] + overlap
        };
        segs.push((st, tile, core_start, core_end - core_start));
    }
    segs
}

/// Overlapped tiling of a grid. Every pixel is covered at least once;
/// adjacent windows share `overlap` pixels on each side of the core
/// boundary, and the cores tile the grid exactly once.
///
/// Precondition (asserted): `tile > 2 * overlap`.
pub fn iterate_tiles(width: usize, height: usize, tile: usize, overlap: usize) -> Vec<TileWindow> {
    assert!(tile > 2 * overlap, "tile must exceed twice the overlap");
    assert!(width > 0 && height > 0);
    let cols = segment_axis(width, tile, overlap);
    let rows = segment_axis(height, tile, overlap);
    let mut out = Vec::with_capacity(cols.len() * rows.len());
    for &(r0, rh, cr0, crh) in &rows {
        for &(c0, cw, cc0, ccw) in &cols {
            out.push(TileWindow {
                col0: c0,
                row0: r0,
                width: cw,
                height: rh,
                core_col0: cc0,
                core_row0: cr0,
                core_width: ccw,
                core_height: crh,
            });
        }
    }
    out
}
