//! C ABI over the hcsmap pipeline: GRD1 grid access, NNP1 model loading,
//! dense canopy/carbon inference, HCS classification, and regression
//! metrics.
//!
//! Conventions:
//! - Handles (`HcsmapGrid`, `HcsmapModel`, `HcsmapEnsemble`) are opaque;
//!   create them through `*_read` calls and release them with the matching
//!   `*_free`. Passing a handle to the wrong free is undefined behavior.
//! - Every fallible function returns an [`HcsmapStatus`]; on anything but
//!   `OK` the thread-local message from [`hcsmap_last_error_message`]
//!   describes the failure (valid until the next failing call on the same
//!   thread).
//! - Out-parameters are written only on `OK`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};

use hcsmap::canopy::{predict_dense, Tiling};
use hcsmap::carbon::{predict_carbon, CarbonEnsemble};
use hcsmap::cli::load_ensemble;
use hcsmap::evalstats::regression_metrics;
use hcsmap::grid::io::{read_grd1, write_grd1};
use hcsmap::grid::Grid;
use hcsmap::hcs::{binary_collapse, classify_carbon, classify_grid, HcsClass, HcsThresholds};
use hcsmap::nn::{read_nnp1, Model};

/// Result codes returned by every fallible API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcsmapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidArgument = 4,
    Internal = 5,
}

/// Opaque multi-band raster handle.
pub struct HcsmapGrid(Grid);

/// Opaque canopy-model handle.
pub struct HcsmapModel(Model<f32>);

/// Opaque five-member carbon-ensemble handle.
pub struct HcsmapEnsemble(CarbonEnsemble);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: HcsmapStatus, message: impl std::fmt::Display) -> HcsmapStatus {
    let text = CString::new(message.to_string())
        .unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
    status
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hcsmap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hcsmap_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// # Safety
/// `path` must be a valid NUL-terminated string.
unsafe fn path_from(path: *const c_char) -> Result<PathBuf, HcsmapStatus> {
    if path.is_null() {
        return Err(fail(HcsmapStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|e| fail(HcsmapStatus::InvalidUtf8, e))?;
    Ok(Path::new(s).to_path_buf())
}

macro_rules! nonnull {
    ($ptr:expr, $name:literal) => {
        if $ptr.is_null() {
            return fail(HcsmapStatus::NullPointer, concat!($name, " is null"));
        }
    };
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

/// Read a GRD1 grid from disk.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_grid_read(
    path: *const c_char,
    out: *mut *mut HcsmapGrid,
) -> HcsmapStatus {
    nonnull!(out, "out");
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match read_grd1(&path) {
        Ok(grid) => {
            *out = Box::into_raw(Box::new(HcsmapGrid(grid)));
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::Io, e),
    }
}

/// Write a grid as GRD1 (atomically).
///
/// # Safety
/// `grid` must be a live handle from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_grid_write(
    grid: *const HcsmapGrid,
    path: *const c_char,
) -> HcsmapStatus {
    nonnull!(grid, "grid");
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match write_grd1(&(*grid).0, &path) {
        Ok(()) => HcsmapStatus::Ok,
        Err(e) => fail(HcsmapStatus::Io, e),
    }
}

/// # Safety
/// `grid` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_grid_free(grid: *mut HcsmapGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Grid width in pixels (0 when the handle is null).
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_grid_width(grid: *const HcsmapGrid) -> usize {
    if grid.is_null() {
        0
    } else {
        (*grid).0.width()
    }
}

/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_grid_height(grid: *const HcsmapGrid) -> usize {
    if grid.is_null() {
        0
    } else {
        (*grid).0.height()
    }
}

/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_grid_bands(grid: *const HcsmapGrid) -> usize {
    if grid.is_null() {
        0
    } else {
        (*grid).0.bands()
    }
}

/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_grid_pixel_size(grid: *const HcsmapGrid) -> f64 {
    if grid.is_null() {
        0.0
    } else {
        (*grid).0.pixel_size()
    }
}

/// Read one pixel. `out_is_nodata` is 1 when the pixel is masked (the value
/// is still written).
///
/// # Safety
/// All pointers must be valid; `grid` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_grid_value(
    grid: *const HcsmapGrid,
    band: usize,
    col: usize,
    row: usize,
    out_value: *mut f32,
    out_is_nodata: *mut u8,
) -> HcsmapStatus {
    nonnull!(grid, "grid");
    nonnull!(out_value, "out_value");
    nonnull!(out_is_nodata, "out_is_nodata");
    let g = &(*grid).0;
    if band >= g.bands() || col >= g.width() || row >= g.height() {
        return fail(
            HcsmapStatus::InvalidArgument,
            format!(
                "index ({band},{col},{row}) outside {}x{}x{}",
                g.bands(),
                g.width(),
                g.height()
            ),
        );
    }
    *out_value = g.value(band, col, row);
    *out_is_nodata = u8::from(g.is_nodata(col, row));
    HcsmapStatus::Ok
}

// ---------------------------------------------------------------------------
// Models and inference
// ---------------------------------------------------------------------------

/// Load an NNP1 checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_model_read(
    path: *const c_char,
    out: *mut *mut HcsmapModel,
) -> HcsmapStatus {
    nonnull!(out, "out");
    let path = match path_from(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match read_nnp1::<f32>(&path) {
        Ok((model, _)) => {
            *out = Box::into_raw(Box::new(HcsmapModel(model)));
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::Io, e),
    }
}

/// # Safety
/// `model` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_model_free(model: *mut HcsmapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_model_receptive_field(model: *const HcsmapModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).0.receptive_field()
    }
}

/// Dense canopy-height inference over a 12-band image grid. Pass `tile` or
/// `overlap` as 0 for the defaults.
///
/// # Safety
/// `model` and `image` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_predict_dense(
    model: *const HcsmapModel,
    image: *const HcsmapGrid,
    tile: usize,
    overlap: usize,
    out: *mut *mut HcsmapGrid,
) -> HcsmapStatus {
    nonnull!(model, "model");
    nonnull!(image, "image");
    nonnull!(out, "out");
    let default = Tiling::default();
    let tiling = Tiling {
        tile: if tile == 0 { default.tile } else { tile },
        overlap: if overlap == 0 {
            default.overlap
        } else {
            overlap
        },
    };
    match predict_dense(&(*model).0, &(*image).0, Some(tiling), 1) {
        Ok(grid) => {
            *out = Box::into_raw(Box::new(HcsmapGrid(grid)));
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::InvalidArgument, e),
    }
}

/// Load a five-member ensemble directory (member_0.nnp1 .. member_4.nnp1).
///
/// # Safety
/// `dir` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_ensemble_read(
    dir: *const c_char,
    out: *mut *mut HcsmapEnsemble,
) -> HcsmapStatus {
    nonnull!(out, "out");
    let dir = match path_from(dir) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_ensemble(&dir) {
        Ok(ensemble) => {
            *out = Box::into_raw(Box::new(HcsmapEnsemble(ensemble)));
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::Io, e),
    }
}

/// # Safety
/// `ensemble` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_ensemble_free(ensemble: *mut HcsmapEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Ensemble carbon prediction over a 1-band height grid: writes the mean
/// map and the deep-ensemble variance map.
///
/// # Safety
/// `ensemble` and `height` must be live handles; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_predict_carbon(
    ensemble: *const HcsmapEnsemble,
    height: *const HcsmapGrid,
    out_mean: *mut *mut HcsmapGrid,
    out_variance: *mut *mut HcsmapGrid,
) -> HcsmapStatus {
    nonnull!(ensemble, "ensemble");
    nonnull!(height, "height");
    nonnull!(out_mean, "out_mean");
    nonnull!(out_variance, "out_variance");
    match predict_carbon(&(*ensemble).0, &(*height).0, None, 1) {
        Ok(pred) => {
            *out_mean = Box::into_raw(Box::new(HcsmapGrid(pred.mean)));
            *out_variance = Box::into_raw(Box::new(HcsmapGrid(pred.variance)));
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::InvalidArgument, e),
    }
}

// ---------------------------------------------------------------------------
// Stratification and metrics
// ---------------------------------------------------------------------------

/// Class code for one carbon density (default thresholds); see the legend
/// in the library docs: 0=OL 1=S 2=YRF 3=LDF 4=MDF 5=HDF.
///
/// # Safety
/// `out_class` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_classify_density(density: f64, out_class: *mut u8) -> HcsmapStatus {
    nonnull!(out_class, "out_class");
    match classify_carbon(density, &HcsThresholds::default()) {
        Ok(class) => {
            *out_class = class.code();
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::InvalidArgument, e),
    }
}

/// Classify a carbon-density grid into a class-code grid (default
/// thresholds, no overlays).
///
/// # Safety
/// `carbon` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_classify_grid(
    carbon: *const HcsmapGrid,
    out: *mut *mut HcsmapGrid,
) -> HcsmapStatus {
    nonnull!(carbon, "carbon");
    nonnull!(out, "out");
    match classify_grid(&(*carbon).0, &HcsThresholds::default()) {
        Ok(grid) => {
            *out = Box::into_raw(Box::new(HcsmapGrid(grid)));
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::InvalidArgument, e),
    }
}

/// Binary collapse of a class code: 0 = OLS, 1 = HCS, 2 = Other.
///
/// # Safety
/// `out_binary` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_binary_collapse(
    class_code: u8,
    out_binary: *mut u8,
) -> HcsmapStatus {
    nonnull!(out_binary, "out_binary");
    match HcsClass::from_code(class_code as f32) {
        Ok(class) => {
            *out_binary = match binary_collapse(class) {
                hcsmap::hcs::BinaryHcs::Ols => 0,
                hcsmap::hcs::BinaryHcs::Hcs => 1,
                hcsmap::hcs::BinaryHcs::Other => 2,
            };
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::InvalidArgument, e),
    }
}

/// RMSE / MAE / ME / valid-pixel count between two co-registered 1-band
/// grids (nodata in either grid excluded).
///
/// # Safety
/// Grid handles must be live; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn hcsmap_regression_metrics(
    pred: *const HcsmapGrid,
    reference: *const HcsmapGrid,
    out_rmse: *mut f64,
    out_mae: *mut f64,
    out_me: *mut f64,
    out_count: *mut usize,
) -> HcsmapStatus {
    nonnull!(pred, "pred");
    nonnull!(reference, "reference");
    nonnull!(out_rmse, "out_rmse");
    nonnull!(out_mae, "out_mae");
    nonnull!(out_me, "out_me");
    nonnull!(out_count, "out_count");
    match regression_metrics(&(*pred).0, &(*reference).0, None) {
        Ok(m) => {
            *out_rmse = m.rmse;
            *out_mae = m.mae;
            *out_me = m.me;
            *out_count = m.count;
            HcsmapStatus::Ok
        }
        Err(e) => fail(HcsmapStatus::InvalidArgument, e),
    }
}
