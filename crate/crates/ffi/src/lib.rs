//! C ABI over `gprhog`.
//!
//! Volumes and forests cross the boundary as opaque handles that the caller
//! releases with the matching `*_free`. Every fallible call returns a
//! `GprStatus`; on failure a description is available from
//! `gpr_last_error_message` until the next failing call on the same thread.
//! Panics are caught and reported as `GPR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gprhog::features::{alarm_feature, GprHogConfig};
use gprhog::forest::{self, Forest, ForestConfig};
use gprhog::hog::{hog_feature, HogConfig};
use gprhog::preprocess::{preprocess, PreprocConfig};
use gprhog::synth::{generate_lane, SynthConfig};
use gprhog::volume::{load_volume, save_volume, Volume};
use ndarray::{Array3, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Compute = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Loaded or generated GPR volume.
pub struct GprVolume {
    inner: Volume,
}

/// Trained randomized-tree classifier.
pub struct GprForest {
    inner: Forest,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(GprStatus, String);

type FfiResult = Result<(), Failure>;

fn fail<T>(status: GprStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> FfiResult) -> GprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GprStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GprStatus::Panic
        }
    }
}

fn volume_status(e: &gprhog::volume::VolumeError) -> GprStatus {
    match e {
        gprhog::volume::VolumeError::Io(_) => GprStatus::Io,
        _ => GprStatus::Format,
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return fail(GprStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(GprStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn volume_ref<'a>(v: *const GprVolume) -> Result<&'a Volume, Failure> {
    match v.as_ref() {
        Some(v) => Ok(&v.inner),
        None => fail(GprStatus::NullPointer, "volume handle is null"),
    }
}

unsafe fn forest_ref<'a>(f: *const GprForest) -> Result<&'a Forest, Failure> {
    match f.as_ref() {
        Some(f) => Ok(&f.inner),
        None => fail(GprStatus::NullPointer, "forest handle is null"),
    }
}

unsafe fn out_ptr<T>(out: *mut T) -> Result<&'static mut T, Failure> {
    match out.as_mut() {
        Some(o) => Ok(o),
        None => fail(GprStatus::NullPointer, "output pointer is null"),
    }
}

unsafe fn write_vec(src: &[f64], out: *mut f64, out_len: usize) -> FfiResult {
    if out.is_null() {
        return fail(GprStatus::NullPointer, "output buffer is null");
    }
    if out_len < src.len() {
        return fail(
            GprStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn boxed_volume(v: Volume) -> *mut GprVolume {
    Box::into_raw(Box::new(GprVolume { inner: v }))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gpr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Length of `gpr_hog_feature` output under the default geometry (108).
#[no_mangle]
pub extern "C" fn gpr_hog_feature_len() -> usize {
    HogConfig::default().feature_len()
}

/// Length of `gpr_alarm_feature` output under the default geometry (216).
#[no_mangle]
pub extern "C" fn gpr_alarm_feature_len() -> usize {
    GprHogConfig::default().feature_len()
}

/// Reads a `GPRV` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpr_volume_load(path: *const c_char, out: *mut *mut GprVolume) -> GprStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let path = path_arg(path)?;
        match load_volume(&path) {
            Ok(v) => {
                *out = boxed_volume(v);
                Ok(())
            }
            Err(e) => fail(volume_status(&e), format!("{}: {e}", path.display())),
        }
    })
}

/// Writes a volume as a `GPRV` file (amplitudes stored as `f32`).
///
/// # Safety
/// `volume` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gpr_volume_save(volume: *const GprVolume, path: *const c_char) -> GprStatus {
    guard(|| {
        let v = volume_ref(volume)?;
        let path = path_arg(path)?;
        save_volume(v, &path).or_else(|e| fail(volume_status(&e), format!("{}: {e}", path.display())))
    })
}

/// Builds a volume from `n_down·n_cross·n_time` samples laid out
/// `[down][cross][time]` (time fastest).
///
/// # Safety
/// `data` must point to that many readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpr_volume_from_data(
    data: *const f64,
    n_down: usize,
    n_cross: usize,
    n_time: usize,
    dt_ns: f64,
    dx_down_m: f64,
    dx_cross_m: f64,
    out: *mut *mut GprVolume,
) -> GprStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if data.is_null() {
            return fail(GprStatus::NullPointer, "data is null");
        }
        let Some(len) = n_down.checked_mul(n_cross).and_then(|x| x.checked_mul(n_time)) else {
            return fail(GprStatus::InvalidArgument, "dimensions overflow");
        };
        let samples = std::slice::from_raw_parts(data, len).to_vec();
        let arr = Array3::from_shape_vec((n_down, n_cross, n_time), samples)
            .or_else(|e| fail(GprStatus::InvalidArgument, e.to_string()))?;
        match Volume::new(arr, dt_ns, dx_down_m, dx_cross_m) {
            Ok(v) => {
                *out = boxed_volume(v);
                Ok(())
            }
            Err(e) => fail(GprStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `volume` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpr_volume_dims(
    volume: *const GprVolume,
    n_down: *mut usize,
    n_cross: *mut usize,
    n_time: *mut usize,
) -> GprStatus {
    guard(|| {
        let v = volume_ref(volume)?;
        *out_ptr(n_down)? = v.n_down();
        *out_ptr(n_cross)? = v.n_cross();
        *out_ptr(n_time)? = v.n_time();
        Ok(())
    })
}

/// Copies the samples (`[down][cross][time]`, time fastest) into `out`.
///
/// # Safety
/// `volume` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gpr_volume_copy_data(volume: *const GprVolume, out: *mut f64, out_len: usize) -> GprStatus {
    guard(|| {
        let v = volume_ref(volume)?;
        let flat: Vec<f64> = v.data().iter().copied().collect();
        write_vec(&flat, out, out_len)
    })
}

/// Releases a volume handle. Null is ignored.
///
/// # Safety
/// `volume` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpr_volume_free(volume: *mut GprVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Synthetic lane `lane_id` under the default generator settings and `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpr_synth_lane(seed: u64, lane_id: u32, out: *mut *mut GprVolume) -> GprStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        if lane_id as usize >= cfg.n_lanes {
            return fail(
                GprStatus::InvalidArgument,
                format!("lane_id {lane_id} out of range (0..{})", cfg.n_lanes),
            );
        }
        match generate_lane(&cfg, lane_id) {
            Ok((v, _)) => {
                *out = boxed_volume(v);
                Ok(())
            }
            Err(e) => fail(GprStatus::Compute, e.to_string()),
        }
    })
}

/// Ground alignment, crop and depth normalization with default settings.
/// The input handle is left untouched.
///
/// # Safety
/// `volume` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpr_preprocess(volume: *const GprVolume, out: *mut *mut GprVolume) -> GprStatus {
    guard(|| {
        let v = volume_ref(volume)?;
        let out = out_ptr(out)?;
        match preprocess(v, &PreprocConfig::default()) {
            Ok(p) => {
                *out = boxed_volume(p);
                Ok(())
            }
            Err(e) => fail(GprStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// HOG descriptor of a row-major `rows × cols` patch (rows = time) under the
/// default 18×20 geometry.
///
/// # Safety
/// `patch` must hold `rows·cols` doubles; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gpr_hog_feature(
    patch: *const f64,
    rows: usize,
    cols: usize,
    normalize: bool,
    out: *mut f64,
    out_len: usize,
) -> GprStatus {
    guard(|| {
        if patch.is_null() {
            return fail(GprStatus::NullPointer, "patch is null");
        }
        let Some(len) = rows.checked_mul(cols) else {
            return fail(GprStatus::InvalidArgument, "dimensions overflow");
        };
        let data = std::slice::from_raw_parts(patch, len);
        let view = ArrayView2::from_shape((rows, cols), data).or_else(|e| fail(GprStatus::InvalidArgument, e.to_string()))?;
        let cfg = HogConfig {
            normalize,
            ..HogConfig::default()
        };
        let f = hog_feature(view, &cfg).or_else(|e| fail(GprStatus::InvalidArgument, e.to_string()))?;
        write_vec(&f, out, out_len)
    })
}

/// `[cross-track ‖ down-track]` descriptor of the alarm at grid position
/// `(down, cross)` and time index `t`, averaged over `avg_halfcount`
/// parallel B-scans on each side.
///
/// # Safety
/// `volume` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gpr_alarm_feature(
    volume: *const GprVolume,
    down: usize,
    cross: usize,
    t: usize,
    normalize: bool,
    avg_halfcount: usize,
    out: *mut f64,
    out_len: usize,
) -> GprStatus {
    guard(|| {
        let v = volume_ref(volume)?;
        let cfg = GprHogConfig {
            hog: HogConfig {
                normalize,
                ..HogConfig::default()
            },
            avg_halfcount,
            ..GprHogConfig::default()
        };
        let f = alarm_feature(v, (down, cross), t, &cfg).or_else(|e| fail(GprStatus::InvalidArgument, e.to_string()))?;
        write_vec(&f, out, out_len)
    })
}

/// Trains on `n_rows` row-major feature vectors of length `dim`; labels are
/// nonzero for threats.
///
/// # Safety
/// `features` must hold `n_rows·dim` doubles, `labels` `n_rows` bytes;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpr_forest_train(
    features: *const f64,
    labels: *const u8,
    n_rows: usize,
    dim: usize,
    n_trees: usize,
    n_split_candidates: usize,
    min_leaf: usize,
    seed: u64,
    out: *mut *mut GprForest,
) -> GprStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if features.is_null() || labels.is_null() {
            return fail(GprStatus::NullPointer, "features or labels is null");
        }
        if dim == 0 {
            return fail(GprStatus::InvalidArgument, "dim must be positive");
        }
        let Some(len) = n_rows.checked_mul(dim) else {
            return fail(GprStatus::InvalidArgument, "dimensions overflow");
        };
        let x: Vec<&[f64]> = std::slice::from_raw_parts(features, len).chunks_exact(dim).collect();
        let y: Vec<bool> = std::slice::from_raw_parts(labels, n_rows).iter().map(|&l| l != 0).collect();
        let cfg = ForestConfig {
            n_trees,
            n_split_candidates,
            min_leaf,
            seed,
        };
        match forest::train(&x, &y, &cfg) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(GprForest { inner: f }));
                Ok(())
            }
            Err(e) => fail(GprStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Threat confidence in `[0, 1]` for one feature vector.
///
/// # Safety
/// `forest` must be a live handle; `feature` must hold `dim` doubles;
/// `confidence` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpr_forest_predict(
    forest: *const GprForest,
    feature: *const f64,
    dim: usize,
    confidence: *mut f64,
) -> GprStatus {
    guard(|| {
        let f = forest_ref(forest)?;
        let confidence = out_ptr(confidence)?;
        if feature.is_null() {
            return fail(GprStatus::NullPointer, "feature is null");
        }
        let x = std::slice::from_raw_parts(feature, dim);
        *confidence = f.predict(x).or_else(|e| fail(GprStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// # Safety
/// `forest` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gpr_forest_save(forest: *const GprForest, path: *const c_char) -> GprStatus {
    guard(|| {
        let f = forest_ref(forest)?;
        let path = path_arg(path)?;
        forest::save_forest(f, &path).or_else(|e| fail(GprStatus::Io, format!("{}: {e}", path.display())))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gpr_forest_load(path: *const c_char, out: *mut *mut GprForest) -> GprStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let path = path_arg(path)?;
        match forest::load_forest(&path) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(GprForest { inner: f }));
                Ok(())
            }
            Err(forest::ForestError::Io(e)) => fail(GprStatus::Io, format!("{}: {e}", path.display())),
            Err(e) => fail(GprStatus::Format, format!("{}: {e}", path.display())),
        }
    })
}

/// Releases a forest handle. Null is ignored.
///
/// # Safety
/// `forest` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpr_forest_free(forest: *mut GprForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}
