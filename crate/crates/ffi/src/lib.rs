//! C interface to `rfidetect`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible call returns an
//! [`RfdStatus`]; on failure a description is available from
//! [`rfd_last_error`] on the same thread. Complex buffers are interleaved
//! `re, im` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::Array2;
use rfidetect::autoencoder::{load_checkpoint, AutoencoderModel};
use rfidetect::correlation::{collapse_to_lags, estimate_correlation};
use rfidetect::detector::{classify, Decision, DetectorThreshold};
use rfidetect::imaging::{angles_to_bin, dirty_image};
use rfidetect::sim::{generate_snapshots, snr_to_power, SnapshotBlock, SourceKind, SourceSpec};
use rfidetect::{ArrayGeometry, Complex64, Direction, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    OutOfRange = 4,
    Io = 5,
    Format = 6,
    Training = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Emitter kind for [`RfdSource`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfdSourceKind {
    Soi = 0,
    Rfi = 1,
}

/// Static emitter: direction in radians and SNR or INR in dB.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RfdSource {
    pub kind: RfdSourceKind,
    pub azimuth: f64,
    pub elevation: f64,
    pub level_db: f64,
}

/// Array geometry handle.
pub struct RfdGeometry {
    inner: ArrayGeometry,
}

/// Trained model plus calibrated threshold.
pub struct RfdDetector {
    model: AutoencoderModel,
    threshold: DetectorThreshold,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RfdStatus {
    match e {
        Error::Index(_) | Error::Argument(_) => RfdStatus::InvalidArgument,
        Error::Config(_) => RfdStatus::Config,
        Error::Range(_) => RfdStatus::OutOfRange,
        Error::Training(_) => RfdStatus::Training,
        Error::Format(_) | Error::Json(_) => RfdStatus::Format,
        Error::Io(_) => RfdStatus::Io,
    }
}

fn fail(status: RfdStatus, msg: &str) -> RfdStatus {
    set_last_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), RfdStatus>) -> RfdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            RfdStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(RfdStatus::Panic, "internal panic"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, RfdStatus>;
}

impl<T> OrStatus<T> for rfidetect::Result<T> {
    fn or_status(self) -> Result<T, RfdStatus> {
        self.map_err(|e| fail(status_of(&e), &e.to_string()))
    }
}

unsafe fn nonnull<'a, T>(p: *const T, what: &str) -> Result<&'a T, RfdStatus> {
    p.as_ref().ok_or_else(|| fail(RfdStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], RfdStatus> {
    if p.is_null() {
        return Err(fail(RfdStatus::NullPointer, &format!("{what} is null")));
    }
    if len < need {
        return Err(fail(
            RfdStatus::BufferTooSmall,
            &format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, RfdStatus> {
    if p.is_null() {
        return Err(fail(RfdStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(RfdStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rfd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rfd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a geometry. Spacings and wavelength share one length unit.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn rfd_geometry_new(
    n_y: usize,
    n_z: usize,
    d_y: f64,
    d_z: f64,
    wavelength: f64,
    out: *mut *mut RfdGeometry,
) -> RfdStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(RfdStatus::NullPointer, "out is null"));
        }
        let inner = ArrayGeometry::new(n_y, n_z, d_y, d_z, wavelength).or_status()?;
        *out = Box::into_raw(Box::new(RfdGeometry { inner }));
        Ok(())
    })
}

/// Releases a geometry. Null is ignored.
///
/// # Safety
/// `geom` must be null or a handle from [`rfd_geometry_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfd_geometry_free(geom: *mut RfdGeometry) {
    if !geom.is_null() {
        drop(Box::from_raw(geom));
    }
}

/// Number of elements, `n_y·n_z`; 0 for a null handle.
///
/// # Safety
/// `geom` must be null or a live geometry handle.
#[no_mangle]
pub unsafe extern "C" fn rfd_geometry_elements(geom: *const RfdGeometry) -> usize {
    geom.as_ref().map_or(0, |g| g.inner.element_count())
}

/// Writes the steering vector for (azimuth, elevation) in radians as
/// `2·elements` interleaved doubles, element order `n·n_z + m`.
///
/// # Safety
/// `geom` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rfd_steering_vector(
    geom: *const RfdGeometry,
    azimuth: f64,
    elevation: f64,
    out: *mut f64,
    len: usize,
) -> RfdStatus {
    guard(|| {
        let g = &nonnull(geom, "geometry")?.inner;
        let dir = Direction::new(azimuth, elevation).or_status()?;
        let buf = out_slice(out, len, 2 * g.element_count(), "out")?;
        for (pair, z) in buf.chunks_exact_mut(2).zip(g.steering_vector(dir)) {
            pair[0] = z.re;
            pair[1] = z.im;
        }
        Ok(())
    })
}

/// Image bin nearest to (azimuth, elevation) in radians.
///
/// # Safety
/// `geom` must be a live handle; `u` and `v` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfd_angles_to_bin(
    geom: *const RfdGeometry,
    azimuth: f64,
    elevation: f64,
    u_fft: usize,
    v_fft: usize,
    u: *mut i64,
    v: *mut i64,
) -> RfdStatus {
    guard(|| {
        let g = &nonnull(geom, "geometry")?.inner;
        if u.is_null() || v.is_null() {
            return Err(fail(RfdStatus::NullPointer, "bin outputs are null"));
        }
        let dir = Direction::new(azimuth, elevation).or_status()?;
        let (bu, bv) = angles_to_bin(dir, g, u_fft, v_fft).or_status()?;
        *u = bu;
        *v = bv;
        Ok(())
    })
}

fn image_into(geom: &ArrayGeometry, block: &SnapshotBlock, u_fft: usize, v_fft: usize, buf: &mut [f64]) -> Result<(), RfdStatus> {
    let corr = estimate_correlation(block).or_status()?;
    let lags = collapse_to_lags(&corr, geom, false).or_status()?;
    let img = dirty_image(&lags, geom, u_fft, v_fft).or_status()?;
    for (dst, src) in buf.iter_mut().zip(img.pixels.iter()) {
        *dst = *src;
    }
    Ok(())
}

/// Dirty image from `snapshots` rows of interleaved complex samples
/// (`2·elements` doubles per row). Writes `u_fft·v_fft` pixels, row `u`
/// major; pixel `(u, v)` sits at `(u + u_fft/2)·v_fft + v + v_fft/2`.
///
/// # Safety
/// `geom` must be a live handle; `samples` must hold
/// `snapshots·2·elements` doubles; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rfd_dirty_image(
    geom: *const RfdGeometry,
    samples: *const f64,
    snapshots: usize,
    u_fft: usize,
    v_fft: usize,
    out: *mut f64,
    len: usize,
) -> RfdStatus {
    guard(|| {
        let g = &nonnull(geom, "geometry")?.inner;
        if samples.is_null() {
            return Err(fail(RfdStatus::NullPointer, "samples is null"));
        }
        let n = g.element_count();
        let raw = std::slice::from_raw_parts(samples, snapshots * 2 * n);
        let data = Array2::from_shape_fn((snapshots, n), |(s, i)| {
            Complex64::new(raw[2 * (s * n + i)], raw[2 * (s * n + i) + 1])
        });
        let buf = out_slice(out, len, u_fft * v_fft, "out")?;
        let block = SnapshotBlock {
            data,
            geometry: *g,
            seed: 0,
        };
        image_into(g, &block, u_fft, v_fft, buf)
    })
}

/// Simulates one frame of `count` static sources over unit-power noise
/// and writes its dirty image as in [`rfd_dirty_image`].
///
/// # Safety
/// `geom` must be a live handle; `sources` must hold `count` entries
/// (it may be null when `count` is 0); `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rfd_simulate_image(
    geom: *const RfdGeometry,
    sources: *const RfdSource,
    count: usize,
    snapshots: usize,
    seed: u64,
    u_fft: usize,
    v_fft: usize,
    out: *mut f64,
    len: usize,
) -> RfdStatus {
    guard(|| {
        let g = &nonnull(geom, "geometry")?.inner;
        if sources.is_null() && count > 0 {
            return Err(fail(RfdStatus::NullPointer, "sources is null"));
        }
        let srcs = if count == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(sources, count)
        };
        let specs = srcs
            .iter()
            .map(|s| {
                let kind = match s.kind {
                    RfdSourceKind::Soi => SourceKind::Soi,
                    RfdSourceKind::Rfi => SourceKind::Rfi,
                };
                let dir = Direction::new(s.azimuth, s.elevation)?;
                Ok(SourceSpec::fixed(kind, dir, snr_to_power(s.level_db, 1.0)))
            })
            .collect::<rfidetect::Result<Vec<_>>>()
            .or_status()?;
        let buf = out_slice(out, len, u_fft * v_fft, "out")?;
        let block = generate_snapshots(g, &specs, 0, snapshots, 1.0, seed).or_status()?;
        image_into(g, &block, u_fft, v_fft, buf)
    })
}

/// Loads a model checkpoint and a threshold JSON file.
///
/// # Safety
/// Paths must be NUL-terminated UTF-8; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfd_detector_load(
    checkpoint_path: *const c_char,
    threshold_path: *const c_char,
    out: *mut *mut RfdDetector,
) -> RfdStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(RfdStatus::NullPointer, "out is null"));
        }
        let ckpt = path_arg(checkpoint_path, "checkpoint path")?;
        let thr = path_arg(threshold_path, "threshold path")?;
        let (model, _) = load_checkpoint(ckpt).or_status()?;
        let threshold = DetectorThreshold::load(thr).or_status()?;
        *out = Box::into_raw(Box::new(RfdDetector { model, threshold }));
        Ok(())
    })
}

/// Releases a detector. Null is ignored.
///
/// # Safety
/// `det` must be null or a handle from [`rfd_detector_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rfd_detector_free(det: *mut RfdDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Features per frame the detector expects; 0 for a null handle.
///
/// # Safety
/// `det` must be null or a live detector handle.
#[no_mangle]
pub unsafe extern "C" fn rfd_detector_feature_dim(det: *const RfdDetector) -> usize {
    det.as_ref().map_or(0, |d| d.model.config.input_dim)
}

/// Calibrated threshold; NaN for a null handle.
///
/// # Safety
/// `det` must be null or a live detector handle.
#[no_mangle]
pub unsafe extern "C" fn rfd_detector_threshold(det: *const RfdDetector) -> f64 {
    det.as_ref().map_or(f64::NAN, |d| d.threshold.threshold)
}

/// Scores one sequence of `frames` rows of `dim` features (normalized
/// image followed by the two look-angle features). Writes the
/// reconstruction error and 1 for anomalous, 0 for clean.
///
/// # Safety
/// `det` must be a live handle; `features` must hold `frames·dim` doubles;
/// `error` and `anomalous` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rfd_detector_classify(
    det: *const RfdDetector,
    features: *const f64,
    frames: usize,
    dim: usize,
    error: *mut f64,
    anomalous: *mut i32,
) -> RfdStatus {
    guard(|| {
        let d = nonnull(det, "detector")?;
        if features.is_null() || error.is_null() || anomalous.is_null() {
            return Err(fail(RfdStatus::NullPointer, "classify argument is null"));
        }
        if frames == 0 {
            return Err(fail(RfdStatus::InvalidArgument, "sequence has no frames"));
        }
        let raw = std::slice::from_raw_parts(features, frames * dim);
        let seq = Array2::from_shape_vec((frames, dim), raw.to_vec())
            .map_err(|e| fail(RfdStatus::InvalidArgument, &e.to_string()))?;
        let (decision, err) = classify(&d.model, &d.threshold, &seq).or_status()?;
        *error = err;
        *anomalous = i32::from(decision == Decision::Anomalous);
        Ok(())
    })
}
