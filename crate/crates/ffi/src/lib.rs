//! C ABI over `gsmr-core`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `gsmr_*` constructor and released with the matching `*_free`. Functions
//! return a [`GsmrStatus`]; on failure the message is available from
//! [`gsmr_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gsmr_core::acquisition::{adjoint_a, AcquisitionModel, DcNorm, KSpaceData};
use gsmr_core::gaussian::GaussianCloud;
use gsmr_core::io::{self, Container};
use gsmr_core::metrics;
use gsmr_core::objective::TvKind;
use gsmr_core::simkit::{self, Phantom};
use gsmr_core::trainer::{self, SplitMode, TrainConfig};
use gsmr_core::volume::{ComplexVolume, Mask};
use gsmr_core::voxelizer::voxelize;
use gsmr_core::Error;
use num_complex::Complex64;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GsmrStatus {
    Ok = 0,
    InvalidParameter = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InvalidConfig = 4,
    Format = 5,
    Diverged = 6,
    Io = 7,
    Json = 8,
    NullPointer = 9,
    InvalidUtf8 = 10,
    Panic = 11,
}

impl From<&Error> for GsmrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter(_) => Self::InvalidParameter,
            Error::InvalidArgument(_) => Self::InvalidArgument,
            Error::DimensionMismatch { .. } => Self::DimensionMismatch,
            Error::InvalidConfig(_) => Self::InvalidConfig,
            Error::Format { .. } => Self::Format,
            Error::Diverged { .. } => Self::Diverged,
            Error::Io(_) => Self::Io,
            Error::Json(_) => Self::Json,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GsmrPhantomKind {
    SheppLogan = 0,
    SheppLoganReal = 1,
    Blobs = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GsmrSplitMode {
    Original = 0,
    LongAxis = 1,
}

/// Flat mirror of the training configuration.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GsmrTrainConfig {
    pub init_points: usize,
    pub density_scale: f64,
    pub grad_threshold: f64,
    pub size_threshold: f64,
    pub lambda: f64,
    pub max_gaussians: usize,
    pub densify_interval: usize,
    pub max_iters: usize,
    pub split_mode: GsmrSplitMode,
    pub prune_eps: f64,
    pub lr_position_per_dim: f64,
    pub lr_log_scale: f64,
    pub lr_rotation: f64,
    pub lr_density: f64,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    /// True selects the L1 data term instead of squared L2.
    pub dc_l1: bool,
    /// True selects isotropic TV.
    pub tv_isotropic: bool,
    pub eval_interval: usize,
    pub seed: u64,
}

impl From<&TrainConfig> for GsmrTrainConfig {
    fn from(c: &TrainConfig) -> Self {
        Self {
            init_points: c.init_points,
            density_scale: c.density_scale,
            grad_threshold: c.grad_threshold,
            size_threshold: c.size_threshold,
            lambda: c.lambda,
            max_gaussians: c.max_gaussians,
            densify_interval: c.densify_interval,
            max_iters: c.max_iters,
            split_mode: match c.split_mode {
                SplitMode::Original => GsmrSplitMode::Original,
                SplitMode::LongAxis => GsmrSplitMode::LongAxis,
            },
            prune_eps: c.prune_eps,
            lr_position_per_dim: c.lr.position_per_dim,
            lr_log_scale: c.lr.log_scale,
            lr_rotation: c.lr.rotation,
            lr_density: c.lr.density,
            plateau_window: c.plateau_window,
            plateau_tol: c.plateau_tol,
            dc_l1: c.dc_norm == DcNorm::L1,
            tv_isotropic: c.tv == TvKind::Isotropic,
            eval_interval: c.eval_interval,
            seed: c.seed,
        }
    }
}

impl From<&GsmrTrainConfig> for TrainConfig {
    fn from(c: &GsmrTrainConfig) -> Self {
        let mut t = TrainConfig {
            init_points: c.init_points,
            density_scale: c.density_scale,
            grad_threshold: c.grad_threshold,
            size_threshold: c.size_threshold,
            lambda: c.lambda,
            max_gaussians: c.max_gaussians,
            densify_interval: c.densify_interval,
            max_iters: c.max_iters,
            split_mode: match c.split_mode {
                GsmrSplitMode::Original => SplitMode::Original,
                GsmrSplitMode::LongAxis => SplitMode::LongAxis,
            },
            prune_eps: c.prune_eps,
            plateau_window: c.plateau_window,
            plateau_tol: c.plateau_tol,
            dc_norm: if c.dc_l1 { DcNorm::L1 } else { DcNorm::SquaredL2 },
            tv: if c.tv_isotropic { TvKind::Isotropic } else { TvKind::Anisotropic },
            eval_interval: c.eval_interval,
            seed: c.seed,
            ..TrainConfig::default()
        };
        t.lr.position_per_dim = c.lr_position_per_dim;
        t.lr.log_scale = c.lr_log_scale;
        t.lr.rotation = c.lr_rotation;
        t.lr.density = c.lr_density;
        t
    }
}

pub struct GsmrVolume(ComplexVolume);
pub struct GsmrMask(Mask);
pub struct GsmrCoils(Vec<ComplexVolume>);
pub struct GsmrKSpace(KSpaceData);
pub struct GsmrCloud(GaussianCloud);
pub struct GsmrAcquisition(AcquisitionModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Utf8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> GsmrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            GsmrStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(&e.to_string());
            GsmrStatus::from(&e)
        }
        Ok(Err(Failure::Null(name))) => {
            set_last_error(&format!("null pointer passed as `{name}`"));
            GsmrStatus::NullPointer
        }
        Ok(Err(Failure::Utf8)) => {
            set_last_error("path is not valid UTF-8");
            GsmrStatus::InvalidUtf8
        }
        Err(_) => {
            set_last_error("internal panic");
            GsmrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn path(p: *const c_char) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| Failure::Utf8)
}

unsafe fn dims3(p: *const usize) -> FfiResult<[usize; 3]> {
    if p.is_null() {
        return Err(Failure::Null("dims"));
    }
    let s = std::slice::from_raw_parts(p, 3);
    Ok([s[0], s[1], s[2]])
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `gsmr_*` call on the same thread.
#[no_mangle]
pub extern "C" fn gsmr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ---- volumes ----

/// Creates a volume from `2 * nx * ny * nz` interleaved re/im doubles.
///
/// # Safety
/// `dims` points to 3 values; `data` points to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gsmr_volume_from_data(
    dims: *const usize,
    data: *const f64,
    len: usize,
    out: *mut *mut GsmrVolume,
) -> GsmrStatus {
    guard(|| {
        let d = dims3(dims)?;
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let raw = std::slice::from_raw_parts(data, len);
        let n = d[0].checked_mul(d[1]).and_then(|v| v.checked_mul(d[2])).unwrap_or(usize::MAX);
        if n.checked_mul(2) != Some(len) {
            return Err(Error::InvalidArgument(format!("expected {} doubles for dims {d:?}, got {len}", n.saturating_mul(2))).into());
        }
        let values = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        emit(out, GsmrVolume(ComplexVolume::from_data(d, values)?))
    })
}

/// # Safety
/// `v` is a live volume handle; `dims` points to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn gsmr_volume_dims(v: *const GsmrVolume, dims: *mut usize) -> GsmrStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        if dims.is_null() {
            return Err(Failure::Null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&v.0.dims());
        Ok(())
    })
}

/// Copies the samples as interleaved re/im doubles; `len` must be exactly
/// twice the voxel count.
///
/// # Safety
/// `v` is a live volume handle; `data` points to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gsmr_volume_copy_data(v: *const GsmrVolume, data: *mut f64, len: usize) -> GsmrStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        if len != 2 * v.0.len() {
            return Err(Error::InvalidArgument(format!("buffer holds {len} doubles, need {}", 2 * v.0.len())).into());
        }
        let dst = std::slice::from_raw_parts_mut(data, len);
        for (d, s) in dst.chunks_exact_mut(2).zip(v.0.data()) {
            d[0] = s.re;
            d[1] = s.im;
        }
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_volume_read(path_: *const c_char, out: *mut *mut GsmrVolume) -> GsmrStatus {
    guard(|| emit(out, GsmrVolume(io::read_volume(&path(path_)?)?)))
}

/// # Safety
/// `v` is a live volume handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gsmr_volume_write(v: *const GsmrVolume, path_: *const c_char) -> GsmrStatus {
    guard(|| Ok(io::write_container(&path(path_)?, &Container::Volume(deref(v, "volume")?.0.clone()))?))
}

/// # Safety
/// `v` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsmr_volume_free(v: *mut GsmrVolume) {
    release(v)
}

/// `count` is used by the blobs variant only.
///
/// # Safety
/// `dims` points to 3 values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_phantom(
    dims: *const usize,
    kind: GsmrPhantomKind,
    count: usize,
    seed: u64,
    out: *mut *mut GsmrVolume,
) -> GsmrStatus {
    guard(|| {
        let variant = match kind {
            GsmrPhantomKind::SheppLogan => Phantom::SheppLogan { phase: true },
            GsmrPhantomKind::SheppLoganReal => Phantom::SheppLogan { phase: false },
            GsmrPhantomKind::Blobs => Phantom::Blobs { count },
        };
        emit(out, GsmrVolume(simkit::phantom3d(dims3(dims)?, variant, seed)?))
    })
}

// ---- masks and coils ----

/// # Safety
/// `dims` points to 3 values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_mask_generate(
    dims: *const usize,
    accel: f64,
    calib: usize,
    sigma_frac: f64,
    seed: u64,
    out: *mut *mut GsmrMask,
) -> GsmrStatus {
    guard(|| emit(out, GsmrMask(simkit::gen_mask(dims3(dims)?, accel, calib, sigma_frac, seed)?)))
}

/// # Safety
/// `m` is a live mask handle; `count` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_mask_count(m: *const GsmrMask, count: *mut usize) -> GsmrStatus {
    guard(|| {
        let m = deref(m, "mask")?;
        if count.is_null() {
            return Err(Failure::Null("count"));
        }
        *count = m.0.count();
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_mask_read(path_: *const c_char, out: *mut *mut GsmrMask) -> GsmrStatus {
    guard(|| emit(out, GsmrMask(io::read_mask(&path(path_)?)?)))
}

/// # Safety
/// `m` is a live mask handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gsmr_mask_write(m: *const GsmrMask, path_: *const c_char) -> GsmrStatus {
    guard(|| Ok(io::write_container(&path(path_)?, &Container::Mask(deref(m, "mask")?.0.clone()))?))
}

/// # Safety
/// `m` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsmr_mask_free(m: *mut GsmrMask) {
    release(m)
}

/// # Safety
/// `dims` points to 3 values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_coils_synth(
    dims: *const usize,
    num_coils: usize,
    seed: u64,
    out: *mut *mut GsmrCoils,
) -> GsmrStatus {
    guard(|| emit(out, GsmrCoils(simkit::synth_coils(dims3(dims)?, num_coils, seed)?)))
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_coils_read(path_: *const c_char, out: *mut *mut GsmrCoils) -> GsmrStatus {
    guard(|| emit(out, GsmrCoils(io::read_coils(&path(path_)?)?)))
}

/// # Safety
/// `c` is a live coils handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gsmr_coils_write(c: *const GsmrCoils, path_: *const c_char) -> GsmrStatus {
    guard(|| Ok(io::write_container(&path(path_)?, &Container::CoilMaps(deref(c, "coils")?.0.clone()))?))
}

/// # Safety
/// `c` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsmr_coils_free(c: *mut GsmrCoils) {
    release(c)
}

// ---- acquisition and k-space ----

/// Copies the mask and coil maps into a new acquisition model.
///
/// # Safety
/// `mask` and `coils` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_acquisition_new(
    mask: *const GsmrMask,
    coils: *const GsmrCoils,
    out: *mut *mut GsmrAcquisition,
) -> GsmrStatus {
    guard(|| {
        let m = deref(mask, "mask")?.0.clone();
        let c = deref(coils, "coils")?.0.clone();
        emit(out, GsmrAcquisition(AcquisitionModel::new(m, c)?))
    })
}

/// # Safety
/// `a` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsmr_acquisition_free(a: *mut GsmrAcquisition) {
    release(a)
}

/// Simulates k-space; noise is added only when `add_noise` is true.
///
/// # Safety
/// `volume` and `acq` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_simulate(
    volume: *const GsmrVolume,
    acq: *const GsmrAcquisition,
    add_noise: bool,
    noise_snr_db: f64,
    seed: u64,
    out: *mut *mut GsmrKSpace,
) -> GsmrStatus {
    guard(|| {
        let v = deref(volume, "volume")?;
        let a = deref(acq, "acq")?;
        let snr = add_noise.then_some(noise_snr_db);
        emit(out, GsmrKSpace(simkit::simulate(&v.0, &a.0, snr, seed)?))
    })
}

/// Zero-filled reconstruction.
///
/// # Safety
/// `kspace` and `acq` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_adjoint(
    kspace: *const GsmrKSpace,
    acq: *const GsmrAcquisition,
    out: *mut *mut GsmrVolume,
) -> GsmrStatus {
    guard(|| emit(out, GsmrVolume(adjoint_a(&deref(kspace, "kspace")?.0, &deref(acq, "acq")?.0)?)))
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_kspace_read(path_: *const c_char, out: *mut *mut GsmrKSpace) -> GsmrStatus {
    guard(|| emit(out, GsmrKSpace(io::read_kspace(&path(path_)?)?)))
}

/// # Safety
/// `k` is a live k-space handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gsmr_kspace_write(k: *const GsmrKSpace, path_: *const c_char) -> GsmrStatus {
    guard(|| Ok(io::write_container(&path(path_)?, &Container::KSpace(deref(k, "kspace")?.0.clone()))?))
}

/// # Safety
/// `k` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsmr_kspace_free(k: *mut GsmrKSpace) {
    release(k)
}

// ---- clouds ----

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_cloud_read(path_: *const c_char, out: *mut *mut GsmrCloud) -> GsmrStatus {
    guard(|| emit(out, GsmrCloud(io::read_cloud(&path(path_)?)?)))
}

/// # Safety
/// `c` is a live cloud handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gsmr_cloud_write(c: *const GsmrCloud, path_: *const c_char) -> GsmrStatus {
    guard(|| Ok(io::write_container(&path(path_)?, &Container::Cloud(deref(c, "cloud")?.0.clone()))?))
}

/// # Safety
/// `c` is a live cloud handle; `len` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_cloud_len(c: *const GsmrCloud, len: *mut usize) -> GsmrStatus {
    guard(|| {
        let c = deref(c, "cloud")?;
        if len.is_null() {
            return Err(Failure::Null("len"));
        }
        *len = c.0.len();
        Ok(())
    })
}

/// # Safety
/// `c` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsmr_cloud_free(c: *mut GsmrCloud) {
    release(c)
}

/// # Safety
/// `cloud` is a live handle; `dims` points to 3 values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_voxelize(
    cloud: *const GsmrCloud,
    dims: *const usize,
    out: *mut *mut GsmrVolume,
) -> GsmrStatus {
    guard(|| emit(out, GsmrVolume(voxelize(&deref(cloud, "cloud")?.0, dims3(dims)?)?)))
}

// ---- reconstruction and metrics ----

/// Fills `cfg` with the library defaults.
///
/// # Safety
/// `cfg` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_train_config_default(cfg: *mut GsmrTrainConfig) -> GsmrStatus {
    guard(|| {
        if cfg.is_null() {
            return Err(Failure::Null("cfg"));
        }
        *cfg = GsmrTrainConfig::from(&TrainConfig::default());
        Ok(())
    })
}

/// Runs the full reconstruction. `out_cloud` may be null when the cloud is
/// not wanted.
///
/// # Safety
/// `kspace`, `acq` and `cfg` are live; `out_volume` is writable; `out_cloud`
/// is null or writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_recon(
    kspace: *const GsmrKSpace,
    acq: *const GsmrAcquisition,
    cfg: *const GsmrTrainConfig,
    out_volume: *mut *mut GsmrVolume,
    out_cloud: *mut *mut GsmrCloud,
) -> GsmrStatus {
    guard(|| {
        let cfg = TrainConfig::from(deref(cfg, "cfg")?);
        if out_volume.is_null() {
            return Err(Failure::Null("out_volume"));
        }
        let out = trainer::train(&deref(kspace, "kspace")?.0, &deref(acq, "acq")?.0, &cfg, None)?;
        emit(out_volume, GsmrVolume(out.volume))?;
        if !out_cloud.is_null() {
            emit(out_cloud, GsmrCloud(out.cloud))?;
        }
        Ok(())
    })
}

/// # Safety
/// `recon` and `reference` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_psnr(recon: *const GsmrVolume, reference: *const GsmrVolume, out: *mut f64) -> GsmrStatus {
    guard(|| {
        let v = metrics::psnr(&deref(recon, "recon")?.0, &deref(reference, "reference")?.0)?;
        *out.as_mut().ok_or(Failure::Null("out"))? = v;
        Ok(())
    })
}

/// # Safety
/// `recon` and `reference` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn gsmr_ssim(recon: *const GsmrVolume, reference: *const GsmrVolume, out: *mut f64) -> GsmrStatus {
    guard(|| {
        let v = metrics::ssim(&deref(recon, "recon")?.0, &deref(reference, "reference")?.0)?;
        *out.as_mut().ok_or(Failure::Null("out"))? = v;
        Ok(())
    })
}
