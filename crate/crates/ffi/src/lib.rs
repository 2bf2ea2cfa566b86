//! C ABI over the gslift renderer, cloud files, scene generation and
//! metrics. Objects cross the boundary as opaque handles; every fallible
//! call returns a [`GslStatus`] and leaves a message for
//! [`gsl_last_error_message`].
//!
//! Images are caller-owned row-major `double` buffers, RGB interleaved.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gslift::camera::Camera;
use gslift::gaussian::{GaussianPrimitive, PARAMS_PER_PRIMITIVE};
use gslift::losses::masked_metrics;
use gslift::pipeline::init_cloud;
use gslift::scenegen::{generate_scene, CameraRig, SceneSpec};
use gslift::splat::{render, Color};
use gslift::{Error, GaussianCloud, ImageBuffer};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Range = 4,
    Mask = 5,
    Pose = 6,
    Format = 7,
    Parse = 8,
    File = 9,
    Config = 10,
    Other = 11,
    Panic = 12,
}

impl From<&Error> for GslStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension(_) => GslStatus::Dimension,
            Error::Range(_) | Error::RankDeficient(_) => GslStatus::Range,
            Error::DegenerateMask => GslStatus::Mask,
            Error::InvalidPose(_) => GslStatus::Pose,
            Error::CloudFormat(_) | Error::Image(_) => GslStatus::Format,
            Error::Parse { .. } => GslStatus::Parse,
            Error::Io { .. } => GslStatus::File,
            Error::Config(_) => GslStatus::Config,
            _ => GslStatus::Other,
        }
    }
}

/// Opaque Gaussian cloud.
pub struct GslCloud(GaussianCloud);

/// Opaque pinhole camera.
pub struct GslCamera(Camera);

/// Masked L1, PSNR (dB) and perceptual error.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GslMetrics {
    pub l1: f64,
    pub psnr_db: f64,
    pub perceptual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(GslStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(GslStatus::from(&e), e.to_string())
    }
}

type Outcome = std::result::Result<(), Fail>;

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Outcome) -> GslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GslStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GslStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(GslStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> std::result::Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(GslStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

unsafe fn out_slot<'a, T>(p: *mut *mut T) -> std::result::Result<&'a mut *mut T, Fail> {
    p.as_mut().ok_or_else(|| null("output pointer"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> std::result::Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn buffer<'a>(p: *const f64, len: usize, what: &str) -> std::result::Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn buffer_mut<'a>(p: *mut f64, len: usize, what: &str) -> std::result::Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn image(data: &[f64], width: usize, height: usize, channels: usize) -> std::result::Result<ImageBuffer, Fail> {
    Ok(ImageBuffer::from_data(width, height, channels, data.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gsl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next gslift call on the same thread.
#[no_mangle]
pub extern "C" fn gsl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Number of doubles per primitive in parameter arrays: center (3),
/// log-scale (3), rotation quaternion w,x,y,z (4), opacity logit (1),
/// color (3).
#[no_mangle]
pub extern "C" fn gsl_params_per_primitive() -> usize {
    PARAMS_PER_PRIMITIVE
}

/// Loads a cloud file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsl_cloud_load(path: *const c_char, out: *mut *mut GslCloud) -> GslStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let cloud = gslift::load_cloud(path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(GslCloud(cloud)));
        Ok(())
    })
}

/// Writes a cloud file (single precision on disk).
///
/// # Safety
/// `cloud` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gsl_cloud_save(cloud: *const GslCloud, path: *const c_char) -> GslStatus {
    guard(|| {
        let cloud = handle(cloud, "cloud")?;
        Ok(gslift::save_cloud(&cloud.0, path_arg(path)?)?)
    })
}

/// Builds a cloud from `count` primitives of packed parameters.
///
/// # Safety
/// `params` must hold `count * gsl_params_per_primitive()` doubles.
#[no_mangle]
pub unsafe extern "C" fn gsl_cloud_from_params(
    params: *const f64,
    count: usize,
    out: *mut *mut GslCloud,
) -> GslStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let len = count
            .checked_mul(PARAMS_PER_PRIMITIVE)
            .ok_or_else(|| Fail(GslStatus::Range, "count overflows".into()))?;
        let data = if count == 0 { &[][..] } else { buffer(params, len, "params")? };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Fail(GslStatus::Range, "parameters must be finite".into()));
        }
        let prims = data
            .chunks_exact(PARAMS_PER_PRIMITIVE)
            .map(|c| GaussianPrimitive::from_params(c.try_into().expect("chunk size")))
            .collect();
        *slot = Box::into_raw(Box::new(GslCloud(GaussianCloud::new(prims))));
        Ok(())
    })
}

/// Copies the packed parameters into `out`, which holds `capacity` doubles.
///
/// # Safety
/// `cloud` must come from this library; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn gsl_cloud_params(cloud: *const GslCloud, out: *mut f64, capacity: usize) -> GslStatus {
    guard(|| {
        let cloud = handle(cloud, "cloud")?;
        let need = cloud.0.len() * PARAMS_PER_PRIMITIVE;
        if capacity < need {
            return Err(Fail(GslStatus::Dimension, format!("buffer holds {capacity}, need {need}")));
        }
        let out = buffer_mut(out, need, "out")?;
        for (dst, p) in out.chunks_exact_mut(PARAMS_PER_PRIMITIVE).zip(cloud.0.primitives()) {
            dst.copy_from_slice(&p.to_params());
        }
        Ok(())
    })
}

/// Primitive count; 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gsl_cloud_len(cloud: *const GslCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// Uniform random init cloud in [-half_extent, half_extent]³.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsl_cloud_init(
    count: usize,
    half_extent: f64,
    seed: u64,
    out: *mut *mut GslCloud,
) -> GslStatus {
    guard(|| {
        let slot = out_slot(out)?;
        *slot = Box::into_raw(Box::new(GslCloud(init_cloud(count, half_extent, seed)?)));
        Ok(())
    })
}

/// Default synthetic strand scene for `seed` (hair first, then body).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsl_scene_generate(seed: u64, out: *mut *mut GslCloud) -> GslStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let spec = SceneSpec { seed, ..Default::default() };
        *slot = Box::into_raw(Box::new(GslCloud(generate_scene(&spec)?.cloud)));
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn gsl_cloud_free(cloud: *mut GslCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Camera on the default orbit (radius 1.05 around the origin, 50 mm lens
/// on a 36 mm sensor) at the given azimuth and elevation in radians.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsl_camera_orbit(
    width: usize,
    height: usize,
    azimuth: f64,
    elevation: f64,
    out: *mut *mut GslCamera,
) -> GslStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let rig = CameraRig {
            height,
            ..CameraRig::square(width)
        };
        let cam = rig.at(azimuth, elevation);
        cam.validate()?;
        *slot = Box::into_raw(Box::new(GslCamera(cam)));
        Ok(())
    })
}

/// Loads a camera written by `gslift gen`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsl_camera_load(path: *const c_char, out: *mut *mut GslCamera) -> GslStatus {
    guard(|| {
        let slot = out_slot(out)?;
        let cam = Camera::load(path_arg(path)?)?;
        cam.validate()?;
        *slot = Box::into_raw(Box::new(GslCamera(cam)));
        Ok(())
    })
}

/// Image size of a camera; zeros for a null handle.
///
/// # Safety
/// `camera` must be null or come from this library; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn gsl_camera_size(camera: *const GslCamera, width: *mut usize, height: *mut usize) {
    let (w, h) = camera.as_ref().map_or((0, 0), |c| (c.0.image_width, c.0.image_height));
    if let Some(p) = width.as_mut() {
        *p = w;
    }
    if let Some(p) = height.as_mut() {
        *p = h;
    }
}

/// # Safety
/// `camera` must be null or come from this library, and not be used after.
#[no_mangle]
pub unsafe extern "C" fn gsl_camera_free(camera: *mut GslCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

/// Renders `cloud` over a constant background. `rgb` receives
/// width·height·3 values; `alpha` (optional) width·height values.
///
/// # Safety
/// Handles must come from this library; buffers must hold the stated
/// lengths.
#[no_mangle]
pub unsafe extern "C" fn gsl_render(
    cloud: *const GslCloud,
    camera: *const GslCamera,
    background: *const f64,
    rgb: *mut f64,
    rgb_len: usize,
    alpha: *mut f64,
    alpha_len: usize,
) -> GslStatus {
    guard(|| {
        let cloud = handle(cloud, "cloud")?;
        let cam = handle(camera, "camera")?;
        let bg = buffer(background, 3, "background")?;
        let n = cam.0.image_width * cam.0.image_height;
        if rgb_len != 3 * n {
            return Err(Fail(GslStatus::Dimension, format!("rgb buffer holds {rgb_len}, need {}", 3 * n)));
        }
        if !alpha.is_null() && alpha_len != n {
            return Err(Fail(GslStatus::Dimension, format!("alpha buffer holds {alpha_len}, need {n}")));
        }
        let view = render(&cloud.0, &cam.0, Color::new(bg[0], bg[1], bg[2]));
        buffer_mut(rgb, rgb_len, "rgb")?.copy_from_slice(view.rgb.data());
        if !alpha.is_null() {
            buffer_mut(alpha, alpha_len, "alpha")?.copy_from_slice(view.alpha.data());
        }
        Ok(())
    })
}

/// Masked metrics of two RGB images. `mask` (width·height values,
/// selected where ≥ 0.5) may be null to use every pixel.
///
/// # Safety
/// `rendered` and `truth` must hold width·height·3 doubles, `mask`
/// width·height when given; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsl_masked_metrics(
    rendered: *const f64,
    truth: *const f64,
    mask: *const f64,
    width: usize,
    height: usize,
    out: *mut GslMetrics,
) -> GslStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let n = width * height;
        let a = image(buffer(rendered, 3 * n, "rendered")?, width, height, 3)?;
        let b = image(buffer(truth, 3 * n, "truth")?, width, height, 3)?;
        let m = if mask.is_null() {
            None
        } else {
            Some(image(buffer(mask, n, "mask")?, width, height, 1)?)
        };
        let r = masked_metrics(&a, &b, m.as_ref())?;
        *out = GslMetrics {
            l1: r.l1,
            psnr_db: r.psnr_db,
            perceptual: r.perceptual,
        };
        Ok(())
    })
}
