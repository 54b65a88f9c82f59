//! C ABI over the `neused` engine.
//!
//! Every function returns a [`NeusedStatus`]; on failure a message is kept in
//! thread-local storage and can be read with [`neused_last_error`]. Handles
//! are opaque and must be released with their `_free` function. Panics never
//! cross the boundary: they are reported as `NEUSED_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nalgebra::Matrix4;

use neused::cli::{colored_mesh, CheckpointMeta};
use neused::fields::checkpoint::{load_checkpoint, CheckpointError};
use neused::fields::{FieldBundle, Foreground, NormalMode};
use neused::geometry::{export_mesh, MeshFormat};
use neused::render::{render_image, Camera, Intrinsics, RenderSettings};

/// Result codes of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeusedStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or not valid UTF-8.
    InvalidArgument = 2,
    /// The checkpoint file does not exist.
    NotFound = 3,
    /// The checkpoint file exists but could not be decoded.
    InvalidCheckpoint = 4,
    /// Writing an output file failed.
    Io = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// Which foreground field of a bundle to use.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeusedField {
    Source = 0,
    Target = 1,
}

/// A loaded checkpoint.
pub struct NeusedBundle {
    bundle: FieldBundle,
    stage: CString,
    meta: CheckpointMeta,
    settings: RenderSettings,
}

/// Pinhole intrinsics in pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NeusedIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior nuls removed"));
}

struct Failure(NeusedStatus, String);

fn fail<T>(status: NeusedStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NeusedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NeusedStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NeusedStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(NeusedStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(NeusedStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn handle<'a>(b: *const NeusedBundle) -> Result<&'a NeusedBundle, Failure> {
    b.as_ref().ok_or(Failure(NeusedStatus::NullPointer, "bundle handle is null".into()))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn neused_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn neused_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. On success `*out` receives a handle owned by the caller.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn neused_bundle_load(path: *const c_char, out: *mut *mut NeusedBundle) -> NeusedStatus {
    guard(|| {
        if out.is_null() {
            return fail(NeusedStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let path = path_arg(path)?;
        if !path.exists() {
            return fail(NeusedStatus::NotFound, format!("{}: no such file", path.display()));
        }
        let (bundle, header) = load_checkpoint(&path).map_err(|e| match e {
            CheckpointError::Io(e) => Failure(NeusedStatus::Io, format!("{}: {e}", path.display())),
            e => Failure(NeusedStatus::InvalidCheckpoint, format!("{}: {e}", path.display())),
        })?;
        let meta = if header.meta.is_null() {
            CheckpointMeta::default()
        } else {
            serde_json::from_value(header.meta)
                .map_err(|e| Failure(NeusedStatus::InvalidCheckpoint, format!("meta: {e}")))?
        };
        let stage = CString::new(header.stage.replace('\0', " ")).expect("interior nuls removed");
        *out = Box::into_raw(Box::new(NeusedBundle {
            bundle,
            stage,
            meta,
            settings: RenderSettings::default(),
        }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `b` must come from [`neused_bundle_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn neused_bundle_free(b: *mut NeusedBundle) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Stage tag of the checkpoint ("source" or "edited"); valid while the handle lives.
///
/// # Safety
/// `b` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn neused_bundle_stage(b: *const NeusedBundle) -> *const c_char {
    match b.as_ref() {
        Some(b) => b.stage.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Number of cameras recorded in the checkpoint.
///
/// # Safety
/// `b` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn neused_bundle_camera_count(b: *const NeusedBundle) -> usize {
    b.as_ref().map_or(0, |b| b.meta.cameras.len())
}

/// Parameter counts of the background, source and target fields.
///
/// # Safety
/// `b` must be a live handle; `out` must point to three writable values.
#[no_mangle]
pub unsafe extern "C" fn neused_bundle_param_counts(b: *const NeusedBundle, out: *mut usize) -> NeusedStatus {
    guard(|| {
        let b = handle(b)?;
        if out.is_null() {
            return fail(NeusedStatus::NullPointer, "out is null");
        }
        let (bg, src, tgt) = b.bundle.param_counts();
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&[bg, src, tgt]);
        Ok(())
    })
}

/// Sets the foreground and background sample counts used by later renders.
///
/// # Safety
/// `b` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn neused_bundle_set_samples(b: *mut NeusedBundle, fg: u32, bg: u32) -> NeusedStatus {
    guard(|| {
        let b = b.as_mut().ok_or(Failure(NeusedStatus::NullPointer, "bundle handle is null".into()))?;
        if fg == 0 || bg == 0 {
            return fail(NeusedStatus::InvalidArgument, "sample counts must be positive");
        }
        b.settings.fg_samples = fg as usize;
        b.settings.bg_samples = bg as usize;
        Ok(())
    })
}

/// Evaluates the signed distance of `field` at `n` points (`xyz` holds 3n
/// values) into `out` (n values).
///
/// # Safety
/// `xyz` must hold `3 * n` readable values and `out` `n` writable values.
#[no_mangle]
pub unsafe extern "C" fn neused_sdf(
    b: *const NeusedBundle,
    field: NeusedField,
    xyz: *const f64,
    n: usize,
    out: *mut f64,
) -> NeusedStatus {
    guard(|| {
        let b = handle(b)?;
        if n == 0 {
            return Ok(());
        }
        if xyz.is_null() || out.is_null() {
            return fail(NeusedStatus::NullPointer, "xyz or out is null");
        }
        let pts = std::slice::from_raw_parts(xyz, 3 * n);
        let out = std::slice::from_raw_parts_mut(out, n);
        for (o, p) in out.iter_mut().zip(pts.chunks_exact(3)) {
            let x = [p[0], p[1], p[2]];
            *o = match field {
                NeusedField::Source => b.bundle.sdf_source(&x).0,
                NeusedField::Target => b.bundle.sdf_target(&x).0,
            };
        }
        Ok(())
    })
}

/// Renders the composited RGB image of `field` for a camera given by its
/// intrinsics and a row-major 4×4 camera-to-world matrix. `out` receives
/// `3 * width * height` values, row-major and interleaved.
///
/// # Safety
/// `pose` must hold 16 readable values and `out` `3 * width * height` writable values.
#[no_mangle]
pub unsafe extern "C" fn neused_render(
    b: *const NeusedBundle,
    field: NeusedField,
    intrinsics: NeusedIntrinsics,
    pose: *const f64,
    out: *mut f64,
) -> NeusedStatus {
    guard(|| {
        let b = handle(b)?;
        if pose.is_null() || out.is_null() {
            return fail(NeusedStatus::NullPointer, "pose or out is null");
        }
        let k = Intrinsics {
            fx: intrinsics.fx,
            fy: intrinsics.fy,
            cx: intrinsics.cx,
            cy: intrinsics.cy,
            width: intrinsics.width as usize,
            height: intrinsics.height as usize,
        };
        let p = std::slice::from_raw_parts(pose, 16);
        let m = Matrix4::from_fn(|r, c| p[4 * r + c]);
        let cam = Camera::new(k, &m).map_err(|e| Failure(NeusedStatus::InvalidArgument, e.to_string()))?;
        let img = match field {
            NeusedField::Source => render_image(&b.bundle.source, &b.bundle.background, &cam, &b.settings, false),
            NeusedField::Target => {
                render_image(&b.bundle.target_view(), &b.bundle.background, &cam, &b.settings, false)
            }
        };
        let out = std::slice::from_raw_parts_mut(out, 3 * k.width * k.height);
        for (o, px) in out.chunks_exact_mut(3).zip(&img.pixels) {
            o.copy_from_slice(&px.rgb);
        }
        Ok(())
    })
}

/// Extracts a coloured mesh of `field` with marching cubes at `res`³ cells on
/// [-1, 1]³ and writes it to `path` (`.obj` or `.ply`).
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn neused_mesh_export(
    b: *const NeusedBundle,
    field: NeusedField,
    res: u32,
    path: *const c_char,
) -> NeusedStatus {
    guard(|| {
        let b = handle(b)?;
        let path = path_arg(path)?;
        let format = MeshFormat::from_path(&path)
            .ok_or(Failure(NeusedStatus::InvalidArgument, "mesh path must end in .obj or .ply".into()))?;
        if res < 8 {
            return fail(NeusedStatus::InvalidArgument, format!("resolution must be at least 8, got {res}"));
        }
        let mesh = match field {
            NeusedField::Source => colored_mesh(&b.bundle.source, res as usize),
            NeusedField::Target => colored_mesh(&b.bundle.target_view().with_normals(NormalMode::Analytic), res as usize),
        }
        .map_err(|e| Failure(NeusedStatus::InvalidArgument, e.to_string()))?;
        export_mesh(&mesh, &path, format).map_err(|e| Failure(NeusedStatus::Io, e.to_string()))
    })
}

/// Sharpness `s` of the NeuS opacity of `field`, or NaN for a null handle.
///
/// # Safety
/// `b` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn neused_sharpness(b: *const NeusedBundle, field: NeusedField) -> f64 {
    match b.as_ref() {
        Some(b) => match field {
            NeusedField::Source => b.bundle.source.sharpness(),
            NeusedField::Target => b.bundle.target_view().sharpness(),
        },
        None => f64::NAN,
    }
}
