//! C ABI over the pointbc camera geometry, temporal ensembling and policy
//! runtime. Objects are opaque handles; every fallible call returns a
//! [`PbcStatus`] and leaves a message for [`pbc_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion};
use pointbc::policy::{ensemble_weights, io as policy_io, Policy, PolicyRunner, ACTION_DIM};
use pointbc::sim::CameraIntrinsics;
use pointbc::vision::back_project_pixel;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbcStatus {
    PbcOk = 0,
    PbcNullPointer = 1,
    PbcInvalidArgument = 2,
    PbcIo = 3,
    PbcFormat = 4,
    PbcPolicy = 5,
    PbcPanic = 6,
}

/// Pinhole camera with a world-to-camera extrinsic.
pub struct PbcCamera {
    inner: CameraIntrinsics,
}

/// Trained policy loaded from a parameter file.
pub struct PbcPolicy {
    inner: Arc<Policy<f32>>,
}

/// Closed-loop runner: observation history plus temporal ensembling.
pub struct PbcRunner {
    // Field order matters: `runner` borrows from `_policy` and is dropped first.
    runner: PolicyRunner<'static, f32>,
    _policy: Arc<Policy<f32>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: PbcStatus, msg: impl Into<String>) -> PbcStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting a panic into `PbcPanic`.
fn guard(f: impl FnOnce() -> PbcStatus) -> PbcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            fail(PbcStatus::PbcPanic, format!("internal panic: {msg}"))
        }
    }
}

fn policy_status(e: &pointbc::error::PolicyError) -> PbcStatus {
    use pointbc::error::PolicyError as E;
    match e {
        E::Io(_) => PbcStatus::PbcIo,
        E::Format(_) | E::HashMismatch { .. } => PbcStatus::PbcFormat,
        E::InputLength { .. } | E::HistoryLength { .. } => PbcStatus::PbcInvalidArgument,
        E::Config(_) => PbcStatus::PbcPolicy,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pbc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the length the full
/// message needs including the terminator, or 0 when there is no error.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn pbc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = (bytes.len() - 1).min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Creates a camera. `extrinsic` is a row-major 4x4 rigid world-to-camera
/// transform.
///
/// # Safety
/// `extrinsic` must point to 16 doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pbc_camera_new(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    extrinsic: *const f64,
    out: *mut *mut PbcCamera,
) -> PbcStatus {
    guard(|| {
        if extrinsic.is_null() || out.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        let m = std::slice::from_raw_parts(extrinsic, 16);
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let rt_r = r.transpose() * r;
        if (rt_r - Matrix3::identity()).abs().max() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return fail(PbcStatus::PbcInvalidArgument, "extrinsic rotation is not orthonormal");
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return fail(PbcStatus::PbcInvalidArgument, "extrinsic bottom row must be [0 0 0 1]");
        }
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        let iso = Isometry3::from_parts(Translation3::new(m[3], m[7], m[11]), rotation);
        match CameraIntrinsics::new(fx, fy, cx, cy, width, height, iso) {
            Ok(cam) => {
                *out = Box::into_raw(Box::new(PbcCamera { inner: cam }));
                PbcStatus::PbcOk
            }
            Err(e) => fail(PbcStatus::PbcInvalidArgument, e.to_string()),
        }
    })
}

/// The simulator's fixed tabletop camera.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pbc_camera_tabletop(out: *mut *mut PbcCamera) -> PbcStatus {
    guard(|| {
        if out.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        *out = Box::into_raw(Box::new(PbcCamera {
            inner: CameraIntrinsics::tabletop(),
        }));
        PbcStatus::PbcOk
    })
}

/// # Safety
/// `cam` must come from a `pbc_camera_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn pbc_camera_free(cam: *mut PbcCamera) {
    if !cam.is_null() {
        drop(Box::from_raw(cam));
    }
}

/// Projects a world point to `(u, v, z)`: pixels and camera-frame depth.
///
/// # Safety
/// `world` must point to 3 doubles and `out_uvz` to room for 3.
#[no_mangle]
pub unsafe extern "C" fn pbc_camera_project(cam: *const PbcCamera, world: *const f64, out_uvz: *mut f64) -> PbcStatus {
    guard(|| {
        if cam.is_null() || world.is_null() || out_uvz.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        let w = std::slice::from_raw_parts(world, 3);
        let cam: &PbcCamera = &*cam;
        match cam.inner.project(&Point3::new(w[0], w[1], w[2])) {
            Some(px) => {
                let out = std::slice::from_raw_parts_mut(out_uvz, 3);
                out.copy_from_slice(&[px.u, px.v, px.z]);
                PbcStatus::PbcOk
            }
            None => fail(PbcStatus::PbcInvalidArgument, "point is behind the camera"),
        }
    })
}

/// Back-projects pixel `(u, v)` at depth `z` to a camera-frame point.
///
/// # Safety
/// `out_xyz` must have room for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn pbc_camera_back_project(
    cam: *const PbcCamera,
    u: f64,
    v: f64,
    z: f64,
    out_xyz: *mut f64,
) -> PbcStatus {
    guard(|| {
        if cam.is_null() || out_xyz.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        let cam: &PbcCamera = &*cam;
        match back_project_pixel(&cam.inner, u, v, z) {
            Some(p) => {
                std::slice::from_raw_parts_mut(out_xyz, 3).copy_from_slice(&p);
                PbcStatus::PbcOk
            }
            None => fail(PbcStatus::PbcInvalidArgument, "depth must be finite and positive"),
        }
    })
}

/// Normalized weights `exp(-m * age)` for `n` prediction ages.
///
/// # Safety
/// `ages` must point to `n` values and `out_weights` to room for `n`.
#[no_mangle]
pub unsafe extern "C" fn pbc_ensemble_weights(ages: *const usize, n: usize, m: f64, out_weights: *mut f64) -> PbcStatus {
    guard(|| {
        if ages.is_null() || out_weights.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        if n == 0 || !m.is_finite() || m < 0.0 {
            return fail(PbcStatus::PbcInvalidArgument, "need n > 0 and a finite m >= 0");
        }
        let w = ensemble_weights(std::slice::from_raw_parts(ages, n), m);
        std::slice::from_raw_parts_mut(out_weights, n).copy_from_slice(&w);
        PbcStatus::PbcOk
    })
}

/// Blends `n` predicted 4-D actions (row-major `n x 4`) with ages `ages`.
///
/// # Safety
/// `ages` must point to `n` values, `actions` to `4 n` doubles and
/// `out_action` to room for 4.
#[no_mangle]
pub unsafe extern "C" fn pbc_temporal_ensemble(
    ages: *const usize,
    actions: *const f64,
    n: usize,
    m: f64,
    out_action: *mut f64,
) -> PbcStatus {
    guard(|| {
        if ages.is_null() || actions.is_null() || out_action.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        if n == 0 || !m.is_finite() || m < 0.0 {
            return fail(PbcStatus::PbcInvalidArgument, "need n > 0 and a finite m >= 0");
        }
        let ages = std::slice::from_raw_parts(ages, n);
        let acts = std::slice::from_raw_parts(actions, n * ACTION_DIM);
        let preds: Vec<(usize, [f64; ACTION_DIM])> = ages
            .iter()
            .zip(acts.chunks_exact(ACTION_DIM))
            .map(|(&a, c)| (a, [c[0], c[1], c[2], c[3]]))
            .collect();
        let out = pointbc::policy::temporal_ensemble(&preds, m);
        std::slice::from_raw_parts_mut(out_action, ACTION_DIM).copy_from_slice(&out);
        PbcStatus::PbcOk
    })
}

/// Loads a parameter file written by the trainer.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pbc_policy_load(path: *const c_char, out: *mut *mut PbcPolicy) -> PbcStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(PbcStatus::PbcInvalidArgument, "path is not UTF-8");
        };
        match policy_io::load::<f32>(Path::new(path), None) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(PbcPolicy { inner: Arc::new(p) }));
                PbcStatus::PbcOk
            }
            Err(e) => fail(policy_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `policy` must come from `pbc_policy_load` or be null. Runners created
/// from it stay valid after this call.
#[no_mangle]
pub unsafe extern "C" fn pbc_policy_free(policy: *mut PbcPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Encoder input length, history length and chunk length of a policy.
///
/// # Safety
/// Output pointers may be null; non-null ones must be valid.
#[no_mangle]
pub unsafe extern "C" fn pbc_policy_dims(
    policy: *const PbcPolicy,
    input_dim: *mut usize,
    history: *mut usize,
    chunk: *mut usize,
) -> PbcStatus {
    guard(|| {
        if policy.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null policy");
        }
        let policy: &PbcPolicy = &*policy;
        let c = &policy.inner.config;
        for (ptr, v) in [(input_dim, c.input_dim), (history, c.history), (chunk, c.chunk)] {
            if !ptr.is_null() {
                *ptr = v;
            }
        }
        PbcStatus::PbcOk
    })
}

/// Predicts the action chunk for the newest of `rows` observations
/// (row-major `rows x input_dim`). Writes `chunk x 4` doubles.
///
/// # Safety
/// `obs` must point to `rows * input_dim` doubles and `out` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn pbc_policy_predict(
    policy: *const PbcPolicy,
    obs: *const f64,
    rows: usize,
    out: *mut f64,
    out_len: usize,
) -> PbcStatus {
    guard(|| {
        if policy.is_null() || obs.is_null() || out.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        let p: &Policy<f32> = &(*policy).inner;
        let d = p.config.input_dim;
        if out_len < p.config.chunk * ACTION_DIM {
            return fail(PbcStatus::PbcInvalidArgument, format!("output needs {} doubles", p.config.chunk * ACTION_DIM));
        }
        let flat = std::slice::from_raw_parts(obs, rows * d);
        let history: Vec<&[f64]> = flat.chunks_exact(d.max(1)).collect();
        match p.predict(&history) {
            Ok(mut chunks) => {
                let chunk = chunks.pop().expect("one chunk per token");
                let dst = std::slice::from_raw_parts_mut(out, chunk.len() * ACTION_DIM);
                for (row, a) in dst.chunks_exact_mut(ACTION_DIM).zip(&chunk) {
                    row.copy_from_slice(a);
                }
                PbcStatus::PbcOk
            }
            Err(e) => fail(policy_status(&e), e.to_string()),
        }
    })
}

/// Creates a runner that shares the policy's parameters.
///
/// # Safety
/// `policy` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pbc_runner_new(policy: *const PbcPolicy, out: *mut *mut PbcRunner) -> PbcStatus {
    guard(|| {
        if policy.is_null() || out.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        let shared = Arc::clone(&(*policy).inner);
        // SAFETY: the Arc keeps the policy alive at a stable address for as
        // long as the runner exists, and the runner field is dropped first.
        let borrowed: &'static Policy<f32> = &*Arc::as_ptr(&shared);
        *out = Box::into_raw(Box::new(PbcRunner {
            runner: PolicyRunner::new(borrowed),
            _policy: shared,
        }));
        PbcStatus::PbcOk
    })
}

/// # Safety
/// `runner` must come from `pbc_runner_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn pbc_runner_free(runner: *mut PbcRunner) {
    if !runner.is_null() {
        drop(Box::from_raw(runner));
    }
}

/// Clears history and pending chunks for a new episode.
///
/// # Safety
/// `runner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pbc_runner_reset(runner: *mut PbcRunner) -> PbcStatus {
    guard(|| {
        if runner.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null runner");
        }
        let r: &mut PbcRunner = &mut *runner;
        r.runner.reset();
        PbcStatus::PbcOk
    })
}

/// One control step: appends `features` to the history and writes the
/// ensembled action `[dx, dy, dz, gripper]`. A nonzero `blind` repeats the
/// previous action.
///
/// # Safety
/// `features` must point to `len` doubles and `out_action` to room for 4.
#[no_mangle]
pub unsafe extern "C" fn pbc_runner_act(
    runner: *mut PbcRunner,
    features: *const f64,
    len: usize,
    blind: c_int,
    out_action: *mut f64,
) -> PbcStatus {
    guard(|| {
        if runner.is_null() || features.is_null() || out_action.is_null() {
            return fail(PbcStatus::PbcNullPointer, "null argument");
        }
        let f = std::slice::from_raw_parts(features, len);
        let r: &mut PbcRunner = &mut *runner;
        match r.runner.act(f, blind != 0) {
            Ok(a) => {
                std::slice::from_raw_parts_mut(out_action, ACTION_DIM).copy_from_slice(&a.to_array());
                PbcStatus::PbcOk
            }
            Err(e) => fail(policy_status(&e), e.to_string()),
        }
    })
}
