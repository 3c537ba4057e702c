//! C interface to the svlb library.
//!
//! Every fallible function returns an [`SvlbStatus`]; on failure the
//! message is kept per thread and can be copied out with
//! [`svlb_last_error`]. Objects cross the boundary as opaque handles that
//! the caller releases with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use svlb::benchgen::{gen_scene, render, Query, SceneConfig, SceneSpec};
use svlb::cli::{self, checkpoint, Options};
use svlb::posenc::{apply_rope2d, RotationPlan};
use svlb::{Error, ParamSet, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvlbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingArtifact = 3,
    EmptyResult = 4,
    Incompatible = 5,
    Malformed = 6,
    Io = 7,
    BufferTooSmall = 8,
    Numeric = 9,
    Panic = 10,
}

impl From<&Error> for SvlbStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::MissingArtifact(_) => SvlbStatus::MissingArtifact,
            Error::EmptyResult(_) => SvlbStatus::EmptyResult,
            Error::Compatibility(_) => SvlbStatus::Incompatible,
            Error::Format(_) => SvlbStatus::Malformed,
            Error::Io { .. } => SvlbStatus::Io,
            Error::NonFiniteLoss { .. } | Error::NumericInput(_) | Error::Normalization(_) => SvlbStatus::Numeric,
            _ => SvlbStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: SvlbStatus, msg: impl Into<String>) -> SvlbStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SvlbStatus, String)>) -> SvlbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SvlbStatus::Ok
        }
        Ok(Err((s, m))) => fail(s, m),
        Err(_) => fail(SvlbStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> (SvlbStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (SvlbStatus, String) {
    (SvlbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SvlbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SvlbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies `s` plus a NUL into `buf`. `needed` (if non-null) receives the
/// required size including the NUL.
unsafe fn copy_out(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), (SvlbStatus, String)> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || cap < s.len() + 1 {
        return Err((
            SvlbStatus::BufferTooSmall,
            format!("need {} bytes, have {cap}", s.len() + 1),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// NUL-terminated library version; static storage.
#[no_mangle]
pub extern "C" fn svlb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`.
/// `needed` receives the size including the NUL.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes; `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn svlb_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> SvlbStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match copy_out(&msg, buf, cap, needed) {
        Ok(()) => SvlbStatus::Ok,
        Err((s, _)) => s,
    }
}

/// Applies 2D-RoPE to `n = grid_h * grid_w` vectors of `head_dim` values
/// stored row-major in `x`, writing `n * head_dim` values to `out`.
///
/// # Safety
/// `x` and `out` must each be valid for `grid_h * grid_w * head_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn svlb_rope2d_apply(
    x: *const f64,
    out: *mut f64,
    grid_h: usize,
    grid_w: usize,
    head_dim: usize,
    theta_base: f64,
) -> SvlbStatus {
    guard(|| {
        if x.is_null() || out.is_null() {
            return Err(null("x or out"));
        }
        let n = grid_h
            .checked_mul(grid_w)
            .and_then(|v| v.checked_mul(head_dim))
            .ok_or((SvlbStatus::InvalidArgument, "size overflow".to_string()))?;
        let plan = RotationPlan::rope2d(head_dim, theta_base).map_err(lib_err)?;
        let input = Tensor::new(&[grid_h * grid_w, head_dim], std::slice::from_raw_parts(x, n).to_vec())
            .map_err(lib_err)?;
        let rotated = apply_rope2d(&input, (grid_h, grid_w), &plan).map_err(lib_err)?;
        ptr::copy_nonoverlapping(rotated.data().as_ptr(), out, n);
        Ok(())
    })
}

/// Runs one `svlb` subcommand (`gen-data`, `pretrain-encoder`, `align`,
/// `evaluate`, `grid-report`) on a config file. `out` may be null.
///
/// # Safety
/// String arguments must be NUL-terminated or null where allowed.
#[no_mangle]
pub unsafe extern "C" fn svlb_run_command(
    command: *const c_char,
    config_path: *const c_char,
    out: *const c_char,
    force: bool,
) -> SvlbStatus {
    guard(|| {
        let command = c_str(command, "command")?;
        let mut opts = Options::new(c_str(config_path, "config_path")?);
        if !out.is_null() {
            opts.out = Some(PathBuf::from(c_str(out, "out")?));
        }
        opts.force = force;
        let res = match command {
            "gen-data" => cli::cmd_gen_data(&opts).map(drop),
            "pretrain-encoder" => cli::cmd_pretrain_encoder(&opts).map(drop),
            "align" => cli::cmd_align(&opts).map(drop),
            "evaluate" => cli::cmd_evaluate(&opts).map(drop),
            "grid-report" => cli::cmd_grid_report(&opts).map(drop),
            other => return Err((SvlbStatus::InvalidArgument, format!("unknown command {other:?}"))),
        };
        res.map_err(lib_err)
    })
}

/// A loaded checkpoint.
pub struct SvlbCheckpoint {
    params: ParamSet,
    names: Vec<String>,
}

/// Opens a checkpoint file without checking its config hash.
///
/// # Safety
/// `path` must be NUL-terminated; `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn svlb_checkpoint_open(path: *const c_char, handle: *mut *mut SvlbCheckpoint) -> SvlbStatus {
    guard(|| {
        if handle.is_null() {
            return Err(null("handle"));
        }
        *handle = ptr::null_mut();
        let path = c_str(path, "path")?;
        let ck = checkpoint::load(path.as_ref(), None, true).map_err(lib_err)?;
        let names = ck.params.names().map(str::to_string).collect();
        *handle = Box::into_raw(Box::new(SvlbCheckpoint {
            params: ck.params,
            names,
        }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`svlb_checkpoint_open`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn svlb_checkpoint_free(handle: *mut SvlbCheckpoint) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of named parameters, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn svlb_checkpoint_len(handle: *const SvlbCheckpoint) -> usize {
    handle.as_ref().map_or(0, |h| h.names.len())
}

/// Name of parameter `index` (names are sorted).
///
/// # Safety
/// `handle` live; `buf` valid for `cap` bytes or null; `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn svlb_checkpoint_name(
    handle: *const SvlbCheckpoint,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SvlbStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let name = h.names.get(index).ok_or_else(|| {
            (
                SvlbStatus::InvalidArgument,
                format!("index {index} out of range for {} parameters", h.names.len()),
            )
        })?;
        copy_out(name, buf, cap, needed)
    })
}

/// Shape of parameter `name`: writes up to `cap` dims into `dims` and the
/// rank into `ndim`.
///
/// # Safety
/// `handle` live; `name` NUL-terminated; `dims` valid for `cap` entries or
/// null with `cap == 0`; `ndim` writable.
#[no_mangle]
pub unsafe extern "C" fn svlb_checkpoint_shape(
    handle: *const SvlbCheckpoint,
    name: *const c_char,
    dims: *mut usize,
    cap: usize,
    ndim: *mut usize,
) -> SvlbStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if ndim.is_null() {
            return Err(null("ndim"));
        }
        let t = h.params.get(c_str(name, "name")?).map_err(lib_err)?;
        *ndim = t.ndim();
        if cap < t.ndim() || (dims.is_null() && t.ndim() > 0) {
            return Err((SvlbStatus::BufferTooSmall, format!("rank {} exceeds {cap}", t.ndim())));
        }
        for (i, &d) in t.shape().iter().enumerate() {
            *dims.add(i) = d;
        }
        Ok(())
    })
}

/// Copies the values of parameter `name` as doubles.
///
/// # Safety
/// `handle` live; `name` NUL-terminated; `out` valid for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn svlb_checkpoint_read(
    handle: *const SvlbCheckpoint,
    name: *const c_char,
    out: *mut f64,
    cap: usize,
) -> SvlbStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let t = h.params.get(c_str(name, "name")?).map_err(lib_err)?;
        if out.is_null() || cap < t.numel() {
            return Err((SvlbStatus::BufferTooSmall, format!("need {} values, have {cap}", t.numel())));
        }
        ptr::copy_nonoverlapping(t.data().as_ptr(), out, t.numel());
        Ok(())
    })
}

/// A generated scene.
pub struct SvlbScene {
    scene: SceneSpec,
}

/// Generates a scene on a square `canvas` with a `rows x cols` grid.
///
/// # Safety
/// `handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn svlb_scene_generate(
    seed: u64,
    canvas: usize,
    rows: usize,
    cols: usize,
    max_objects: usize,
    handle: *mut *mut SvlbScene,
) -> SvlbStatus {
    guard(|| {
        if handle.is_null() {
            return Err(null("handle"));
        }
        *handle = ptr::null_mut();
        let cfg = SceneConfig {
            canvas: (canvas, canvas),
            rows,
            cols,
            max_objects,
        };
        let scene = gen_scene(seed, &cfg).map_err(lib_err)?;
        *handle = Box::into_raw(Box::new(SvlbScene { scene }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`svlb_scene_generate`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn svlb_scene_free(handle: *mut SvlbScene) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of objects, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn svlb_scene_object_count(handle: *const SvlbScene) -> usize {
    handle.as_ref().map_or(0, |h| h.scene.objects.len())
}

/// Renders to interleaved RGB bytes, `canvas * canvas * 3` of them.
///
/// # Safety
/// `handle` live; `out` valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn svlb_scene_render(handle: *const SvlbScene, out: *mut u8, cap: usize) -> SvlbStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let img = render(&h.scene);
        if out.is_null() || cap < img.data.len() {
            return Err((SvlbStatus::BufferTooSmall, format!("need {} bytes, have {cap}", img.data.len())));
        }
        ptr::copy_nonoverlapping(img.data.as_ptr(), out, img.data.len());
        Ok(())
    })
}

/// Answers a benchmark question (e.g. `how many circles are there ?`)
/// about the scene. Unanswerable questions give `InvalidArgument`.
///
/// # Safety
/// `handle` live; `question` NUL-terminated; `buf` valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn svlb_scene_answer(
    handle: *const SvlbScene,
    question: *const c_char,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SvlbStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let q = Query::parse(c_str(question, "question")?).map_err(lib_err)?;
        let (answer, _) = q.derive(&h.scene).ok_or_else(|| {
            (
                SvlbStatus::InvalidArgument,
                "the scene does not determine an answer".to_string(),
            )
        })?;
        copy_out(&answer, buf, cap, needed)
    })
}
