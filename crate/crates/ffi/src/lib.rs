//! C ABI over `modedbm`.
//!
//! Models and datasets are opaque heap handles released with their `_free`
//! function. Every call returns a [`ModedbmStatus`]; on failure the message
//! is available from [`modedbm_last_error_message`] on the same thread until
//! the next failing call. Panics are caught and reported as
//! `MODEDBM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use modedbm::eval::{ais_log_z, exact_avg_ll, exact_log_z};
use modedbm::mode::{exact_mode, ModeQuery};
use modedbm::trainer::{mode_probability, train_seeded, ScheduleParams, TrainConfig};
use modedbm::{binarize, load_idx, param_count, shifting_bar, BinaryDataset, DbmError, DbmParams, DbmRng, JointState, LayerShape};
use rand::SeedableRng;

/// Trained or loaded model parameters.
pub struct ModedbmModel(DbmParams);

/// Binary dataset.
pub struct ModedbmDataset(BinaryDataset);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModedbmStatus {
    Ok = 0,
    NullPointer = 1,
    /// Dimension mismatch, bad value or malformed configuration.
    InvalidArgument = 2,
    /// Too many nodes to enumerate.
    Capacity = 3,
    Io = 4,
    /// Malformed IDX or JSON input.
    Format = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &DbmError) -> ModedbmStatus {
    match err {
        DbmError::Capacity { .. } => ModedbmStatus::Capacity,
        DbmError::Io { .. } => ModedbmStatus::Io,
        DbmError::Format { .. } | DbmError::Json(_) | DbmError::Csv(_) => ModedbmStatus::Format,
        _ => ModedbmStatus::InvalidArgument,
    }
}

struct Fail(ModedbmStatus, String);

impl From<DbmError> for Fail {
    fn from(e: DbmError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ModedbmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(ModedbmStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ModedbmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ModedbmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
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
            ModedbmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn model_arg<'a>(p: *const ModedbmModel) -> Result<&'a DbmParams, Fail> {
    p.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn dataset_arg<'a>(p: *const ModedbmDataset) -> Result<&'a BinaryDataset, Fail> {
    p.as_ref().map(|d| &d.0).ok_or_else(|| null("dataset"))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn shape_arg(sizes: &[usize]) -> Result<LayerShape, Fail> {
    Ok(LayerShape::new(sizes.to_vec())?)
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn modedbm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn modedbm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from a function of this library that documents ownership
/// transfer, and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn modedbm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// New model of the given layer sizes with weights drawn from
/// `N(0, weight_std²)` and zero biases.
///
/// # Safety
/// `sizes` must point to `n_layers` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_model_new(
    sizes: *const usize,
    n_layers: usize,
    weight_std: f64,
    seed: u64,
    out: *mut *mut ModedbmModel,
) -> ModedbmStatus {
    guard(|| {
        let shape = shape_arg(slice_arg(sizes, n_layers, "sizes")?)?;
        if !(weight_std >= 0.0) || !weight_std.is_finite() {
            return Err(invalid("weight_std must be finite and non-negative"));
        }
        let params = DbmParams::random(&shape, weight_std, 0.0, &mut DbmRng::seed_from_u64(seed));
        write_out(out, Box::into_raw(Box::new(ModedbmModel(params))), "out")
    })
}

/// Parses a JSON checkpoint.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_model_from_json(json: *const c_char, out: *mut *mut ModedbmModel) -> ModedbmStatus {
    guard(|| {
        let params = DbmParams::from_json(str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(ModedbmModel(params))), "out")
    })
}

/// Serializes a model as a JSON checkpoint. Free the result with
/// [`modedbm_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_model_to_json(model: *const ModedbmModel, out: *mut *mut c_char) -> ModedbmStatus {
    guard(|| {
        let json = model_arg(model)?.to_json()?;
        let s = CString::new(json).map_err(|_| invalid("checkpoint contains NUL"))?;
        write_out(out, s.into_raw(), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_model_load(path: *const c_char, out: *mut *mut ModedbmModel) -> ModedbmStatus {
    guard(|| {
        let params = DbmParams::load(str_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(ModedbmModel(params))), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn modedbm_model_save(model: *const ModedbmModel, path: *const c_char) -> ModedbmStatus {
    guard(|| Ok(model_arg(model)?.save(str_arg(path, "path")?)?))
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn modedbm_model_free(model: *mut ModedbmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of layers including the visible layer.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_model_num_layers(model: *const ModedbmModel, out: *mut usize) -> ModedbmStatus {
    guard(|| write_out(out, model_arg(model)?.shape().num_layers(), "out"))
}

/// Size of layer `layer` (0 is visible).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_model_layer_size(model: *const ModedbmModel, layer: usize, out: *mut usize) -> ModedbmStatus {
    guard(|| {
        let shape = model_arg(model)?.shape();
        if layer >= shape.num_layers() {
            return Err(invalid(format!("layer {layer} out of range")));
        }
        write_out(out, shape.layer(layer), "out")
    })
}

/// Energy of a joint state given as all node values in layer order.
///
/// # Safety
/// `state` must point to `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_energy(
    model: *const ModedbmModel,
    state: *const u8,
    len: usize,
    out: *mut f64,
) -> ModedbmStatus {
    guard(|| {
        let p = model_arg(model)?;
        let st = JointState::from_flat(p.shape(), slice_arg(state, len, "state")?)?;
        write_out(out, modedbm::energy(p, &st)?, "out")
    })
}

/// Exact `log Z` (natural log).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_exact_log_z(model: *const ModedbmModel, out: *mut f64) -> ModedbmStatus {
    guard(|| write_out(out, exact_log_z(model_arg(model)?)?.log_z, "out"))
}

/// AIS estimate of `log Z` and its standard error. `std_error` may be null.
///
/// # Safety
/// `model` must be a live handle; `log_z` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_ais_log_z(
    model: *const ModedbmModel,
    n_intermediate: usize,
    n_runs: usize,
    seed: u64,
    log_z: *mut f64,
    std_error: *mut f64,
) -> ModedbmStatus {
    guard(|| {
        let est = ais_log_z(model_arg(model)?, n_intermediate, n_runs, &mut DbmRng::seed_from_u64(seed))?;
        write_out(log_z, est.log_z, "log_z")?;
        if !std_error.is_null() {
            std_error.write(est.std_error());
        }
        Ok(())
    })
}

/// Exact minimum-energy state, free or with the visible layer clamped.
/// `clamp` is null for a free search or points to `n_v` bytes.
///
/// # Safety
/// `state_out` must have room for `state_len` bytes (the total node count);
/// `energy_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn modedbm_exact_mode(
    model: *const ModedbmModel,
    clamp: *const u8,
    state_out: *mut u8,
    state_len: usize,
    energy_out: *mut f64,
) -> ModedbmStatus {
    guard(|| {
        let p = model_arg(model)?;
        let clamp = if clamp.is_null() {
            None
        } else {
            Some(slice::from_raw_parts(clamp, p.shape().visible()))
        };
        let query = ModeQuery { clamp };
        let total = p.shape().total_nodes();
        if state_len != total {
            return Err(invalid(format!("state buffer holds {state_len} nodes, model has {total}")));
        }
        if state_out.is_null() {
            return Err(null("state_out"));
        }
        let m = exact_mode(p, &query)?;
        slice::from_raw_parts_mut(state_out, total).copy_from_slice(&m.state.flat());
        if !energy_out.is_null() {
            energy_out.write(m.energy);
        }
        Ok(())
    })
}

/// Number of weights plus biases of a machine with the given layer sizes.
///
/// # Safety
/// `sizes` must point to `n_layers` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_param_count(sizes: *const usize, n_layers: usize, out: *mut usize) -> ModedbmStatus {
    guard(|| {
        let shape = shape_arg(slice_arg(sizes, n_layers, "sizes")?)?;
        write_out(out, param_count(&shape).total, "out")
    })
}

/// Mode-update probability at schedule index `n` of `total` with the
/// standard constants (slope `20/total`, offset `−6`, ceiling `0.1`).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_mode_probability(n: f64, total: usize, out: *mut f64) -> ModedbmStatus {
    guard(|| {
        if total == 0 || !(0.0..=total as f64).contains(&n) {
            return Err(invalid(format!("need 0 <= n <= total and total >= 1, got n = {n}, total = {total}")));
        }
        write_out(out, mode_probability(n, &ScheduleParams::standard(total)), "out")
    })
}

fn new_dataset(out: *mut *mut ModedbmDataset, d: BinaryDataset) -> Result<(), Fail> {
    unsafe { write_out(out, Box::into_raw(Box::new(ModedbmDataset(d))), "out") }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_dataset_shifting_bar(n_v: usize, bar_len: usize, out: *mut *mut ModedbmDataset) -> ModedbmStatus {
    guard(|| new_dataset(out, shifting_bar(n_v, bar_len)?))
}

/// Dataset from `n_vectors` row-major vectors of `dim` bytes, each 0 or 1.
///
/// # Safety
/// `bits` must point to `n_vectors * dim` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_dataset_from_bits(
    bits: *const u8,
    n_vectors: usize,
    dim: usize,
    out: *mut *mut ModedbmDataset,
) -> ModedbmStatus {
    guard(|| {
        let len = n_vectors.checked_mul(dim).ok_or_else(|| invalid("dataset size overflows"))?;
        let bits = slice_arg(bits, len, "bits")?;
        let vectors = if dim == 0 {
            vec![Vec::new(); n_vectors]
        } else {
            bits.chunks(dim).map(<[u8]>::to_vec).collect()
        };
        new_dataset(out, BinaryDataset::new(vectors)?)
    })
}

/// Loads an IDX image file and binarizes it at `threshold`. `limit = 0`
/// keeps every image.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_dataset_load_idx(
    path: *const c_char,
    threshold: u8,
    limit: usize,
    out: *mut *mut ModedbmDataset,
) -> ModedbmStatus {
    guard(|| {
        let d = binarize(&load_idx(str_arg(path, "path")?)?, threshold);
        new_dataset(out, if limit == 0 { d } else { d.head(limit) })
    })
}

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_dataset_len(dataset: *const ModedbmDataset, out: *mut usize) -> ModedbmStatus {
    guard(|| write_out(out, dataset_arg(dataset)?.len(), "out"))
}

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_dataset_dim(dataset: *const ModedbmDataset, out: *mut usize) -> ModedbmStatus {
    guard(|| write_out(out, dataset_arg(dataset)?.dim(), "out"))
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn modedbm_dataset_free(dataset: *mut ModedbmDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Exact average log-likelihood per vector, in nats.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_exact_avg_ll(
    model: *const ModedbmModel,
    dataset: *const ModedbmDataset,
    out: *mut f64,
) -> ModedbmStatus {
    guard(|| write_out(out, exact_avg_ll(model_arg(model)?, dataset_arg(dataset)?)?, "out"))
}

/// Trains a model from a JSON training configuration (the same document the
/// `train` subcommand accepts) and returns it in `out`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string, `dataset` a live handle and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn modedbm_train(
    config_json: *const c_char,
    dataset: *const ModedbmDataset,
    out: *mut *mut ModedbmModel,
) -> ModedbmStatus {
    guard(|| {
        let config: TrainConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(DbmError::from)?;
        let (params, _) = train_seeded(&config, dataset_arg(dataset)?)?;
        write_out(out, Box::into_raw(Box::new(ModedbmModel(params))), "out")
    })
}
