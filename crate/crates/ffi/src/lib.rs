//! C ABI for the ctf-prune engine.
//!
//! All objects are opaque handles created and destroyed through this API.
//! Every fallible call returns a [`CtfStatus`]; on failure a message is
//! available from [`ctf_last_error`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ctf_prune::config::RunConfig;
use ctf_prune::gcn::{predict, GcnModel};
use ctf_prune::sparse::CompactModel;
use ctf_prune::{checkpoint, experiment, Error, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidInput = 3,
    Io = 4,
    Numeric = 5,
    Structural = 6,
    Internal = 7,
}

/// Run configuration (data source, model and training hyperparameters).
pub struct CtfConfig(RunConfig);

/// Trained or loaded model.
pub struct CtfModel {
    model: GcnModel,
    test_acc: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CtfStatus {
    match err {
        Error::Config(_) => CtfStatus::InvalidArgument,
        Error::Input(_) | Error::Format { .. } | Error::Dimension { .. } => CtfStatus::InvalidInput,
        Error::Io { .. } => CtfStatus::Io,
        Error::NonFinite(_) | Error::Divergence { .. } => CtfStatus::Numeric,
        Error::Structural(_) => CtfStatus::Structural,
        Error::Contract(_) => CtfStatus::Internal,
    }
}

/// Runs `f`, translating errors and panics into a status and last-error text.
fn guard(f: impl FnOnce() -> Result<(), (CtfStatus, String)>) -> CtfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CtfStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (CtfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CtfStatus, String) {
    (CtfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CtfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CtfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (CtfStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message describing the last failure on this thread, or null.
/// The pointer stays valid until the next API call on this thread.
#[no_mangle]
pub extern "C" fn ctf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ctf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration with default values.
#[no_mangle]
pub extern "C" fn ctf_config_new() -> *mut CtfConfig {
    Box::into_raw(Box::new(CtfConfig(RunConfig::default())))
}

/// # Safety
/// `cfg` must be null or a handle from [`ctf_config_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctf_config_free(cfg: *mut CtfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets one configuration key (same keys as the command-line overrides).
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ctf_config_set(cfg: *mut CtfConfig, key: *const c_char, value: *const c_char) -> CtfStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        cfg.0.set(key, value).map_err(lib_err)
    })
}

/// Prepares the configured data, trains a model and stores it in `*out`.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctf_train(cfg: *const CtfConfig, out: *mut *mut CtfModel) -> CtfStatus {
    guard(|| {
        let cfg = &handle(cfg, "config")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        cfg.validate().map_err(lib_err)?;
        let prepared = experiment::prepare(cfg).map_err(lib_err)?;
        let outcome = experiment::run_training(cfg, &prepared).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CtfModel {
            model: outcome.model,
            test_acc: outcome.test_acc,
        }));
        Ok(())
    })
}

/// Loads a checkpoint written by [`ctf_model_save`] or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_load(path: *const c_char, out: *mut *mut CtfModel) -> CtfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::load(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CtfModel {
            model,
            test_acc: f64::NAN,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_save(model: *const CtfModel, path: *const c_char) -> CtfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = str_arg(path, "path")?;
        checkpoint::save(&m.model, Path::new(path)).map_err(lib_err)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_free(model: *mut CtfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input layout expected by [`ctf_model_predict`]: each sample is a
/// `features x nodes` row-major block.
///
/// # Safety
/// `model` must be a live handle; the out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_input_shape(
    model: *const CtfModel,
    features: *mut usize,
    nodes: *mut usize,
    classes: *mut usize,
) -> CtfStatus {
    guard(|| {
        let c = &handle(model, "model")?.model.config;
        if features.is_null() || nodes.is_null() || classes.is_null() {
            return Err(null("out"));
        }
        *features = c.features;
        *nodes = c.nodes;
        *classes = c.classes;
        Ok(())
    })
}

/// Fraction of prunable entries removed at `threshold`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_pruning_rate(model: *const CtfModel, threshold: f64, out: *mut f64) -> CtfStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        if out.is_null() {
            return Err(null("out"));
        }
        let bins = m.binary_masks(threshold).map_err(lib_err)?;
        *out = m.achieved_rate(&bins);
        Ok(())
    })
}

/// Test accuracy recorded at the end of training (NaN for loaded models).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_test_accuracy(model: *const CtfModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.test_acc)
}

/// Shape of weight layer 0 (attention), 1 (conv) or 2 (dense).
///
/// # Safety
/// `model` must be a live handle; the out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_layer_shape(
    model: *const CtfModel,
    layer: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> CtfStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        if layer > 2 {
            return Err((CtfStatus::InvalidArgument, format!("layer {layer} out of range 0..3")));
        }
        if rows.is_null() || cols.is_null() {
            return Err(null("out"));
        }
        let (r, c) = m.config.layer_shape(layer);
        *rows = r;
        *cols = c;
        Ok(())
    })
}

/// Writes the binary keep mask (row-major, 0 or 1) of `layer` into `out`,
/// which must hold exactly `rows * cols` bytes.
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_mask(
    model: *const CtfModel,
    layer: usize,
    threshold: f64,
    out: *mut u8,
    len: usize,
) -> CtfStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        if layer > 2 {
            return Err((CtfStatus::InvalidArgument, format!("layer {layer} out of range 0..3")));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let bins = m.binary_masks(threshold).map_err(lib_err)?;
        let data = bins[layer].mask.data();
        if data.len() != len {
            return Err((CtfStatus::InvalidArgument, format!("buffer holds {len} entries, mask has {}", data.len())));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, &v) in dst.iter_mut().zip(data) {
            *d = u8::from(v != 0.0);
        }
        Ok(())
    })
}

/// Classifies `batch` samples with the pruned (deployed) network.
/// `signals` holds `batch * features * nodes` values; `labels` receives
/// `batch` class indices.
///
/// # Safety
/// `model` must be a live handle; `signals` and `labels` valid for the
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_predict(
    model: *const CtfModel,
    signals: *const f64,
    batch: usize,
    threshold: f64,
    labels: *mut u32,
) -> CtfStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        if signals.is_null() || labels.is_null() {
            return Err(null("buffer"));
        }
        if batch == 0 {
            return Err((CtfStatus::InvalidArgument, "batch must be positive".into()));
        }
        let (s, n) = (m.config.features, m.config.nodes);
        let x = std::slice::from_raw_parts(signals, batch * s * n).to_vec();
        let x = Tensor::new(batch * s, n, x).map_err(lib_err)?;
        let (w, _) = m.deployed_weights(threshold).map_err(lib_err)?;
        let logits = m.dense_forward(&w, &x, false).map_err(lib_err)?;
        let out = std::slice::from_raw_parts_mut(labels, batch);
        for (o, p) in out.iter_mut().zip(predict(&logits)) {
            *o = p as u32;
        }
        Ok(())
    })
}

/// Writes the compacted network as text to `path`. Fails with
/// [`CtfStatus::Structural`] when pruning disconnects the network.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctf_model_export(model: *const CtfModel, threshold: f64, path: *const c_char) -> CtfStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        let path = str_arg(path, "path")?;
        let digest = experiment::sha256_hex(&checkpoint::encode(m));
        let cm = CompactModel::from_model(m, threshold, digest).map_err(lib_err)?;
        std::fs::write(path, cm.to_text()).map_err(|e| (CtfStatus::Io, format!("{path}: {e}")))
    })
}
