//! C ABI over the sponsored-ctr pipeline.
//!
//! Datasets and models are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`ScStatus`]; on failure the
//! message is available from [`sc_last_error_message`] on the same thread.
//! Outputs are written through caller-provided pointers only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use sponsored_ctr::auction::{squash_score, Candidate, SquashConfig};
use sponsored_ctr::data::{read_logs, BucketLayout, Dataset, ModuleKind};
use sponsored_ctr::debias::{fit_propensity, DebiasFunction, PropensityTable};
use sponsored_ctr::evalkit::{auprc, auroc, ScoredLabels};
use sponsored_ctr::learner::{train, CtrModel, TrainConfig, TrainingInstance};
use sponsored_ctr::simgen::{generate_logs, SimConfig};
use sponsored_ctr::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    InsufficientData = 6,
    DegenerateLabels = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScModuleKind {
    InGrid = 0,
    BelowGrid = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScDebiasKind {
    Polynomial = 0,
    Logarithmic = 1,
    InversePropensity = 2,
}

/// Opaque log dataset.
pub struct ScDataset {
    inner: Dataset,
}

/// Opaque trained CTR model.
pub struct ScModel {
    inner: CtrModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ScStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => ScStatus::Io,
            Error::Parse { .. } | Error::Json(_) => ScStatus::Parse,
            Error::Config { .. } | Error::Usage(_) => ScStatus::Config,
            Error::InsufficientData(_) => ScStatus::InsufficientData,
            Error::DegenerateLabels => ScStatus::DegenerateLabels,
            _ => ScStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            ScStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            ScStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ScStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(ScStatus::InvalidArgument, message.into())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn c_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a JSONL impression log.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_dataset_read(
    path: *const c_char,
    module_kind: ScModuleKind,
    group_size: u32,
    max_position: u32,
    out: *mut *mut ScDataset,
) -> ScStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let kind = match module_kind {
            ScModuleKind::InGrid => ModuleKind::InGrid,
            ScModuleKind::BelowGrid => ModuleKind::BelowGrid,
        };
        let layout = BucketLayout::new(kind, group_size, max_position)?;
        let inner = read_logs(path, layout)?;
        write_out(out, Box::into_raw(Box::new(ScDataset { inner })), "out")
    })
}

/// Generates simulated logs from a JSON simulator config (NULL for
/// defaults). The ground truth is not exposed through this interface.
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_simulate(config_json: *const c_char, out: *mut *mut ScDataset) -> ScStatus {
    guard(|| {
        let config: SimConfig = if config_json.is_null() {
            SimConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?)
                .map_err(|e| Failure(ScStatus::Config, e.to_string()))?
        };
        let (inner, _) = generate_logs(&config)?;
        write_out(out, Box::into_raw(Box::new(ScDataset { inner })), "out")
    })
}

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_dataset_len(dataset: *const ScDataset, out: *mut usize) -> ScStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        write_out(out, ds.inner.len(), "out")
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_dataset_free(dataset: *mut ScDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Estimates view propensities from a dataset. Writes up to `capacity`
/// values (position 1 first) into `out` and the table length into
/// `out_len`; fails with INVALID_ARGUMENT if `capacity` is too small.
///
/// # Safety
/// `out` must hold `capacity` doubles; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_fit_propensity(
    dataset: *const ScDataset,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> ScStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let table = fit_propensity(&ds.inner)?;
        let n = table.p_view.len();
        write_out(out_len, n, "out_len")?;
        if capacity < n {
            return Err(invalid(format!("capacity {capacity} < {n} positions")));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(table.p_view.as_ptr(), out, n);
        Ok(())
    })
}

/// Weight of a single de-bias function at `position`. `propensity` (length
/// `propensity_len`, position 1 first) is required for inverse propensity
/// and ignored otherwise.
///
/// # Safety
/// `propensity` must be NULL or hold `propensity_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sc_debias_weight(
    kind: ScDebiasKind,
    param: f64,
    position: u32,
    propensity: *const f64,
    propensity_len: usize,
    out: *mut f64,
) -> ScStatus {
    guard(|| {
        let function = match kind {
            ScDebiasKind::Polynomial => DebiasFunction::polynomial(param),
            ScDebiasKind::Logarithmic => DebiasFunction::logarithmic(param),
            ScDebiasKind::InversePropensity => DebiasFunction::inverse_propensity(),
        };
        function.validate()?;
        if position < 1 {
            return Err(invalid("position must be >= 1"));
        }
        let table = if propensity.is_null() {
            None
        } else {
            Some(PropensityTable::new(c_slice(propensity, propensity_len, "propensity")?.to_vec())?)
        };
        write_out(out, function.eval(position, table.as_ref())?, "out")
    })
}

unsafe fn scored(scores: *const f64, labels: *const u8, n: usize) -> Result<ScoredLabels, Failure> {
    let s = c_slice(scores, n, "scores")?.to_vec();
    let l = c_slice(labels, n, "labels")?.to_vec();
    Ok(ScoredLabels::new(s, l)?)
}

/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_auroc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> ScStatus {
    guard(|| {
        let data = scored(scores, labels, n)?;
        write_out(out, auroc(&data)?, "out")
    })
}

/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_auprc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> ScStatus {
    guard(|| {
        let data = scored(scores, labels, n)?;
        write_out(out, auprc(&data)?, "out")
    })
}

/// `pctr^c * cpc` for a valid candidate.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_squash_score(pctr: f64, cpc: f64, c: f64, out: *mut f64) -> ScStatus {
    guard(|| {
        let candidate = Candidate {
            item_id: String::new(),
            seller_id: String::new(),
            pctr,
            cpc,
            expected_order_value: 0.0,
        };
        candidate.validate()?;
        let config = SquashConfig { c };
        config.validate()?;
        write_out(out, squash_score(&candidate, &config), "out")
    })
}

/// Trains a weighted logistic-regression model on a row-major `n x dim`
/// feature matrix. `weights` may be NULL for unit weights.
///
/// # Safety
/// `features` must hold `n * dim` doubles, `labels` `n` bytes and
/// `weights` NULL or `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_train(
    features: *const f64,
    labels: *const u8,
    weights: *const f64,
    n: usize,
    dim: usize,
    l2: f64,
    max_iters: usize,
    out: *mut *mut ScModel,
) -> ScStatus {
    guard(|| {
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let x = c_slice(features, len, "features")?;
        let y = c_slice(labels, n, "labels")?;
        let w = if weights.is_null() { None } else { Some(c_slice(weights, n, "weights")?) };
        let instances: Vec<TrainingInstance> = (0..n)
            .map(|i| TrainingInstance {
                features: x[i * dim..(i + 1) * dim].to_vec(),
                label: y[i],
                weight: w.map_or(1.0, |w| w[i]),
            })
            .collect();
        let config = TrainConfig {
            l2,
            max_iters,
            ..TrainConfig::default()
        };
        config.validate()?;
        let inner = train(&instances, &config)?;
        write_out(out, Box::into_raw(Box::new(ScModel { inner })), "out")
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_load(path: *const c_char, out: *mut *mut ScModel) -> ScStatus {
    guard(|| {
        let inner = CtrModel::load(c_str(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(ScModel { inner })), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sc_model_save(model: *const ScModel, path: *const c_char) -> ScStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        Ok(m.inner.save(c_str(path, "path")?)?)
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_dim(model: *const ScModel, out: *mut usize) -> ScStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write_out(out, m.inner.dim(), "out")
    })
}

/// pCTR for one feature vector of length `dim`.
///
/// # Safety
/// `model` must be a live handle, `features` must hold `dim` doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sc_model_predict(
    model: *const ScModel,
    features: *const f64,
    dim: usize,
    out: *mut f64,
) -> ScStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = c_slice(features, dim, "features")?;
        write_out(out, m.inner.predict(x)?, "out")
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sc_model_free(model: *mut ScModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
