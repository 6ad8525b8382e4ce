//! C interface to `selfcert`.
//!
//! Every fallible function returns a [`SelfcertStatus`]; on anything other
//! than `SELFCERT_STATUS_OK` a description is available from
//! [`selfcert_last_error`] on the same thread. Datasets and models are opaque
//! handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::Array2;
use selfcert::bounds::{self, BoundValue, ConfidenceParams};
use selfcert::certify::{compute_certificate, CertificationSet, CertifyOptions};
use selfcert::data::{load_csv, Dataset, LabelColumn};
use selfcert::model_io::{load_model, Model};
use selfcert::pnn::GaussianWeightDist;
use selfcert::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfcertStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    ModelFormat = 6,
    Certification = 7,
    Panic = 8,
}

/// Opaque dataset handle.
pub struct SelfcertDataset(Dataset);

/// Opaque model handle (deterministic network or Gaussian weight distribution).
pub struct SelfcertModel(Model);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfcertBound {
    pub value: f64,
    /// The raw bound reached 1 and `value` was clamped.
    pub vacuous: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfcertCertifyOptions {
    /// Monte Carlo weight draws.
    pub m: u64,
    pub seed: u64,
    pub delta: f64,
    pub delta_prime: f64,
    /// Worker threads, 0 for all cores.
    pub workers: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfcertCertificate {
    pub mc_avg: f64,
    pub mc_errors: u64,
    pub emp_bound: f64,
    pub kl_div: f64,
    pub n_cert: u64,
    pub m: u64,
    pub final_bound: f64,
    pub quad_bound: f64,
    pub vacuous: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SelfcertStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) | Error::Fetch { .. } | Error::Checksum { .. } => SelfcertStatus::Io,
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => SelfcertStatus::Parse,
            Error::Numerical(_) => SelfcertStatus::Numerical,
            Error::ModelFormat(_) => SelfcertStatus::ModelFormat,
            Error::CertificationOverlap { .. } | Error::MissingProvenance => SelfcertStatus::Certification,
            _ => SelfcertStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SelfcertStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("no interior nul"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SelfcertStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            SelfcertStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(Some(msg));
            SelfcertStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(SelfcertStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn in_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(SelfcertStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn in_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SelfcertStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))
}

fn check_probability(name: &str, v: f64) -> Result<(), Failure> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn check_delta(name: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in (0, 1), got {v}")))
    }
}

fn check_count(name: &str, v: u64) -> Result<usize, Failure> {
    if v == 0 {
        return Err(invalid(format!("{name} must be positive")));
    }
    usize::try_from(v).map_err(|_| invalid(format!("{name} too large")))
}

fn check_kl(v: f64) -> Result<(), Failure> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("KL divergence must be finite and nonnegative, got {v}")))
    }
}

impl From<BoundValue> for SelfcertBound {
    fn from(b: BoundValue) -> Self {
        Self {
            value: b.value,
            vacuous: b.vacuous,
        }
    }
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn selfcert_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn selfcert_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Largest `p` with `kl(q || p) <= c`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn selfcert_kl_inverse(q: f64, c: f64, out: *mut f64) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        check_probability("q", q)?;
        if !(c >= 0.0) {
            return Err(invalid(format!("budget must be nonnegative, got {c}")));
        }
        *out = bounds::kl_inverse(q, c);
        Ok(())
    })
}

/// PAC-Bayes-kl bound from an empirical risk bound and a KL divergence.
///
/// # Safety
/// `out` must be null or point to a writable `SelfcertBound`.
#[no_mangle]
pub unsafe extern "C" fn selfcert_pac_bayes_kl_bound(
    emp_risk: f64,
    kl_div: f64,
    n: u64,
    delta: f64,
    out: *mut SelfcertBound,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        check_probability("emp_risk", emp_risk)?;
        check_kl(kl_div)?;
        check_delta("delta", delta)?;
        let n = check_count("n", n)?;
        *out = bounds::pac_bayes_kl_bound(emp_risk, kl_div, n, delta).into();
        Ok(())
    })
}

/// Quadratic PAC-Bayes bound.
///
/// # Safety
/// `out` must be null or point to a writable `SelfcertBound`.
#[no_mangle]
pub unsafe extern "C" fn selfcert_quadratic_bound(
    emp_risk: f64,
    kl_div: f64,
    n: u64,
    delta: f64,
    out: *mut SelfcertBound,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        check_probability("emp_risk", emp_risk)?;
        check_kl(kl_div)?;
        check_delta("delta", delta)?;
        let n = check_count("n", n)?;
        *out = bounds::pac_bayes_quadratic_bound(emp_risk, kl_div, n, delta).into();
        Ok(())
    })
}

/// Upper bound on the expected empirical risk from an `m`-draw Monte Carlo average.
///
/// # Safety
/// `out` must be null or point to writable memory for one `double`.
#[no_mangle]
pub unsafe extern "C" fn selfcert_mc_sample_bound(
    mc_avg: f64,
    m: u64,
    delta_prime: f64,
    out: *mut f64,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        check_probability("mc_avg", mc_avg)?;
        check_delta("delta_prime", delta_prime)?;
        let m = check_count("m", m)?;
        *out = bounds::mc_sample_bound(mc_avg, m, delta_prime);
        Ok(())
    })
}

/// Hoeffding-Chernoff test-set bound.
///
/// # Safety
/// `out` must be null or point to a writable `SelfcertBound`.
#[no_mangle]
pub unsafe extern "C" fn selfcert_chernoff_bound(
    test_err: f64,
    n_test: u64,
    delta: f64,
    out: *mut SelfcertBound,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        check_probability("test_err", test_err)?;
        check_delta("delta", delta)?;
        let n = check_count("n_test", n_test)?;
        *out = bounds::chernoff_test_bound(test_err, n, delta).into();
        Ok(())
    })
}

/// Binomial tail inversion bound for `k` errors out of `n_test`.
///
/// # Safety
/// `out` must be null or point to a writable `SelfcertBound`.
#[no_mangle]
pub unsafe extern "C" fn selfcert_binomial_bound(
    k: u64,
    n_test: u64,
    delta: f64,
    out: *mut SelfcertBound,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        check_delta("delta", delta)?;
        let n = check_count("n_test", n_test)?;
        if k > n_test {
            return Err(invalid(format!("k = {k} exceeds n_test = {n_test}")));
        }
        *out = bounds::binomial_test_bound(k as usize, n, delta).into();
        Ok(())
    })
}

/// Builds a dataset from a row-major `rows x dim` feature matrix and labels in
/// `0..num_classes`.
///
/// # Safety
/// `features` must point to `rows * dim` doubles, `labels` to `rows`
/// `uint32_t`s, and `out` to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn selfcert_dataset_from_arrays(
    features: *const f64,
    labels: *const u32,
    rows: usize,
    dim: usize,
    num_classes: usize,
    out: *mut *mut SelfcertDataset,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if rows == 0 || dim == 0 {
            return Err(invalid("dataset needs at least one row and one column"));
        }
        let len = rows.checked_mul(dim).ok_or_else(|| invalid("rows * dim overflows"))?;
        let x = std::slice::from_raw_parts(in_ref(features, "features")?, len);
        let y = std::slice::from_raw_parts(in_ref(labels, "labels")?, rows);
        let x = Array2::from_shape_vec((rows, dim), x.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let y = y.iter().map(|&v| v as usize).collect();
        let names = (0..num_classes).map(|c| c.to_string()).collect();
        let ds = Dataset::new("ffi", x, y, names)?;
        *out = Box::into_raw(Box::new(SelfcertDataset(ds)));
        Ok(())
    })
}

/// Loads a CSV with a header row. `label_col` is a column name, a 0-based
/// index, or null for the last column.
///
/// # Safety
/// `path` and a non-null `label_col` must be nul-terminated strings; `out`
/// must point to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn selfcert_dataset_load_csv(
    path: *const c_char,
    label_col: *const c_char,
    out: *mut *mut SelfcertDataset,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(in_str(path, "path")?);
        let label = if label_col.is_null() {
            LabelColumn::Last
        } else {
            in_str(label_col, "label_col")?.parse().expect("infallible")
        };
        let ds = load_csv(path, &label)?;
        *out = Box::into_raw(Box::new(SelfcertDataset(ds)));
        Ok(())
    })
}

/// Number of rows, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn selfcert_dataset_rows(ds: *const SelfcertDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Number of feature columns, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn selfcert_dataset_dim(ds: *const SelfcertDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

/// Number of classes, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn selfcert_dataset_num_classes(ds: *const SelfcertDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.class_count)
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn selfcert_dataset_free(ds: *mut SelfcertDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Loads a model file written by the `selfcert` tool.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` must point to writable
/// storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn selfcert_model_load(
    path: *const c_char,
    out: *mut *mut SelfcertModel,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let file = load_model(in_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(SelfcertModel(file.model)));
        Ok(())
    })
}

/// True for a Gaussian weight distribution, false for a deterministic
/// network or a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn selfcert_model_is_gaussian(model: *const SelfcertModel) -> bool {
    matches!(model.as_ref(), Some(SelfcertModel(Model::Gaussian(_))))
}

/// Number of network parameters, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn selfcert_model_num_params(model: *const SelfcertModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.arch().num_params())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn selfcert_model_free(model: *mut SelfcertModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Defaults used by the `selfcert` tool.
#[no_mangle]
pub extern "C" fn selfcert_certify_options_default() -> SelfcertCertifyOptions {
    let d = CertifyOptions::default();
    SelfcertCertifyOptions {
        m: d.m as u64,
        seed: d.base_seed,
        delta: d.confidence.delta,
        delta_prime: d.confidence.delta_prime,
        workers: 0,
    }
}

fn gaussian<'a>(m: &'a SelfcertModel, name: &str) -> Result<&'a GaussianWeightDist, Failure> {
    match &m.0 {
        Model::Gaussian(q) => Ok(q),
        Model::Deterministic(_) => Err(invalid(format!("`{name}` is not a Gaussian model"))),
    }
}

/// Risk certificate for `posterior` on `data`, relative to `prior`.
///
/// By passing `data` the caller asserts that none of its rows influenced the
/// prior, and that it is already in the model's input space (the same
/// preprocessing as at training time).
///
/// # Safety
/// All pointers must be live handles or valid structs; `opts` may be null for
/// the defaults.
#[no_mangle]
pub unsafe extern "C" fn selfcert_certify(
    posterior: *const SelfcertModel,
    prior: *const SelfcertModel,
    data: *const SelfcertDataset,
    opts: *const SelfcertCertifyOptions,
    out: *mut SelfcertCertificate,
) -> SelfcertStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let q = gaussian(in_ref(posterior, "posterior")?, "posterior")?;
        let p = gaussian(in_ref(prior, "prior")?, "prior")?;
        let data = &in_ref(data, "data")?.0;
        let o = opts.as_ref().copied().unwrap_or_else(|| selfcert_certify_options_default());
        let options = CertifyOptions {
            confidence: ConfidenceParams {
                delta: o.delta,
                delta_prime: o.delta_prime,
                ..ConfidenceParams::default()
            },
            m: check_count("m", o.m)?,
            base_seed: o.seed,
            workers: (o.workers > 0).then_some(o.workers),
            xent_p_min: None,
        };
        let set = CertificationSet::data_independent_prior(data.clone());
        let c = compute_certificate(q, p, &set, &options)?;
        *out = SelfcertCertificate {
            mc_avg: c.mc_avg_01,
            mc_errors: c.mc_errors,
            emp_bound: c.emp_bound,
            kl_div: c.kl_div,
            n_cert: c.n_cert as u64,
            m: c.m_samples as u64,
            final_bound: c.final_bound,
            quad_bound: c.quad_bound,
            vacuous: c.vacuous,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(Failure::from(Error::MissingProvenance).0, SelfcertStatus::Certification);
        assert_eq!(Failure::from(Error::ModelFormat("x".into())).0, SelfcertStatus::ModelFormat);
        assert_eq!(Failure::from(Error::InvalidConfig("x".into())).0, SelfcertStatus::InvalidArgument);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), SelfcertStatus::Panic);
        let msg = unsafe { CStr::from_ptr(selfcert_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
    }
}
