//! C ABI for `prodnorm`.
//!
//! Parameters and operators are opaque heap handles created by `*_new` and
//! released by `*_free`. Every fallible function returns a [`PnStatus`];
//! results go through out-pointers. After a failure,
//! [`pn_last_error_message`] gives a description (per thread).

use std::cell::RefCell;
use std::ffi::{c_char, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};

use prodnorm::bessel::{bessel_k, BesselOrder};
use prodnorm::charfn::cf_mean;
use prodnorm::density::{cdf_product, pdf_mean_zero_means, pdf_product, SeriesControl};
use prodnorm::error::Error;
use prodnorm::moments::{central_moments, raw_moments};
use prodnorm::params::{MeanParams, ProductNormalParams};
use prodnorm::stein::{apply_derivs, operator, OperatorKind, SteinOperatorSpec};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    NotConverged = 3,
    SingularPoint = 4,
    CaseMismatch = 5,
    Overflow = 6,
    InvalidArgument = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// The seven Stein operators.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnOperatorKind {
    A1 = 1,
    A2 = 2,
    A3 = 3,
    A4 = 4,
    A5 = 5,
    A6 = 6,
    A7 = 7,
}

/// Opaque handle to validated parameters of the mean of `n` products.
pub struct PnParams {
    inner: MeanParams,
}

/// Opaque handle to a Stein operator coefficient table.
pub struct PnOperator {
    inner: SteinOperatorSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PnStatus {
    match e {
        Error::NonPositiveSigma { .. }
        | Error::CorrelationOutOfRange(_)
        | Error::InvalidCopyCount(_)
        | Error::NonFiniteParameter { .. }
        | Error::ParameterNotRational(_) => PnStatus::InvalidParameter,
        Error::NotConverged { .. } => PnStatus::NotConverged,
        Error::SingularPoint => PnStatus::SingularPoint,
        Error::CaseMismatch(_) => PnStatus::CaseMismatch,
        Error::Overflow { .. } => PnStatus::Overflow,
        _ => PnStatus::InvalidArgument,
    }
}

/// Run `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), PnStatus>) -> PnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PnStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            PnStatus::Panic
        }
    }
}

fn fail(e: Error) -> PnStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> PnStatus {
    set_error(format!("{what} is null"));
    PnStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, PnStatus> {
    // SAFETY: the caller guarantees `p` is null or points to a live `T`.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<(), PnStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and, by the caller's contract, valid for writes.
    unsafe { p.write(v) };
    Ok(())
}

/// Create a parameter handle. On success `*out` owns a new handle that must
/// be released with [`pn_params_free`].
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_params_new(
    mu_x: f64,
    mu_y: f64,
    sigma_x: f64,
    sigma_y: f64,
    rho: f64,
    n: u64,
    out: *mut *mut PnParams,
) -> PnStatus {
    guard(|| {
        let inner = ProductNormalParams::new(mu_x, mu_y, sigma_x, sigma_y, rho)
            .and_then(|p| p.with_copies(n))
            .map_err(fail)?;
        let h = Box::into_raw(Box::new(PnParams { inner }));
        // SAFETY: forwarded caller contract.
        unsafe { write(out, h, "out") }.inspect_err(|_| {
            // SAFETY: `h` came from Box::into_raw above and was not shared.
            drop(unsafe { Box::from_raw(h) });
        })
    })
}

/// Release a parameter handle. Null is ignored.
///
/// # Safety
/// `p` must be null or a handle from [`pn_params_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_params_free(p: *mut PnParams) {
    if !p.is_null() {
        // SAFETY: per the contract above.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Density at `x`: of `Z = XY` when `n = 1`, of the mean of `n` copies when
/// both means are zero. Writes the value and its natural log.
///
/// # Safety
/// `p` must be a live handle; `value` and `log_value` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_pdf(p: *const PnParams, x: f64, value: *mut f64, log_value: *mut f64) -> PnStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let mp = unsafe { deref(p, "params") }?.inner;
        let zero = mp.base().mu_x() == 0.0 && mp.base().mu_y() == 0.0;
        let v = if mp.n() == 1 {
            pdf_product(mp.base(), x, &SeriesControl::default())
        } else if zero {
            pdf_mean_zero_means(&mp, x)
        } else {
            Err(Error::CaseMismatch("density for n > 1 needs zero means".into()))
        }
        .map_err(fail)?;
        // SAFETY: forwarded caller contract.
        unsafe {
            write(value, v.value(), "value")?;
            write(log_value, v.log_abs, "log_value")
        }
    })
}

/// Distribution function of `Z = XY` (requires `n = 1`).
///
/// # Safety
/// `p` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_cdf(p: *const PnParams, x: f64, out: *mut f64) -> PnStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let mp = unsafe { deref(p, "params") }?.inner;
        if mp.n() != 1 {
            return Err(fail(Error::CaseMismatch("cdf needs n = 1".into())));
        }
        let c = cdf_product(mp.base(), x, &SeriesControl::default()).map_err(fail)?;
        // SAFETY: forwarded caller contract.
        unsafe { write(out, c, "out") }
    })
}

unsafe fn moments_into(p: *const PnParams, kmax: usize, out: *mut f64, len: usize, central: bool) -> PnStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let mp = unsafe { deref(p, "params") }?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < kmax + 1 {
            set_error(format!("buffer holds {len} values, need {}", kmax + 1));
            return Err(PnStatus::BufferTooSmall);
        }
        let t = if central { central_moments(&mp, kmax) } else { raw_moments(&mp, kmax) };
        // SAFETY: `out` is valid for `len >= kmax + 1` writes.
        unsafe { std::ptr::copy_nonoverlapping(t.values.as_ptr(), out, kmax + 1) };
        Ok(())
    })
}

/// Raw moments `E[Zbar_n^k]`, `k = 0..=kmax`, into `out[0..=kmax]`.
///
/// # Safety
/// `p` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pn_raw_moments(p: *const PnParams, kmax: usize, out: *mut f64, len: usize) -> PnStatus {
    // SAFETY: forwarded caller contract.
    unsafe { moments_into(p, kmax, out, len, false) }
}

/// Central moments, `k = 0..=kmax`, into `out[0..=kmax]`.
///
/// # Safety
/// `p` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pn_central_moments(p: *const PnParams, kmax: usize, out: *mut f64, len: usize) -> PnStatus {
    // SAFETY: forwarded caller contract.
    unsafe { moments_into(p, kmax, out, len, true) }
}

/// Characteristic function of the mean of `n` copies at `t`.
///
/// # Safety
/// `p` must be a live handle; `re` and `im` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_cf(p: *const PnParams, t: f64, re: *mut f64, im: *mut f64) -> PnStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let mp = unsafe { deref(p, "params") }?.inner;
        if !t.is_finite() {
            return Err(fail(Error::InvalidArgument(format!("t = {t} is not finite"))));
        }
        let phi = cf_mean(&mp, t);
        // SAFETY: forwarded caller contract.
        unsafe {
            write(re, phi.re, "re")?;
            write(im, phi.im, "im")
        }
    })
}

/// Build a Stein operator for the given parameters. Fails with
/// `PN_STATUS_CASE_MISMATCH` when the parameters are outside its case.
///
/// # Safety
/// `p` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_operator_new(p: *const PnParams, kind: PnOperatorKind, out: *mut *mut PnOperator) -> PnStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let mp = unsafe { deref(p, "params") }?.inner;
        let k = OperatorKind::ALL[kind as usize - 1];
        let inner = operator(k, &mp).map_err(fail)?;
        let h = Box::into_raw(Box::new(PnOperator { inner }));
        // SAFETY: forwarded caller contract.
        unsafe { write(out, h, "out") }.inspect_err(|_| {
            // SAFETY: `h` came from Box::into_raw above and was not shared.
            drop(unsafe { Box::from_raw(h) });
        })
    })
}

/// Release an operator handle. Null is ignored.
///
/// # Safety
/// `op` must be null or a handle from [`pn_operator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_operator_free(op: *mut PnOperator) {
    if !op.is_null() {
        // SAFETY: per the contract above.
        drop(unsafe { Box::from_raw(op) });
    }
}

/// Differential order of the operator, or 0 for a null handle.
///
/// # Safety
/// `op` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pn_operator_order(op: *const PnOperator) -> usize {
    // SAFETY: per the contract above.
    unsafe { op.as_ref() }.map_or(0, |o| o.inner.order())
}

/// Coefficients `a_{0,0}, a_{1,0}, a_{0,1}, a_{1,1}, ...`; `out` must hold
/// `2 * (order + 1)` values.
///
/// # Safety
/// `op` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pn_operator_coefficients(op: *const PnOperator, out: *mut f64, len: usize) -> PnStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let o = unsafe { deref(op, "operator") }?;
        let flat = o.inner.flat();
        if out.is_null() {
            return Err(null("out"));
        }
        if len < flat.len() {
            set_error(format!("buffer holds {len} values, need {}", flat.len()));
            return Err(PnStatus::BufferTooSmall);
        }
        // SAFETY: `out` is valid for `len >= flat.len()` writes.
        unsafe { std::ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len()) };
        Ok(())
    })
}

/// `A f(x)` given `derivs = [f(x), f'(x), ..., f''''(x)]` (five values).
///
/// # Safety
/// `op` must be a live handle; `derivs` valid for five reads; `out` valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_operator_apply(op: *const PnOperator, derivs: *const f64, x: f64, out: *mut f64) -> PnStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let o = unsafe { deref(op, "operator") }?;
        if derivs.is_null() {
            return Err(null("derivs"));
        }
        let mut d = [0.0; 5];
        // SAFETY: `derivs` is valid for five reads.
        unsafe { std::ptr::copy_nonoverlapping(derivs, d.as_mut_ptr(), 5) };
        // SAFETY: forwarded caller contract.
        unsafe { write(out, apply_derivs(&o.inner, &d, x), "out") }
    })
}

/// `K_nu(x)` for integer or half-integer `nu`; `e^x K_nu(x)` when `scaled`
/// is nonzero.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pn_bessel_k(nu: f64, x: f64, scaled: c_int, out: *mut f64) -> PnStatus {
    guard(|| {
        let order = BesselOrder::from_f64(nu).map_err(fail)?;
        let v = bessel_k(order, x, scaled != 0).map_err(fail)?;
        // SAFETY: forwarded caller contract.
        unsafe { write(out, v, "out") }
    })
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length in bytes,
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: `buf` is valid for `len > n` writes.
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
