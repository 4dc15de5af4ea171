//! C ABI for starkit.
//!
//! Distance functions are passed around as opaque [`StarkitExpr`] handles.
//! Every fallible call returns a [`StarkitStatus`]; on failure the message is
//! available from [`starkit_last_error`] on the same thread until the next
//! failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use starkit::lattice::SearchMode;
use starkit::measure::{DensityMethod, DensityOracle, ResonantSpec, Resonator};
use starkit::skeleton::extract_skeleton;
use starkit::{parse_distance_function, to_dsl, Error, Expr, Vec2};

/// Opaque distance function.
pub struct StarkitExpr {
    expr: Expr,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarkitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidInput = 4,
    IrrationalSkeleton = 5,
    Numeric = 6,
    Panic = 7,
    Other = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarkitDensityMethod {
    Auto = 0,
    Analytic = 1,
    Quadrature = 2,
    MonteCarlo = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct StarkitSkeletonCounts {
    pub lines: usize,
    pub significant: usize,
    pub irrational: usize,
    pub bounded: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> StarkitStatus {
    match e {
        Error::Parse { .. } | Error::Arity { .. } => StarkitStatus::Parse,
        Error::IrrationalSkeleton => StarkitStatus::IrrationalSkeleton,
        e if e.is_numeric() => StarkitStatus::Numeric,
        Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::DegenerateExpr => StarkitStatus::InvalidInput,
        _ => StarkitStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (StarkitStatus, String)>) -> StarkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StarkitStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            StarkitStatus::Panic
        }
    }
}

fn lib(e: Error) -> (StarkitStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (StarkitStatus, String) {
    (StarkitStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a>(h: *const StarkitExpr) -> Result<&'a Expr, (StarkitStatus, String)> {
    h.as_ref().map(|h| &h.expr).ok_or_else(|| null("expression handle"))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn starkit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Parses DSL or JSON text into a new handle stored in `*out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn starkit_expr_parse(text: *const c_char, out: *mut *mut StarkitExpr) -> StarkitStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CStr::from_ptr(text).to_str().map_err(|e| (StarkitStatus::InvalidUtf8, e.to_string()))?;
        let expr = parse_distance_function(s).map_err(lib)?;
        *out = Box::into_raw(Box::new(StarkitExpr { expr }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `h` must come from [`starkit_expr_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn starkit_expr_free(h: *mut StarkitExpr) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Evaluates F(x1, x2).
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn starkit_expr_eval(h: *const StarkitExpr, x1: f64, x2: f64, out: *mut f64) -> StarkitStatus {
    guard(|| {
        let e = handle(h)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = Vec2::checked(x1, x2).map_err(lib)?;
        *out = e.eval(x);
        Ok(())
    })
}

/// Canonical DSL text of the handle; free with [`starkit_string_free`].
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn starkit_expr_to_string(h: *const StarkitExpr, out: *mut *mut c_char) -> StarkitStatus {
    guard(|| {
        let e = handle(h)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = CString::new(to_dsl(e)).map_err(|e| (StarkitStatus::Other, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn starkit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Skeleton line counts.
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn starkit_skeleton_counts(
    h: *const StarkitExpr,
    out: *mut StarkitSkeletonCounts,
) -> StarkitStatus {
    guard(|| {
        let e = handle(h)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = extract_skeleton(e).map_err(lib)?;
        *out = StarkitSkeletonCounts {
            lines: s.lines.len(),
            significant: s.lines.iter().filter(|l| l.significant).count(),
            irrational: s.lines.iter().filter(|l| !l.slope.is_rational()).count(),
            bounded: s.is_bounded(),
        };
        Ok(())
    })
}

/// D_F(ε) over the unit square. `samples` and `seed` are used only by the
/// Monte Carlo path; `stderr_out` may be null.
///
/// # Safety
/// `h` must be a live handle; `value_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn starkit_density(
    h: *const StarkitExpr,
    epsilon: f64,
    method: StarkitDensityMethod,
    samples: u64,
    seed: u64,
    value_out: *mut f64,
    stderr_out: *mut f64,
) -> StarkitStatus {
    guard(|| {
        let e = handle(h)?;
        if value_out.is_null() {
            return Err(null("value_out"));
        }
        let m = match method {
            StarkitDensityMethod::Auto => DensityMethod::Auto,
            StarkitDensityMethod::Analytic => DensityMethod::Analytic,
            StarkitDensityMethod::Quadrature => DensityMethod::Quadrature,
            StarkitDensityMethod::MonteCarlo => DensityMethod::MonteCarlo,
        };
        let r = DensityOracle::new(e).map_err(lib)?.density(epsilon, m, samples, seed).map_err(lib)?;
        *value_out = r.value;
        if !stderr_out.is_null() {
            *stderr_out = r.stderr;
        }
        Ok(())
    })
}

/// Whether x lies in B_q(F, ε); on success `*p_out` (two entries, may be
/// null) receives the minimising numerator.
///
/// # Safety
/// `h` must be a live handle; `member_out` must be valid; `p_out` must be
/// null or point to two writable `int64_t`.
#[no_mangle]
pub unsafe extern "C" fn starkit_membership(
    h: *const StarkitExpr,
    x1: f64,
    x2: f64,
    q: u64,
    epsilon: f64,
    member_out: *mut bool,
    p_out: *mut i64,
) -> StarkitStatus {
    guard(|| {
        let e = handle(h)?;
        if member_out.is_null() {
            return Err(null("member_out"));
        }
        let x = Vec2::checked(x1, x2).map_err(lib)?;
        let hit = Resonator::new(e)
            .map_err(lib)?
            .membership(x, &ResonantSpec::new(q, epsilon), SearchMode::Auto)
            .map_err(lib)?;
        *member_out = hit.is_some();
        if let (Some(hit), false) = (hit, p_out.is_null()) {
            *p_out = hit.p[0];
            *p_out.add(1) = hit.p[1];
        }
        Ok(())
    })
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn starkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
