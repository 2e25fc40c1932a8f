//! C interface to `pcit`.
//!
//! Every fallible function returns a [`PcitStatus`]. On failure a message is
//! kept per thread and can be read with [`pcit_last_error`]. Handles are
//! opaque; release them with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pcit::construct::{plan_budget, ConstructOptions, Constructor, Method, Normalization, PortfolioFile};
use pcit::evaluation::test_portfolio;
use pcit::model::{par_score, Outcome, Portfolio};
use pcit::scenario::{load_scenario, LoadedScenario};
use pcit::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Scenario = 6,
    BufferTooSmall = 7,
    Panic = 8,
    Other = 9,
}

/// A loaded scenario and its target-algorithm backend.
pub struct PcitScenario(LoadedScenario);

/// A constructed or loaded portfolio.
pub struct PcitPortfolio(Portfolio);

/// Test summary of a portfolio.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PcitSummary {
    pub instances: usize,
    pub timeouts: usize,
    pub crashed: usize,
    pub par10: f64,
    pub par1: f64,
    pub cpu_time: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PcitStatus {
    match e {
        Error::InvalidArgument(_) | Error::InvalidConfiguration(_) | Error::FeatureDimension { .. } | Error::Usage(_) => {
            PcitStatus::InvalidArgument
        }
        Error::Io(_) | Error::File { .. } | Error::Spawn { .. } => PcitStatus::Io,
        Error::SpaceParse { .. } | Error::Parse(_) | Error::Json(_) => PcitStatus::Parse,
        Error::Scenario(_) | Error::UnknownInstance(_) | Error::NoInstances => PcitStatus::Scenario,
        _ => PcitStatus::Other,
    }
}

struct Fail(PcitStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PcitStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PcitStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            PcitStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(PcitStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: the caller guarantees `p` is null or a live handle.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(null(what))
    } else {
        Ok(())
    }
}

/// Phase count and block size as used by `method`.
fn shape(method: Method, k: usize, phases: usize, block: usize) -> (usize, usize) {
    match method {
        Method::Pcit => (phases, 1),
        Method::Global => (1, k),
        Method::Parhydra => (1, block),
        Method::Pcrs | Method::Clustering => (1, 1),
    }
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn pcit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pcit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pcit_scenario_load(path: *const c_char, out: *mut *mut PcitScenario) -> PcitStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let path = unsafe { text(path, "path") }?;
        let loaded = load_scenario(Path::new(path))?;
        unsafe { *out = Box::into_raw(Box::new(PcitScenario(loaded))) };
        Ok(())
    })
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must come from [`pcit_scenario_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pcit_scenario_free(scenario: *mut PcitScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Portfolio size `k` of the scenario, or 0 for null.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcit_scenario_k(scenario: *const PcitScenario) -> usize {
    unsafe { scenario.as_ref() }.map_or(0, |s| s.0.scenario.k)
}

/// Number of training instances, or 0 for null.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcit_scenario_train_count(scenario: *const PcitScenario) -> usize {
    unsafe { scenario.as_ref() }.map_or(0, |s| s.0.scenario.train_instances.len())
}

/// Constructs a portfolio with `method` (`pcit`, `pcrs`, `global`,
/// `clustering` or `parhydra`). Budgets are in seconds; `phases` applies to
/// PCIT and `block` to PARHYDRA, other methods ignore them.
///
/// # Safety
/// `scenario` must be a live handle, `method` a NUL-terminated string,
/// `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pcit_construct(
    scenario: *const PcitScenario,
    method: *const c_char,
    t_c: f64,
    t_v: f64,
    repetitions: usize,
    phases: usize,
    block: usize,
    seed: u64,
    out: *mut *mut PcitPortfolio,
) -> PcitStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let sc = unsafe { borrow(scenario, "scenario") }?;
        let method: Method = unsafe { text(method, "method") }?.parse()?;
        let k = sc.0.scenario.k;
        let (phases, block) = shape(method, k, phases, block);
        let plan = plan_budget(method, k, t_c, t_v, repetitions, phases, block)?;
        let normalization = match &sc.0.defaults.normalization {
            Some(n) => n.parse()?,
            None => Normalization::Linear,
        };
        let constructor = Constructor::new(&sc.0.scenario, sc.0.backend.as_ref())?;
        let result = constructor.construct(&plan, ConstructOptions { normalization, seed })?;
        unsafe { *out = Box::into_raw(Box::new(PcitPortfolio(result.portfolio))) };
        Ok(())
    })
}

/// Loads a portfolio file written by the `pcit` tool or
/// [`pcit_portfolio_save`].
///
/// # Safety
/// `scenario` must be a live handle, `path` a NUL-terminated string, `out`
/// a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pcit_portfolio_load(
    scenario: *const PcitScenario,
    path: *const c_char,
    out: *mut *mut PcitPortfolio,
) -> PcitStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let sc = unsafe { borrow(scenario, "scenario") }?;
        let path = unsafe { text(path, "path") }?;
        let portfolio = PortfolioFile::load(Path::new(path))?.to_portfolio(&sc.0.scenario.space)?;
        unsafe { *out = Box::into_raw(Box::new(PcitPortfolio(portfolio))) };
        Ok(())
    })
}

/// Writes a portfolio file.
///
/// # Safety
/// Handles must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pcit_portfolio_save(
    scenario: *const PcitScenario,
    portfolio: *const PcitPortfolio,
    path: *const c_char,
) -> PcitStatus {
    guard(|| {
        let sc = unsafe { borrow(scenario, "scenario") }?;
        let p = unsafe { borrow(portfolio, "portfolio") }?;
        let path = unsafe { text(path, "path") }?;
        PortfolioFile::new(&sc.0.scenario.name, &p.0).save(Path::new(path))?;
        Ok(())
    })
}

/// Releases a portfolio. Null is ignored.
///
/// # Safety
/// `portfolio` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pcit_portfolio_free(portfolio: *mut PcitPortfolio) {
    if !portfolio.is_null() {
        drop(unsafe { Box::from_raw(portfolio) });
    }
}

/// Number of components, or 0 for null.
///
/// # Safety
/// `portfolio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcit_portfolio_len(portfolio: *const PcitPortfolio) -> usize {
    unsafe { portfolio.as_ref() }.map_or(0, |p| p.0.components.len())
}

/// Solver CPU time spent constructing the portfolio, in seconds.
///
/// # Safety
/// `portfolio` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pcit_portfolio_cpu_time(portfolio: *const PcitPortfolio) -> f64 {
    unsafe { portfolio.as_ref() }.map_or(0.0, |p| p.0.consumed_cpu_time)
}

/// Copies component `index` as `name=value ...` text into `buf`.
///
/// `required` receives the buffer size needed including the terminator.
/// If `buf_len` is too small nothing is copied and `BUFFER_TOO_SMALL` is
/// returned; `buf` may be null to query the size.
///
/// # Safety
/// `portfolio` must be a live handle, `buf` null or writable for
/// `buf_len` bytes, `required` null or writable.
#[no_mangle]
pub unsafe extern "C" fn pcit_portfolio_component(
    portfolio: *const PcitPortfolio,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    required: *mut usize,
) -> PcitStatus {
    guard(|| {
        let p = unsafe { borrow(portfolio, "portfolio") }?;
        let c = p.0.components.get(index).ok_or_else(|| {
            Fail(
                PcitStatus::InvalidArgument,
                format!("component {index} out of range ({} components)", p.0.components.len()),
            )
        })?;
        let s = c.to_string();
        let need = s.len() + 1;
        if !required.is_null() {
            unsafe { *required = need };
        }
        if buf.is_null() || buf_len < need {
            return Err(Fail(PcitStatus::BufferTooSmall, format!("need {need} bytes")));
        }
        unsafe {
            ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
            *buf.add(s.len()) = 0;
        }
        Ok(())
    })
}

/// Tests a portfolio on the scenario's test instances; `repetitions` must
/// be odd.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pcit_test(
    scenario: *const PcitScenario,
    portfolio: *const PcitPortfolio,
    repetitions: usize,
    seed: u64,
    out: *mut PcitSummary,
) -> PcitStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let sc = unsafe { borrow(scenario, "scenario") }?;
        let p = unsafe { borrow(portfolio, "portfolio") }?;
        let s = &sc.0.scenario;
        let report = test_portfolio(
            sc.0.backend.as_ref(),
            &p.0.components,
            &s.test_instances,
            s.test_cutoff,
            repetitions,
            seed,
        )?;
        unsafe {
            *out = PcitSummary {
                instances: report.summary.instances,
                timeouts: report.summary.timeouts,
                crashed: report.summary.crashed,
                par10: report.summary.par10,
                par1: report.summary.par1,
                cpu_time: report.cpu_time,
            }
        };
        Ok(())
    })
}

/// Penalized average runtime of `n` runs: `solved[i] != 0` counts
/// `runtimes[i]`, anything else counts `penalty * cutoff`.
///
/// # Safety
/// `runtimes` and `solved` must be readable for `n` elements, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pcit_par_score(
    runtimes: *const f64,
    solved: *const u8,
    n: usize,
    cutoff: f64,
    penalty: u32,
    out: *mut f64,
) -> PcitStatus {
    guard(|| {
        out_ptr(out, "out")?;
        if n > 0 && (runtimes.is_null() || solved.is_null()) {
            return Err(null("runtimes/solved"));
        }
        let (rt, ok) = if n == 0 {
            (&[][..], &[][..])
        } else {
            unsafe { (std::slice::from_raw_parts(runtimes, n), std::slice::from_raw_parts(solved, n)) }
        };
        let outcomes: Vec<Outcome> = rt
            .iter()
            .zip(ok)
            .map(|(&r, &s)| if s != 0 { Outcome::solved(r, cutoff) } else { Outcome::timeout(cutoff) })
            .collect();
        let score = par_score(&outcomes, cutoff, penalty)?;
        unsafe { *out = score };
        Ok(())
    })
}

/// Total solver CPU time a method's construction is allowed, in the unit of
/// `t_c` and `t_v`.
///
/// # Safety
/// `method` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pcit_plan_total(
    method: *const c_char,
    k: usize,
    t_c: f64,
    t_v: f64,
    repetitions: usize,
    phases: usize,
    block: usize,
    out: *mut f64,
) -> PcitStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let method: Method = unsafe { text(method, "method") }?.parse()?;
        let (phases, block) = shape(method, k, phases, block);
        let plan = plan_budget(method, k, t_c, t_v, repetitions, phases, block)?;
        unsafe { *out = plan.total_cpu };
        Ok(())
    })
}
