//! C interface to the jellium core.
//!
//! Objects are opaque handles created by `jl_*_new` and released by the
//! matching `jl_*_free`. Every fallible call returns a [`JlStatus`]; on
//! failure the message is kept per thread and can be read with
//! [`jl_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use jellium::energy::{EnergyModel, Mode};
use jellium::kfield::{KField, Side};
use jellium::model::{canonicalize, Domain, ModelParams, Point};
use jellium::potential::{v2_strip, v_pair};
use jellium::sampler::{Chain, SamplerSpec};
use jellium::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    OutOfDomain = 3,
    SingularKernel = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct JlParams {
    pub beta: f64,
    pub q: f64,
    pub rho: f64,
    pub w_width: f64,
    pub theta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct JlSamplerParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub seed: u64,
    /// Nonzero keeps every `y` fixed.
    pub pure1d: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct JlEnergy {
    pub u1: f64,
    pub v2_total: f64,
    pub total: f64,
}

pub struct JlDomain {
    domain: Domain,
    params: ModelParams,
}

pub struct JlKField(KField);

pub struct JlChain(Chain);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> JlStatus {
    match e {
        Error::InvalidParameter { .. } | Error::CoincidentX { .. } | Error::Validation(_) => {
            JlStatus::InvalidParameter
        }
        Error::OutOfDomain { .. } => JlStatus::OutOfDomain,
        Error::SingularKernel { .. } => JlStatus::SingularKernel,
        _ => JlStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), JlStatus>) -> JlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JlStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside jellium".into());
            JlStatus::Internal
        }
    }
}

fn lift<T>(r: jellium::Result<T>) -> Result<T, JlStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null() -> JlStatus {
    set_error("null pointer argument".into());
    JlStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, JlStatus> {
    p.as_ref().ok_or_else(null)
}

unsafe fn deref_mut<'a, T>(p: *mut T) -> Result<&'a mut T, JlStatus> {
    p.as_mut().ok_or_else(null)
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Result<&'a [T], JlStatus> {
    if n == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null())
    } else {
        Ok(std::slice::from_raw_parts(p, n))
    }
}

fn to_params(p: &JlParams) -> Result<ModelParams, JlStatus> {
    lift(ModelParams::new(p.beta, p.q, p.rho, p.w_width, p.theta))
}

/// Copies the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len`). Returns the full message length without the NUL, or
/// 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn jl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

#[no_mangle]
pub extern "C" fn jl_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// # Safety
/// `params` must be valid; `out` receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn jl_domain_new(
    params: *const JlParams,
    n1: u32,
    n2: u32,
    out: *mut *mut JlDomain,
) -> JlStatus {
    guard(|| {
        let out = deref_mut(out)?;
        *out = ptr::null_mut();
        let params = to_params(deref(params)?)?;
        let domain = lift(Domain::new(n1, n2, &params))?;
        *out = Box::into_raw(Box::new(JlDomain { domain, params }));
        Ok(())
    })
}

/// # Safety
/// `d` must come from [`jl_domain_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jl_domain_free(d: *mut JlDomain) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// # Safety
/// Output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_domain_bounds(
    d: *const JlDomain,
    l1: *mut f64,
    l2: *mut f64,
    lambda: *mut f64,
) -> JlStatus {
    guard(|| {
        let d = deref(d)?;
        *deref_mut(l1)? = d.domain.l1;
        *deref_mut(l2)? = d.domain.l2;
        *deref_mut(lambda)? = d.domain.lambda;
        Ok(())
    })
}

/// # Safety
/// `d` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_domain_particle_count(d: *const JlDomain) -> usize {
    d.as_ref().map_or(0, |d| d.domain.n_particles())
}

/// Full pair potential in units of `q^2`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_v_pair(
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    w_width: f64,
    out: *mut f64,
) -> JlStatus {
    guard(|| {
        let out = deref_mut(out)?;
        *out = lift(v_pair(Point::new(x1, y1), Point::new(x2, y2), w_width))?;
        Ok(())
    })
}

/// Short-range part of the pair potential in units of `q^2`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_v2(y1: f64, y2: f64, dx: f64, w_width: f64, out: *mut f64) -> JlStatus {
    guard(|| {
        let out = deref_mut(out)?;
        *out = lift(v2_strip(y1, y2, dx, w_width))?;
        Ok(())
    })
}

/// Energy of `n` particles at `(xs[i], ys[i])`, in any order.
///
/// # Safety
/// `xs` and `ys` must hold `n` values each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_energy(
    d: *const JlDomain,
    xs: *const f64,
    ys: *const f64,
    n: usize,
    pure1d: i32,
    out: *mut JlEnergy,
) -> JlStatus {
    guard(|| {
        let d = deref(d)?;
        let out = deref_mut(out)?;
        let (xs, ys) = (slice(xs, n)?, slice(ys, n)?);
        let pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        let cfg = lift(canonicalize(&pts, &d.domain))?;
        let mode = if pure1d != 0 {
            Mode::Pure1d
        } else {
            Mode::Quasi1d
        };
        let e = lift(EnergyModel::new(d.domain, d.params, mode).breakdown(&cfg))?;
        *out = JlEnergy {
            u1: e.u1,
            v2_total: e.v2_total,
            total: e.total,
        };
        Ok(())
    })
}

/// Builds the charge field of particles at `xs` (any order).
///
/// # Safety
/// `xs` must hold `n` values; `out` receives a caller-owned handle.
#[no_mangle]
pub unsafe extern "C" fn jl_kfield_new(
    d: *const JlDomain,
    xs: *const f64,
    n: usize,
    out: *mut *mut JlKField,
) -> JlStatus {
    guard(|| {
        let out = deref_mut(out)?;
        *out = ptr::null_mut();
        let d = deref(d)?;
        let pts: Vec<(f64, f64)> = slice(xs, n)?.iter().map(|&x| (x, 0.0)).collect();
        let cfg = lift(canonicalize(&pts, &d.domain))?;
        *out = Box::into_raw(Box::new(JlKField(KField::new(&d.domain, &cfg))));
        Ok(())
    })
}

/// # Safety
/// `k` must come from [`jl_kfield_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jl_kfield_free(k: *mut JlKField) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// `K(u)`; `left` nonzero takes the left limit at a jump.
///
/// # Safety
/// `k` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_kfield_eval(
    k: *const JlKField,
    u: f64,
    left: i32,
    out: *mut f64,
) -> JlStatus {
    guard(|| {
        let k = deref(k)?;
        let out = deref_mut(out)?;
        if !(k.0.l1()..=k.0.l2()).contains(&u) {
            lift(Err(Error::OutOfDomain {
                x: u,
                l1: k.0.l1(),
                l2: k.0.l2(),
            }))?;
        }
        *out =
            k.0.eval(u, if left != 0 { Side::Left } else { Side::Right });
        Ok(())
    })
}

/// Integral of `K^power` over `[a, b]`, `power` in 1..=2.
///
/// # Safety
/// `k` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_kfield_integral(
    k: *const JlKField,
    a: f64,
    b: f64,
    power: u8,
    out: *mut f64,
) -> JlStatus {
    guard(|| {
        let k = deref(k)?;
        let out = deref_mut(out)?;
        if !(1..=2).contains(&power) || a.partial_cmp(&b).is_none_or(|o| o.is_gt()) {
            set_error(format!(
                "need power in 1..=2 and a <= b, got {power}, [{a}, {b}]"
            ));
            return Err(JlStatus::InvalidParameter);
        }
        *out = k.0.integral(a, b, power);
        Ok(())
    })
}

/// Chains built here run without step-size tuning.
///
/// # Safety
/// `d` and `sampler` must be valid; `out` receives a caller-owned handle.
#[no_mangle]
pub unsafe extern "C" fn jl_chain_new(
    d: *const JlDomain,
    sampler: *const JlSamplerParams,
    out: *mut *mut JlChain,
) -> JlStatus {
    guard(|| {
        let out = deref_mut(out)?;
        *out = ptr::null_mut();
        let d = deref(d)?;
        let s = deref(sampler)?;
        let spec = SamplerSpec {
            sigma_x: s.sigma_x,
            sigma_y: s.sigma_y,
            seed: s.seed,
            mode: if s.pure1d != 0 {
                Mode::Pure1d
            } else {
                Mode::Quasi1d
            },
            auto_tune: false,
            ..SamplerSpec::default()
        };
        let chain = lift(Chain::new(d.domain, d.params, spec))?;
        *out = Box::into_raw(Box::new(JlChain(chain)));
        Ok(())
    })
}

/// # Safety
/// `c` must come from [`jl_chain_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jl_chain_free(c: *mut JlChain) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Runs `n` Metropolis steps; `accepted` (may be null) receives how many
/// were accepted.
///
/// # Safety
/// `c` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_chain_step(c: *mut JlChain, n: u64, accepted: *mut u64) -> JlStatus {
    guard(|| {
        let c = deref_mut(c)?;
        let mut acc = 0;
        for _ in 0..n {
            acc += c.0.step().accepted() as u64;
        }
        if let Some(a) = accepted.as_mut() {
            *a = acc;
        }
        Ok(())
    })
}

/// Copies the current positions, sorted by `x`, into `xs`/`ys` of capacity
/// `cap`. Returns `JL_STATUS_BUFFER_TOO_SMALL` if `cap` is short.
///
/// # Safety
/// `xs` and `ys` must have room for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn jl_chain_positions(
    c: *const JlChain,
    xs: *mut f64,
    ys: *mut f64,
    cap: usize,
) -> JlStatus {
    guard(|| {
        let cfg = deref(c)?.0.config();
        if cap < cfg.len() {
            set_error(format!("need {} slots, got {cap}", cfg.len()));
            return Err(JlStatus::BufferTooSmall);
        }
        if xs.is_null() || ys.is_null() {
            return Err(null());
        }
        ptr::copy_nonoverlapping(cfg.xs().as_ptr(), xs, cfg.len());
        ptr::copy_nonoverlapping(cfg.ys().as_ptr(), ys, cfg.len());
        Ok(())
    })
}

/// Energy of the chain's current configuration, freshly recomputed.
///
/// # Safety
/// `c` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jl_chain_energy(c: *const JlChain, out: *mut JlEnergy) -> JlStatus {
    guard(|| {
        let c = deref(c)?;
        let out = deref_mut(out)?;
        let e = lift(c.0.model.breakdown(c.0.config()))?;
        *out = JlEnergy {
            u1: e.u1,
            v2_total: e.v2_total,
            total: e.total,
        };
        Ok(())
    })
}
