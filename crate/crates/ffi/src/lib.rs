//! C ABI over the `fpld` crate.
//!
//! Every fallible function returns an [`FpldStatus`]. On failure the message
//! is kept per thread and can be read with [`fpld_last_error_message`].
//! Objects with state are opaque handles created by a `_new` function and
//! released by the matching `_free`. Panics never cross the boundary; they
//! surface as [`FpldStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fpld::alloc::{integerize, objective_f, AllocationPlan, IntegerPlan, Policy};
use fpld::bounds::{self, BoundEstimates, BoundParams};
use fpld::quant::{dequantize_with_dither, quantize_with_dither, DitherStream, QuantizerSpec};
use fpld::sim::SimConfig;
use fpld::wire::{pack, unpack, PayloadHeader, HEADER_LEN};
use fpld::FpldError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpldStatus {
    Ok = 0,
    InvalidParameter = 1,
    InvalidDither = 2,
    Protocol = 3,
    Encoding = 4,
    Infeasible = 5,
    InfiniteDivergence = 6,
    Heterogeneous = 7,
    InvalidInput = 8,
    Io = 9,
    NullPointer = 10,
    /// The output buffer is too small; the required size was written back.
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&FpldError> for FpldStatus {
    fn from(e: &FpldError) -> Self {
        match e {
            FpldError::InvalidParameter(_) => FpldStatus::InvalidParameter,
            FpldError::InvalidDither { .. } => FpldStatus::InvalidDither,
            FpldError::Protocol(_) => FpldStatus::Protocol,
            FpldError::Encoding(_) => FpldStatus::Encoding,
            FpldError::Infeasible(_) => FpldStatus::Infeasible,
            FpldError::InfiniteDivergence { .. } => FpldStatus::InfiniteDivergence,
            FpldError::Heterogeneous => FpldStatus::Heterogeneous,
            FpldError::InvalidInput(_) => FpldStatus::InvalidInput,
            FpldError::Io(_) => FpldStatus::Io,
        }
    }
}

struct Failure(FpldStatus, String);

impl From<FpldError> for Failure {
    fn from(e: FpldError) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

type FfiResult = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> FpldStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FpldStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            FpldStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(FpldStatus::NullPointer, format!("{name} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next `fpld_*` call on this thread.
#[no_mangle]
pub extern "C" fn fpld_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fpld_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- quantizer ----

/// Opaque quantizer: clip level and bits per coordinate.
pub struct FpldQuantizer(QuantizerSpec);

/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fpld_quantizer_new(clip: f64, bits_per_coord: u8, out: *mut *mut FpldQuantizer) -> FpldStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let spec = QuantizerSpec::new(clip, bits_per_coord)?;
        *out = Box::into_raw(Box::new(FpldQuantizer(spec)));
        Ok(())
    })
}

/// # Safety
/// `q` must be NULL or a handle from [`fpld_quantizer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fpld_quantizer_free(q: *mut FpldQuantizer) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Cell width `2 clip 2^-bits`, or NaN for a NULL handle.
///
/// # Safety
/// `q` must be NULL or a live quantizer handle.
#[no_mangle]
pub unsafe extern "C" fn fpld_quantizer_step(q: *const FpldQuantizer) -> f64 {
    q.as_ref().map_or(f64::NAN, |q| q.0.step())
}

/// Encode `len` values with the given dither (each in `[-step/2, step/2]`).
/// `reconstruction` and `clipped` may be NULL.
///
/// # Safety
/// Array arguments must point to `len` elements; `q` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fpld_quantizer_encode(
    q: *const FpldQuantizer,
    values: *const f64,
    dither: *const f64,
    len: usize,
    indices: *mut u32,
    reconstruction: *mut f64,
    clipped: *mut usize,
) -> FpldStatus {
    guard(|| {
        let q = handle(q, "quantizer")?;
        let values = slice(values, len, "values")?;
        let dither = slice(dither, len, "dither")?;
        let indices = slice_mut(indices, len, "indices")?;
        let qv = quantize_with_dither(&q.0, values, dither)?;
        indices.copy_from_slice(&qv.indices);
        if !reconstruction.is_null() {
            slice_mut(reconstruction, len, "reconstruction")?.copy_from_slice(&qv.reconstruction);
        }
        if let Some(c) = clipped.as_mut() {
            *c = qv.clipped;
        }
        Ok(())
    })
}

/// # Safety
/// Array arguments must point to `len` elements; `q` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fpld_quantizer_decode(
    q: *const FpldQuantizer,
    indices: *const u32,
    dither: *const f64,
    len: usize,
    reconstruction: *mut f64,
) -> FpldStatus {
    guard(|| {
        let q = handle(q, "quantizer")?;
        let r = dequantize_with_dither(&q.0, slice(indices, len, "indices")?, slice(dither, len, "dither")?)?;
        slice_mut(reconstruction, len, "reconstruction")?.copy_from_slice(&r);
        Ok(())
    })
}

/// Shared dither for one (seed, node, round, probe): `len` uniforms on
/// `[-step/2, step/2)`. Encoder and decoder calling this with the same
/// arguments get identical values.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fpld_dither_fill(
    seed: u64,
    node: u16,
    round: u16,
    probe: u32,
    step: f64,
    out: *mut f64,
    len: usize,
) -> FpldStatus {
    guard(|| {
        if !(step.is_finite() && step > 0.0) {
            return Err(Failure(FpldStatus::InvalidParameter, format!("step must be positive, got {step}")));
        }
        DitherStream::new(seed, node, round).fill(probe, step, slice_mut(out, len, "out")?);
        Ok(())
    })
}

// ---- wire format ----

/// Fixed header of one uplink payload. On the wire it is 29 little-endian bytes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpldPayloadHeader {
    pub node_id: u16,
    pub round: u16,
    pub probe_count: u32,
    pub vocab: u32,
    pub bits_per_coord: u8,
    pub clip: f64,
    pub dither_seed: u64,
}

impl From<FpldPayloadHeader> for PayloadHeader {
    fn from(h: FpldPayloadHeader) -> Self {
        PayloadHeader {
            node_id: h.node_id,
            round: h.round,
            probe_count: h.probe_count,
            vocab: h.vocab,
            bits_per_coord: h.bits_per_coord,
            clip: h.clip,
            dither_seed: h.dither_seed,
        }
    }
}

impl From<PayloadHeader> for FpldPayloadHeader {
    fn from(h: PayloadHeader) -> Self {
        FpldPayloadHeader {
            node_id: h.node_id,
            round: h.round,
            probe_count: h.probe_count,
            vocab: h.vocab,
            bits_per_coord: h.bits_per_coord,
            clip: h.clip,
            dither_seed: h.dither_seed,
        }
    }
}

/// Bytes in the fixed header.
#[no_mangle]
pub extern "C" fn fpld_payload_header_len() -> usize {
    HEADER_LEN
}

/// Serialize a payload. On `BufferTooSmall` the needed size is in `written`.
///
/// # Safety
/// `header` and `written` must be valid; `indices` must hold `count`
/// elements and `buf` `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn fpld_payload_pack(
    header: *const FpldPayloadHeader,
    indices: *const u32,
    count: usize,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> FpldStatus {
    guard(|| {
        let h: PayloadHeader = (*handle(header, "header")?).into();
        let written = out(written, "written")?;
        let bytes = pack(&h, slice(indices, count, "indices")?)?;
        *written = bytes.len();
        if bytes.len() > cap {
            return Err(Failure(
                FpldStatus::BufferTooSmall,
                format!("payload needs {} bytes, buffer has {cap}", bytes.len()),
            ));
        }
        slice_mut(buf, bytes.len(), "buf")?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// Parse a payload. On `BufferTooSmall` the index count is in `count`.
///
/// # Safety
/// `bytes` must hold `len` bytes, `indices` `cap` elements; `header` and
/// `count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_payload_unpack(
    bytes: *const u8,
    len: usize,
    header: *mut FpldPayloadHeader,
    indices: *mut u32,
    cap: usize,
    count: *mut usize,
) -> FpldStatus {
    guard(|| {
        let header = out(header, "header")?;
        let count = out(count, "count")?;
        let (h, idx) = unpack(slice(bytes, len, "bytes")?)?;
        *header = h.into();
        *count = idx.len();
        if idx.len() > cap {
            return Err(Failure(
                FpldStatus::BufferTooSmall,
                format!("payload has {} indices, buffer has {cap}", idx.len()),
            ));
        }
        slice_mut(indices, idx.len(), "indices")?.copy_from_slice(&idx);
        Ok(())
    })
}

// ---- softmax and divergences ----

/// # Safety
/// `logits` and `out` must point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn fpld_softmax(logits: *const f64, len: usize, out: *mut f64) -> FpldStatus {
    guard(|| {
        let x = slice(logits, len, "logits")?;
        if len == 0 || x.iter().any(|v| !v.is_finite()) {
            return Err(FpldError::InvalidInput("softmax needs a non-empty finite vector".into()).into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(&fpld::softmax::softmax(x));
        Ok(())
    })
}

/// `KL(p || q)` for two probability vectors.
///
/// # Safety
/// `p` and `q` must point to `len` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_kl(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> FpldStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        *out = fpld::softmax::kl(slice(p, len, "p")?, slice(q, len, "q")?)?;
        Ok(())
    })
}

/// `KL(softmax(logits) || softmax(logits + eta))` without forming the
/// second softmax.
///
/// # Safety
/// `logits` and `eta` must point to `len` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_cumulant_kl(
    logits: *const f64,
    eta: *const f64,
    len: usize,
    out: *mut f64,
) -> FpldStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        *out = fpld::softmax::cumulant_kl_exact(slice(logits, len, "logits")?, slice(eta, len, "eta")?)?;
        Ok(())
    })
}

// ---- bounds ----

/// Opaque bound parameters. Starts from the library defaults for `K`, `V`.
pub struct FpldBoundParams(BoundParams);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpldBoundEstimates {
    pub statistical_term: f64,
    pub probe_term: f64,
    pub bandwidth_term: f64,
    pub slack_term: f64,
    pub total: f64,
    pub small_error: bool,
    pub small_error_calibrated: bool,
}

impl From<BoundEstimates> for FpldBoundEstimates {
    fn from(e: BoundEstimates) -> Self {
        Self {
            statistical_term: e.statistical_term,
            probe_term: e.probe_term,
            bandwidth_term: e.bandwidth_term,
            slack_term: e.slack_term,
            total: e.total,
            small_error: e.regime_flags.small_error,
            small_error_calibrated: e.regime_flags.small_error_calibrated,
        }
    }
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_bound_params_new(k: usize, v: usize, out: *mut *mut FpldBoundParams) -> FpldStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        *out = Box::into_raw(Box::new(FpldBoundParams(BoundParams::new(k, v))));
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fpld_bound_params_free(p: *mut FpldBoundParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn whole(name: &str, x: f64) -> Result<usize, Failure> {
    if x >= 0.0 && x.fract() == 0.0 && x < usize::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(FpldError::InvalidParameter(format!("{name} must be a non-negative integer, got {x}")).into())
    }
}

/// Set one scalar by its config name: `d`, `K`, `n`, `m`, `V`, `delta`,
/// `rho`, `L`, `c1`, `c2`, `eps_opt`, `eps_fit`, `cp`, `T`, `B`, `c0`,
/// `c_remainder`. Setting `B` clears a per-node list.
///
/// # Safety
/// `p` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fpld_bound_params_set(p: *mut FpldBoundParams, name: *const c_char, value: f64) -> FpldStatus {
    guard(|| {
        let p = &mut out(p, "params")?.0;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name).to_string_lossy();
        match name.as_ref() {
            "d" => p.d = value,
            "K" => p.k = whole("K", value)?,
            "n" => p.n = value,
            "m" => p.m = whole("m", value)?,
            "V" => p.v = whole("V", value)?,
            "delta" => p.delta = value,
            "rho" => p.rho = value,
            "L" => p.l = value,
            "c1" => p.c1 = value,
            "c2" => p.c2 = value,
            "eps_opt" => p.eps_opt = value,
            "eps_fit" => p.eps_fit = value,
            "cp" => p.cp = value,
            "T" => p.t = whole("T", value)?,
            "B" => {
                p.b = Some(value);
                p.b_list = None;
            }
            "c0" => p.c0 = value,
            "c_remainder" => p.c_remainder = value,
            other => return Err(FpldError::InvalidParameter(format!("unknown bound parameter {other:?}")).into()),
        }
        Ok(())
    })
}

/// Per-node budgets (bits per probe); `len == 0` clears the list.
///
/// # Safety
/// `p` must be a live handle; `b` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fpld_bound_params_set_b_list(
    p: *mut FpldBoundParams,
    b: *const f64,
    len: usize,
) -> FpldStatus {
    guard(|| {
        let p = &mut out(p, "params")?.0;
        p.b_list = (len > 0).then(|| slice(b, len, "b").map(<[f64]>::to_vec)).transpose()?;
        Ok(())
    })
}

/// Per-node clip levels; `len == 0` clears the list.
///
/// # Safety
/// `p` must be a live handle; `l` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fpld_bound_params_set_l_list(
    p: *mut FpldBoundParams,
    l: *const f64,
    len: usize,
) -> FpldStatus {
    guard(|| {
        let p = &mut out(p, "params")?.0;
        p.l_list = (len > 0).then(|| slice(l, len, "l").map(<[f64]>::to_vec)).transpose()?;
        Ok(())
    })
}

/// Upper bound; the heterogeneous evaluator is used when either per-node
/// list is set.
///
/// # Safety
/// `p` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_bounds_upper(p: *const FpldBoundParams, out: *mut FpldBoundEstimates) -> FpldStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        let out = self::out(out, "out")?;
        let est = if p.b_list.is_some() || p.l_list.is_some() {
            bounds::upper_bound_heterogeneous(p)?
        } else {
            bounds::upper_bound_homogeneous(p)?
        };
        *out = est.into();
        Ok(())
    })
}

/// # Safety
/// `p` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_bounds_lower(p: *const FpldBoundParams, out: *mut f64) -> FpldStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        *self::out(out, "out")? = bounds::lower_bound_fpld(p)?.value;
        Ok(())
    })
}

/// # Safety
/// `p` must be a live handle; `value` and `remainder` valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_bounds_multiround(
    p: *const FpldBoundParams,
    value: *mut f64,
    remainder: *mut f64,
) -> FpldStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        let (value, remainder) = (out(value, "value")?, out(remainder, "remainder")?);
        let m = bounds::multiround_bound(p)?;
        (*value, *remainder) = (m.value, m.remainder);
        Ok(())
    })
}

// ---- allocation ----

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpldPolicy {
    Optimal = 0,
    Uniform = 1,
    Inverse = 2,
}

impl From<FpldPolicy> for Policy {
    fn from(p: FpldPolicy) -> Self {
        match p {
            FpldPolicy::Optimal => Policy::Optimal,
            FpldPolicy::Uniform => Policy::Uniform,
            FpldPolicy::Inverse => Policy::Inverse,
        }
    }
}

/// Opaque allocation: the real-valued plan and its whole-bit rounding.
pub struct FpldAllocation {
    plan: AllocationPlan,
    int: IntegerPlan,
    v: usize,
}

/// Split `b_tot` bits per probe across `k` nodes with weights `w`.
/// A negative or NaN `b_max` means no cap.
///
/// # Safety
/// `w` must point to `k` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_allocate(
    w: *const f64,
    k: usize,
    b_tot: f64,
    v: usize,
    b_max: f64,
    policy: FpldPolicy,
    out: *mut *mut FpldAllocation,
) -> FpldStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        let w = slice(w, k, "w")?;
        let cap = (b_max >= 0.0).then_some(b_max);
        let plan = Policy::from(policy).plan(w, b_tot, v, cap)?;
        let int = integerize(&plan, v)?;
        *out = Box::into_raw(Box::new(FpldAllocation { plan, int, v }));
        Ok(())
    })
}

/// # Safety
/// `a` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fpld_allocation_free(a: *mut FpldAllocation) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Node count, or 0 for a NULL handle.
///
/// # Safety
/// `a` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fpld_allocation_len(a: *const FpldAllocation) -> usize {
    a.as_ref().map_or(0, |a| a.plan.k())
}

/// Real-valued budgets, bits per probe.
///
/// # Safety
/// `a` must be a live handle and `b` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fpld_allocation_real(a: *const FpldAllocation, b: *mut f64, len: usize) -> FpldStatus {
    guard(|| {
        let a = handle(a, "allocation")?;
        copy_exact(&a.plan.b, b, len)
    })
}

/// Whole bits per coordinate and the matching budgets `bits * V`.
/// Either output may be NULL.
///
/// # Safety
/// `a` must be a live handle; non-NULL outputs must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn fpld_allocation_integer(
    a: *const FpldAllocation,
    bits_per_coord: *mut u8,
    b: *mut f64,
    len: usize,
) -> FpldStatus {
    guard(|| {
        let a = handle(a, "allocation")?;
        if !bits_per_coord.is_null() {
            copy_exact(&a.int.bits_per_coord, bits_per_coord, len)?;
        }
        if !b.is_null() {
            copy_exact(&a.int.b, b, len)?;
        }
        Ok(())
    })
}

/// Objective `F` of the real and of the integer plan.
///
/// # Safety
/// `a` must be a live handle; outputs valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_allocation_objective(
    a: *const FpldAllocation,
    real: *mut f64,
    integer: *mut f64,
) -> FpldStatus {
    guard(|| {
        let a = handle(a, "allocation")?;
        let (real, integer) = (out(real, "real")?, out(integer, "integer")?);
        *real = a.plan.objective(a.v);
        *integer = objective_f(&a.int.b, &a.plan.weights, a.v)?;
        Ok(())
    })
}

unsafe fn copy_exact<T: Copy>(src: &[T], dst: *mut T, len: usize) -> FfiResult {
    if len != src.len() {
        return Err(Failure(FpldStatus::BufferTooSmall, format!("buffer holds {len} entries, plan has {}", src.len())));
    }
    slice_mut(dst, len, "output")?.copy_from_slice(src);
    Ok(())
}

// ---- simulation ----

/// Opaque simulator configuration.
pub struct FpldSimConfig(SimConfig);

/// Parse simulator settings from TOML keys (the body of a `[sim]` table);
/// keys not given keep their defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_sim_config_from_toml(toml: *const c_char, out: *mut *mut FpldSimConfig) -> FpldStatus {
    guard(|| {
        let out = self::out(out, "out")?;
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| Failure(FpldStatus::InvalidInput, format!("config is not UTF-8: {e}")))?;
        let cfg = fpld::config::sim_from_toml(text)?;
        *out = Box::into_raw(Box::new(FpldSimConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `c` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fpld_sim_config_free(c: *mut FpldSimConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Run one seed; writes the mean KL over probes and, if `clipped` is not
/// NULL, the number of clamped coordinates.
///
/// # Safety
/// `c` must be a live handle; `kl` valid.
#[no_mangle]
pub unsafe extern "C" fn fpld_sim_run(
    c: *const FpldSimConfig,
    seed: u64,
    kl: *mut f64,
    clipped: *mut usize,
) -> FpldStatus {
    guard(|| {
        let c = handle(c, "config")?;
        let kl = out(kl, "kl")?;
        let o = fpld::sim::run(&c.0, seed)?;
        *kl = o.kl;
        if let Some(n) = clipped.as_mut() {
            *n = o.clipped;
        }
        Ok(())
    })
}
