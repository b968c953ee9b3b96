//! C ABI over the hopgate engine.
//!
//! Models and gate configurations are opaque handles created by `hg_*_load` /
//! `hg_gate_*` and released with the matching `*_free`. Every fallible call
//! returns an [`HgStatus`]; on failure the message is available through
//! [`hg_last_error_message`] on the same thread. Panics never cross the
//! boundary and are reported as [`HgStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use hopgate::babi::{Sample, StoryGrid};
use hopgate::cost::{cc_hop, cc_total, icn_overhead, CostParams};
use hopgate::eval::analytic_reduction;
use hopgate::gate::{Difficulty, GateConfig};
use hopgate::model::{load_checkpoint, AppMode, HopPolicy, InferenceOptions, Model, Route, Variant};
use hopgate::tensor::{Category, FlopLedger};
use hopgate::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad string encoding or an argument outside its domain.
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Dimension = 5,
    OutOfRange = 6,
    NonFinite = 7,
    Param = 8,
    Config = 9,
    Unsupported = 10,
    Checkpoint = 11,
    Panic = 12,
}

impl From<&Error> for HgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => HgStatus::Dimension,
            Error::NonFinite(_) | Error::Diverged { .. } => HgStatus::NonFinite,
            Error::Parse { .. } | Error::Json(_) => HgStatus::Parse,
            Error::UnknownToken(_) | Error::IndexOutOfRange { .. } => HgStatus::OutOfRange,
            Error::Param(_) => HgStatus::Param,
            Error::Config(_) => HgStatus::Config,
            Error::Unsupported(_) => HgStatus::Unsupported,
            Error::Checkpoint(_) => HgStatus::Checkpoint,
            Error::Io { .. } => HgStatus::Io,
        }
    }
}

struct Failure(HgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(HgStatus::from(&e), e.to_string())
    }
}

fn fail<T>(status: HgStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            HgStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    match p.as_ref() {
        Some(r) => Ok(r),
        None => fail(HgStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    match p.as_mut() {
        Some(r) => Ok(r),
        None => fail(HgStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn utf8<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(HgStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(HgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const u32, len: usize, what: &str) -> Result<&'a [u32], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(HgStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one, or 0 when
/// the last call succeeded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// A loaded checkpoint.
pub struct HgModel(Model);

/// A gate configuration (mode and thresholds).
pub struct HgGate(GateConfig);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgVariant {
    Conventional = 0,
    KeyValue = 1,
}

impl From<Variant> for HgVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Conventional => HgVariant::Conventional,
            Variant::KeyValue => HgVariant::KeyValue,
        }
    }
}

impl From<HgVariant> for Variant {
    fn from(v: HgVariant) -> Self {
        match v {
            HgVariant::Conventional => Variant::Conventional,
            HgVariant::KeyValue => Variant::KeyValue,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgMode {
    PreEmbedded = 0,
    Interactive = 1,
}

impl From<HgMode> for AppMode {
    fn from(m: HgMode) -> Self {
        match m {
            HgMode::PreEmbedded => AppMode::PreEmbedded,
            HgMode::Interactive => AppMode::Interactive,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgPolicy {
    AllHops = 0,
    OneHop = 1,
    Gated = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgForceRoute {
    None = 0,
    Easy = 1,
    Hard = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgRoute {
    Easy = 0,
    Hard = 1,
    /// The policy fixed the path; no gate was consulted.
    Forced = 2,
}

/// Indices into [`HgPrediction::flops_by_category`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HgCategory {
    EmbedStory = 0,
    EmbedQuery = 1,
    InnerProduct = 2,
    Softmax = 3,
    WeightedSum = 4,
    KeySum = 5,
    KeyGen = 6,
    Fc = 7,
    Icn = 8,
    Other = 9,
}

pub const HG_CATEGORY_COUNT: usize = 10;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HgOptions {
    pub policy: HgPolicy,
    pub mode: HgMode,
    /// Zero-skip threshold; negative or NaN disables skipping.
    pub zero_skip: f64,
    pub use_pruned: bool,
    pub avoid_reembedding: bool,
    pub force_route: HgForceRoute,
}

impl From<&HgOptions> for InferenceOptions {
    fn from(o: &HgOptions) -> Self {
        InferenceOptions {
            mode: o.mode.into(),
            zero_skip: (o.zero_skip >= 0.0).then_some(o.zero_skip),
            use_pruned: o.use_pruned,
            avoid_reembedding: o.avoid_reembedding,
            force_route: match o.force_route {
                HgForceRoute::None => None,
                HgForceRoute::Easy => Some(Difficulty::Easy),
                HgForceRoute::Hard => Some(Difficulty::Hard),
            },
            ..InferenceOptions::new(match o.policy {
                HgPolicy::AllHops => HopPolicy::AllHops,
                HgPolicy::OneHop => HopPolicy::OneHop,
                HgPolicy::Gated => HopPolicy::Gated,
            })
        }
    }
}

/// Pre-embedded mode, no skipping, full heads.
#[no_mangle]
pub extern "C" fn hg_options_default(policy: HgPolicy) -> HgOptions {
    HgOptions {
        policy,
        mode: HgMode::PreEmbedded,
        zero_skip: -1.0,
        use_pruned: false,
        avoid_reembedding: false,
        force_route: HgForceRoute::None,
    }
}

/// One query against a story of `n_s` rows by `n_w` token ids (row-major).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HgQuery {
    pub cells: *const u32,
    pub n_s: usize,
    pub n_w: usize,
    /// Key-value models: one value token per row. Null otherwise.
    pub values: *const u32,
    pub query: *const u32,
    pub query_len: usize,
    pub task_id: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HgPrediction {
    pub answer: u32,
    pub route: HgRoute,
    pub hops_executed: u32,
    pub flops_total: u64,
    pub flops_by_category: [u64; HG_CATEGORY_COUNT],
    /// ICN class probabilities; NaN when the ICN did not run.
    pub p_easy: f64,
    pub p_hard: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HgModelInfo {
    pub vocab_size: usize,
    pub d: usize,
    pub n_s: usize,
    pub n_w: usize,
    pub hops: usize,
    pub variant: HgVariant,
    pub has_early_head: bool,
    pub has_icn: bool,
    pub has_pruned_heads: bool,
    pub has_vocabulary: bool,
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_model_load(path: *const c_char, out: *mut *mut HgModel) -> HgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = std::ptr::null_mut();
        let model = load_checkpoint(Path::new(utf8(path, "path")?))?;
        *out = Box::into_raw(Box::new(HgModel(model)));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`hg_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hg_model_free(model: *mut HgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_model_info(model: *const HgModel, out: *mut HgModelInfo) -> HgStatus {
    guard(|| {
        let m = &non_null(model, "model")?.0;
        let h = &m.hyper;
        *out_ptr(out, "out")? = HgModelInfo {
            vocab_size: h.vocab_size,
            d: h.d,
            n_s: h.n_s,
            n_w: h.n_w,
            hops: h.hops,
            variant: h.variant.into(),
            has_early_head: m.w_e.is_some(),
            has_icn: m.icn.is_some(),
            has_pruned_heads: m.pruned.is_some(),
            has_vocabulary: m.vocab.is_some(),
        };
        Ok(())
    })
}

/// Looks up a word in the checkpoint vocabulary.
///
/// # Safety
/// `model` must be a live handle, `word` NUL-terminated, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_model_token_id(model: *const HgModel, word: *const c_char, out: *mut u32) -> HgStatus {
    guard(|| {
        let m = &non_null(model, "model")?.0;
        let word = utf8(word, "word")?;
        let out = out_ptr(out, "out")?;
        let vocab = m
            .vocab
            .as_ref()
            .ok_or_else(|| Failure(HgStatus::Config, "checkpoint has no vocabulary".into()))?;
        *out = vocab.lookup(word)? as u32;
        Ok(())
    })
}

fn to_ids(xs: &[u32]) -> Vec<usize> {
    xs.iter().map(|&x| x as usize).collect()
}

/// Runs one query. `gate` is required for the gated policy and ignored otherwise.
///
/// # Safety
/// `model` must be a live handle; `gate` null or live; the arrays in `query`
/// must hold `n_s * n_w`, `n_s` (values, if non-null) and `query_len` ids.
#[no_mangle]
pub unsafe extern "C" fn hg_model_forward(
    model: *const HgModel,
    query: *const HgQuery,
    options: *const HgOptions,
    gate: *const HgGate,
    out: *mut HgPrediction,
) -> HgStatus {
    guard(|| {
        let m = &non_null(model, "model")?.0;
        let q = non_null(query, "query")?;
        let opts = InferenceOptions::from(non_null(options, "options")?);
        let gate = gate.as_ref().map(|g| &g.0);
        let out = out_ptr(out, "out")?;
        let n_cells = q
            .n_s
            .checked_mul(q.n_w)
            .ok_or_else(|| Failure(HgStatus::InvalidArgument, "story size overflows".into()))?;
        let story = StoryGrid {
            n_s: q.n_s,
            n_w: q.n_w,
            cells: to_ids(slice(q.cells, n_cells, "cells")?),
            values: if q.values.is_null() {
                None
            } else {
                Some(to_ids(slice(q.values, q.n_s, "values")?))
            },
        };
        let sample = Sample {
            story: Arc::new(story),
            query: to_ids(slice(q.query, q.query_len, "query")?),
            answer: 0,
            task_id: q.task_id,
        };
        let p = m.forward(&sample, &opts, gate, &mut FlopLedger::new())?;
        let mut by_category = [0; HG_CATEGORY_COUNT];
        for (slot, c) in by_category.iter_mut().zip(Category::ALL) {
            *slot = p.ledger.get(c);
        }
        let (p_easy, p_hard) = p.icn_probs.unwrap_or((f64::NAN, f64::NAN));
        *out = HgPrediction {
            answer: p.answer as u32,
            route: match p.route {
                Route::Easy => HgRoute::Easy,
                Route::Hard => HgRoute::Hard,
                Route::Forced => HgRoute::Forced,
            },
            hops_executed: p.hops_executed as u32,
            flops_total: p.ledger.total(),
            flops_by_category: by_category,
            p_easy,
            p_hard,
        };
        Ok(())
    })
}

unsafe fn new_gate(cfg: GateConfig, out: *mut *mut HgGate) -> Result<(), Failure> {
    let out = out_ptr(out, "out")?;
    *out = std::ptr::null_mut();
    cfg.validate()?;
    *out = Box::into_raw(Box::new(HgGate(cfg)));
    Ok(())
}

/// Plain argmax gate.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_gate_nc(out: *mut *mut HgGate) -> HgStatus {
    guard(|| new_gate(GateConfig::nc(), out))
}

/// One confidence threshold for every task.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_gate_global(z: f64, out: *mut *mut HgGate) -> HgStatus {
    guard(|| new_gate(GateConfig::global(z), out))
}

/// Reads a gate configuration JSON file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_gate_load(path: *const c_char, out: *mut *mut HgGate) -> HgStatus {
    guard(|| {
        let cfg: GateConfig = hopgate::report::read_json(Path::new(utf8(path, "path")?))?;
        new_gate(cfg, out)
    })
}

/// Confidence threshold the gate applies to `task_id`.
///
/// # Safety
/// `gate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hg_gate_threshold(gate: *const HgGate, task_id: u32, out: *mut f64) -> HgStatus {
    guard(|| {
        let g = &non_null(gate, "gate")?.0;
        *out_ptr(out, "out")? = g.threshold(task_id);
        Ok(())
    })
}

/// # Safety
/// `gate` must come from an `hg_gate_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hg_gate_free(gate: *mut HgGate) {
    if !gate.is_null() {
        drop(Box::from_raw(gate));
    }
}

/// Inputs to the closed-form FLOP model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HgCostParams {
    pub d: u64,
    pub v: u64,
    pub n_s: u64,
    pub n_w: u64,
    pub m: u64,
    pub l1: u64,
    pub variant: HgVariant,
    pub mode: HgMode,
    pub zeta_e: f64,
    pub p_r: f64,
    pub psi_e: f64,
    pub psi_h: f64,
}

impl From<&HgCostParams> for CostParams {
    fn from(p: &HgCostParams) -> Self {
        CostParams {
            d: p.d,
            v: p.v,
            n_s: p.n_s,
            n_w: p.n_w,
            m: p.m,
            l1: p.l1,
            variant: p.variant.into(),
            mode: p.mode.into(),
            zeta_e: p.zeta_e,
            p_r: p.p_r,
            psi_e: p.psi_e,
            psi_h: p.psi_h,
        }
    }
}

/// bAbI operating point (d 40, n_s 50, V 174, three hops, L1 32) with the given sentence length.
#[no_mangle]
pub extern "C" fn hg_cost_params_babi(n_w: u64) -> HgCostParams {
    let p = CostParams::babi(n_w);
    HgCostParams {
        d: p.d,
        v: p.v,
        n_s: p.n_s,
        n_w: p.n_w,
        m: p.m,
        l1: p.l1,
        variant: p.variant.into(),
        mode: HgMode::PreEmbedded,
        zeta_e: p.zeta_e,
        p_r: p.p_r,
        psi_e: p.psi_e,
        psi_h: p.psi_h,
    }
}

/// FLOPs of one hop.
///
/// # Safety
/// `params` must be readable and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_cost_hop(params: *const HgCostParams, out: *mut u64) -> HgStatus {
    guard(|| {
        let p = CostParams::from(non_null(params, "params")?);
        *out_ptr(out, "out")? = cc_hop(&p)?;
        Ok(())
    })
}

/// FLOPs of one full-depth query.
///
/// # Safety
/// `params` must be readable and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_cost_total(params: *const HgCostParams, out: *mut u64) -> HgStatus {
    guard(|| {
        let p = CostParams::from(non_null(params, "params")?);
        *out_ptr(out, "out")? = cc_total(&p)?;
        Ok(())
    })
}

/// Predicted FLOPs saved per query by gating, pruning and (when Ψ is set) zero-skipping.
///
/// # Safety
/// `params` must be readable and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hg_cost_reduction(params: *const HgCostParams, out: *mut f64) -> HgStatus {
    guard(|| {
        let p = CostParams::from(non_null(params, "params")?);
        *out_ptr(out, "out")? = analytic_reduction(&p)?;
        Ok(())
    })
}

/// FLOPs of the classifier network with `l1` hidden units on `d` inputs.
#[no_mangle]
pub extern "C" fn hg_icn_overhead(d: u64, l1: u64) -> u64 {
    icn_overhead(d, l1)
}
