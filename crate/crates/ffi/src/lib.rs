//! C ABI over the `ctplan` toolkit.
//!
//! Every object crosses the boundary as an opaque pointer owned by the
//! caller and released with its matching `*_free`. Functions return a
//! status code; on failure `ctplan_last_error_message` describes the error
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ctplan::eval::{run_experiment, EvalReport, ExperimentConfig, Method};
use ctplan::pipeline::{codebook_covering, fit, FitConfig, Pipeline, Planner};
use ctplan::taskgen::{generate_dataset, Dataset, Split, SplitSizes};
use ctplan::Error;

pub const CTPLAN_OK: i32 = 0;
pub const CTPLAN_ERR_NULL: i32 = -1;
pub const CTPLAN_ERR_INVALID_ARGUMENT: i32 = -2;
pub const CTPLAN_ERR_IO: i32 = -3;
pub const CTPLAN_ERR_ARTIFACT: i32 = -4;
pub const CTPLAN_ERR_NO_PLAN: i32 = -5;
pub const CTPLAN_ERR_BUFFER_TOO_SMALL: i32 = -6;
pub const CTPLAN_ERR_RUNTIME: i32 = -7;
pub const CTPLAN_ERR_PANIC: i32 = -8;

pub const CTPLAN_SPLIT_TRAIN: i32 = 0;
pub const CTPLAN_SPLIT_VAL: i32 = 1;
pub const CTPLAN_SPLIT_TEST: i32 = 2;

pub const CTPLAN_METHOD_SYMBOLIC: i32 = 0;
pub const CTPLAN_METHOD_TOKEN_SPACE: i32 = 1;
pub const CTPLAN_METHOD_CHANCE: i32 = 2;

/// Generated or loaded task dataset.
pub struct CtplanDataset(Dataset);

/// Fitted codebook, symbolizer, transition model and token maps.
pub struct CtplanPipeline(Pipeline);

/// Result of one evaluation run.
pub struct CtplanReport(EvalReport);

/// Aggregate metrics of a report. `ase` and `fsd_success_mean` are NaN
/// when no task succeeded.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CtplanMetrics {
    pub n_tasks: usize,
    pub asacc_top1: f64,
    pub asacc_top5: f64,
    pub ase: f64,
    pub fsd_mean: f64,
    pub fsd_success_mean: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Code(i32, String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Code(CTPLAN_ERR_INVALID_ARGUMENT, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Unsupported(_) | Error::UnknownValue { .. } => CTPLAN_ERR_INVALID_ARGUMENT,
        Error::Io(_) => CTPLAN_ERR_IO,
        Error::MissingArtifact(_) | Error::SchemaMismatch(_) | Error::Parse { .. } => CTPLAN_ERR_ARTIFACT,
        Error::NoPlanFound { .. } | Error::Unreachable | Error::DeadDistribution { .. } => CTPLAN_ERR_NO_PLAN,
        _ => CTPLAN_ERR_RUNTIME,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CTPLAN_OK,
        Ok(Err(Failure::Code(code, msg))) => {
            set_error(msg);
            code
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            code_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CTPLAN_ERR_PANIC
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Code(CTPLAN_ERR_NULL, "path is null".into()));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::Code(CTPLAN_ERR_NULL, format!("{what} is null")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Code(CTPLAN_ERR_NULL, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn split_of(split: i32) -> Result<Split, Failure> {
    match split {
        CTPLAN_SPLIT_TRAIN => Ok(Split::Train),
        CTPLAN_SPLIT_VAL => Ok(Split::Val),
        CTPLAN_SPLIT_TEST => Ok(Split::Test),
        _ => Err(invalid(format!("unknown split {split}"))),
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next `ctplan_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ctplan_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates a standard dataset for `level` in 1..=4.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ctplan_dataset_generate(
    level: u8,
    train: usize,
    val: usize,
    test: usize,
    seed: u64,
    out: *mut *mut CtplanDataset,
) -> i32 {
    guard(|| {
        let ds = generate_dataset(level, SplitSizes::new(train, val, test), seed)?;
        store(out, CtplanDataset(ds))
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ctplan_dataset_load(path: *const c_char, out: *mut *mut CtplanDataset) -> i32 {
    guard(|| {
        let ds = Dataset::load(&path_arg(path)?)?;
        store(out, CtplanDataset(ds))
    })
}

/// # Safety
/// `dataset` must come from this library and `path` be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ctplan_dataset_save(dataset: *const CtplanDataset, path: *const c_char) -> i32 {
    guard(|| Ok(deref(dataset, "dataset")?.0.save(&path_arg(path)?)?))
}

/// Number of tasks across all splits, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ctplan_dataset_len(dataset: *const CtplanDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.tasks.len())
}

/// # Safety
/// `dataset` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ctplan_dataset_free(dataset: *mut CtplanDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fits a pipeline on the training split with default settings apart from
/// the codebook seed and training noise.
///
/// # Safety
/// `dataset` must come from this library and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ctplan_pipeline_fit(
    dataset: *const CtplanDataset,
    codebook_seed: u64,
    sigma: f64,
    out: *mut *mut CtplanPipeline,
) -> i32 {
    guard(|| {
        let ds = deref(dataset, "dataset")?;
        let config = FitConfig { codebook_seed, sigma, ..FitConfig::default() };
        let (p, _) = fit(&ds.0, &config)?;
        store(out, CtplanPipeline(p))
    })
}

/// # Safety
/// `dir` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ctplan_pipeline_load(dir: *const c_char, out: *mut *mut CtplanPipeline) -> i32 {
    guard(|| {
        let p = Pipeline::load(&path_arg(dir)?)?;
        store(out, CtplanPipeline(p))
    })
}

/// # Safety
/// `pipeline` must come from this library and `dir` be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ctplan_pipeline_save(pipeline: *const CtplanPipeline, dir: *const c_char) -> i32 {
    guard(|| Ok(deref(pipeline, "pipeline")?.0.save(&path_arg(dir)?)?))
}

/// # Safety
/// `pipeline` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ctplan_pipeline_free(pipeline: *mut CtplanPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Plans task `task_index` of `dataset` and writes the best plan as action
/// indices into `actions`. `*len` receives the plan length; when it
/// exceeds `capacity` nothing is written and the call reports
/// `CTPLAN_ERR_BUFFER_TOO_SMALL`.
///
/// # Safety
/// Handles must come from this library, `actions` must hold `capacity`
/// bytes (it may be null when `capacity` is 0) and `len` be valid for
/// writes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ctplan_plan_task(
    pipeline: *const CtplanPipeline,
    dataset: *const CtplanDataset,
    task_index: usize,
    method: i32,
    top_k: usize,
    l_max: usize,
    sigma: f64,
    seed: u64,
    actions: *mut u8,
    capacity: usize,
    len: *mut usize,
) -> i32 {
    guard(|| {
        let p = &deref(pipeline, "pipeline")?.0;
        let ds = &deref(dataset, "dataset")?.0;
        if len.is_null() {
            return Err(Failure::Code(CTPLAN_ERR_NULL, "len is null".into()));
        }
        let task = ds.tasks.get(task_index).ok_or_else(|| invalid(format!("task index {task_index} out of range")))?;
        let planner = match method {
            CTPLAN_METHOD_SYMBOLIC => Planner::Symbolic,
            CTPLAN_METHOD_TOKEN_SPACE => Planner::TokenSpace,
            _ => return Err(invalid(format!("method {method} cannot plan"))),
        };
        let cb = codebook_covering(&p.codebook, [task])?;
        let (init, goal) = p.encode_task(&cb, task, task_index, sigma, seed)?;
        let result = p.plan_tokens(&cb, task, &init, &goal, planner, top_k, l_max)?;
        let best = result.best().ok_or(Error::NoPlanFound { l_max })?;
        *len = best.actions.len();
        if best.actions.len() > capacity {
            return Err(Failure::Code(
                CTPLAN_ERR_BUFFER_TOO_SMALL,
                format!("plan has {} actions, buffer holds {capacity}", best.actions.len()),
            ));
        }
        for (i, a) in best.actions.iter().enumerate() {
            *actions.add(i) = a.index() as u8;
        }
        Ok(())
    })
}

/// Runs one evaluation. `pipeline` may be null for the chance method.
///
/// # Safety
/// Handles must be null or come from this library and `out` be valid for
/// writes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ctplan_evaluate(
    dataset: *const CtplanDataset,
    pipeline: *const CtplanPipeline,
    method: i32,
    split: i32,
    sigma: f64,
    top_k: usize,
    l_max: usize,
    seed: u64,
    out: *mut *mut CtplanReport,
) -> i32 {
    guard(|| {
        let ds = &deref(dataset, "dataset")?.0;
        let method = match method {
            CTPLAN_METHOD_SYMBOLIC => Method::Symbolic,
            CTPLAN_METHOD_TOKEN_SPACE => Method::TokenSpace,
            CTPLAN_METHOD_CHANCE => Method::Chance,
            _ => return Err(invalid(format!("unknown method {method}"))),
        };
        let config = ExperimentConfig { method, split: split_of(split)?, sigma, top_k, l_max, seed };
        let report = run_experiment(ds, pipeline.as_ref().map(|p| &p.0), &config)?;
        store(out, CtplanReport(report))
    })
}

/// # Safety
/// `report` must come from this library and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ctplan_report_metrics(report: *const CtplanReport, out: *mut CtplanMetrics) -> i32 {
    guard(|| {
        let r = &deref(report, "report")?.0;
        if out.is_null() {
            return Err(Failure::Code(CTPLAN_ERR_NULL, "output pointer is null".into()));
        }
        *out = CtplanMetrics {
            n_tasks: r.n_tasks,
            asacc_top1: r.asacc_top1,
            asacc_top5: r.asacc_top5,
            ase: r.ase.unwrap_or(f64::NAN),
            fsd_mean: r.fsd_mean,
            fsd_success_mean: r.fsd_success_mean.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Writes `<stem>.txt` and `<stem>.tsv` under `dir`.
///
/// # Safety
/// `report` must come from this library; `dir` and `stem` must be
/// nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ctplan_report_write(
    report: *const CtplanReport,
    dir: *const c_char,
    stem: *const c_char,
) -> i32 {
    guard(|| {
        let r = &deref(report, "report")?.0;
        let stem = path_arg(stem)?;
        let stem = stem.to_str().ok_or_else(|| invalid("stem is not UTF-8"))?;
        Ok(r.write(&path_arg(dir)?, stem)?)
    })
}

/// # Safety
/// `report` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ctplan_report_free(report: *mut CtplanReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
