//! C ABI for the covrank engine: opaque handles, integer status codes, and
//! a thread-local last-error message. The header `include/covrank.h` is
//! generated at build time.
//!
//! Ownership rules: every `*_new`/`*_load`/`*_train` out-parameter transfers
//! ownership to the caller, who must release it with the matching `*_free`.
//! Strings returned through out-parameters are released with
//! `covrank_string_free`. All functions are null-safe and return
//! `COVRANK_STATUS_NULL_ARGUMENT` instead of dereferencing null.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use covrank::dataset::Dataset;
use covrank::engine::features::build_features;
use covrank::engine::harness::{run_leave_one_out, Level};
use covrank::engine::models::{
    load_models, localize_methods, localize_statements, save_models, train_models, TrainedModels,
};
use covrank::engine::metrics::BugRanking;
use covrank::engine::PipelineConfig;
use covrank::synth::{generate_benchmark, BenchmarkConfig};
use covrank::CovrankError;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovrankStatus {
    CovrankStatusOk = 0,
    CovrankStatusNullArgument = 1,
    CovrankStatusConfig = 2,
    CovrankStatusData = 3,
    CovrankStatusTraining = 4,
    CovrankStatusEvaluation = 5,
    CovrankStatusInvalidUtf8 = 6,
    CovrankStatusOutOfRange = 7,
}

use CovrankStatus::*;

/// Ranking granularity.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovrankLevel {
    CovrankLevelStatement = 0,
    CovrankLevelMethod = 1,
}

impl From<CovrankLevel> for Level {
    fn from(l: CovrankLevel) -> Level {
        match l {
            CovrankLevel::CovrankLevelStatement => Level::Statement,
            CovrankLevel::CovrankLevelMethod => Level::Method,
        }
    }
}

/// Opaque dataset handle.
pub struct CovrankDataset {
    inner: Dataset,
}

/// Opaque trained-models handle.
pub struct CovrankModels {
    inner: TrainedModels,
}

/// Opaque ranking handle: one bug's elements ordered by display position.
pub struct CovrankRanking {
    inner: BugRanking,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn classify(err: &CovrankError, phase: CovrankStatus) -> CovrankStatus {
    match err {
        CovrankError::Config(_) => CovrankStatusConfig,
        CovrankError::Json(_) | CovrankError::Io { .. } | CovrankError::SchemaMismatch { .. } => {
            CovrankStatusData
        }
        CovrankError::Diverged(_) => CovrankStatusTraining,
        _ => phase,
    }
}

fn fail(err: CovrankError, phase: CovrankStatus) -> CovrankStatus {
    set_error(&err.to_string());
    classify(&err, phase)
}

/// # Safety
/// `s` must be a valid NUL-terminated string or null.
unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, CovrankStatus> {
    if s.is_null() {
        set_error("null string argument");
        return Err(CovrankStatusNullArgument);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        CovrankStatusInvalidUtf8
    })
}

fn give<T>(out: *mut *mut T, value: T) -> CovrankStatus {
    if out.is_null() {
        set_error("null out-parameter");
        return CovrankStatusNullArgument;
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    CovrankStatusOk
}

/// Last error message for this thread; valid until the next failing call.
/// Never null; empty when no error has occurred.
#[no_mangle]
pub extern "C" fn covrank_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string (never freed by the caller).
#[no_mangle]
pub extern "C" fn covrank_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string returned through an out-parameter.
///
/// # Safety
/// `s` must be a pointer previously returned by this library, or null.
#[no_mangle]
pub unsafe extern "C" fn covrank_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load an fl-dataset/v1 JSON file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn covrank_dataset_load(
    path: *const c_char,
    out: *mut *mut CovrankDataset,
) -> CovrankStatus {
    let path = match str_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match covrank::dataset::load_dataset(Path::new(path)) {
        Ok(inner) => give(out, CovrankDataset { inner }),
        Err(e) => fail(e, CovrankStatusData),
    }
}

/// Generate a synthetic benchmark dataset.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn covrank_dataset_generate(
    seed: u64,
    bugs: usize,
    tests: usize,
    distractors: usize,
    out: *mut *mut CovrankDataset,
) -> CovrankStatus {
    let cfg = BenchmarkConfig {
        seed,
        n_bugs: bugs,
        tests_per_bug: tests,
        distractors,
        ..Default::default()
    };
    match generate_benchmark(&cfg) {
        Ok(inner) => give(out, CovrankDataset { inner }),
        Err(e) => fail(e, CovrankStatusData),
    }
}

/// Write a dataset as canonical fl-dataset/v1 JSON.
///
/// # Safety
/// `ds` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn covrank_dataset_save(
    ds: *const CovrankDataset,
    path: *const c_char,
) -> CovrankStatus {
    if ds.is_null() {
        set_error("null dataset handle");
        return CovrankStatusNullArgument;
    }
    let path = match str_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match covrank::dataset::save_dataset(&(*ds).inner, Path::new(path)) {
        Ok(()) => CovrankStatusOk,
        Err(e) => fail(e, CovrankStatusData),
    }
}

/// Number of bugs in the dataset; 0 for a null handle.
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn covrank_dataset_bug_count(ds: *const CovrankDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.bugs.len()
}

/// # Safety
/// `ds` must be a pointer returned by this library, or null; it must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn covrank_dataset_free(ds: *mut CovrankDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

fn pipeline_config(config_json: Option<&str>) -> Result<PipelineConfig, CovrankStatus> {
    let cfg = match config_json {
        None => PipelineConfig::desk(),
        Some(json) => serde_json::from_str(json).map_err(|e| {
            set_error(&format!("invalid configuration: {e}"));
            CovrankStatusConfig
        })?,
    };
    cfg.validate().map_err(|e| {
        set_error(&e.to_string());
        CovrankStatusConfig
    })?;
    Ok(cfg)
}

/// Train localization models on every bug in `ds`. `config_json` is an
/// optional serialized pipeline configuration; null selects the desk preset.
///
/// # Safety
/// `ds` must be a live handle; `config_json` a valid string or null; `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn covrank_models_train(
    ds: *const CovrankDataset,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut CovrankModels,
) -> CovrankStatus {
    if ds.is_null() {
        set_error("null dataset handle");
        return CovrankStatusNullArgument;
    }
    let config_json = if config_json.is_null() {
        None
    } else {
        match str_arg(config_json) {
            Ok(s) => Some(s),
            Err(s) => return s,
        }
    };
    let mut cfg = match pipeline_config(config_json) {
        Ok(c) => c,
        Err(s) => return s,
    };
    cfg.seed = seed;
    let feats = match build_features(&(*ds).inner, &cfg) {
        Ok(f) => f,
        Err(e) => return fail(e, CovrankStatusTraining),
    };
    let bugs: Vec<_> = feats.bugs.iter().collect();
    match train_models(&bugs, &cfg, seed) {
        Ok(inner) => give(out, CovrankModels { inner }),
        Err(e) => fail(e, CovrankStatusTraining),
    }
}

/// Write a model directory (config plus one checkpoint per net).
///
/// # Safety
/// `models` must be a live handle; `dir` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn covrank_models_save(
    models: *const CovrankModels,
    dir: *const c_char,
) -> CovrankStatus {
    if models.is_null() {
        set_error("null models handle");
        return CovrankStatusNullArgument;
    }
    let dir = match str_arg(dir) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match save_models(&(*models).inner, Path::new(dir)) {
        Ok(()) => CovrankStatusOk,
        Err(e) => fail(e, CovrankStatusData),
    }
}

/// Load a model directory written by `covrank_models_save`.
///
/// # Safety
/// `dir` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn covrank_models_load(
    dir: *const c_char,
    out: *mut *mut CovrankModels,
) -> CovrankStatus {
    let dir = match str_arg(dir) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_models(Path::new(dir)) {
        Ok(inner) => give(out, CovrankModels { inner }),
        Err(e) => fail(e, CovrankStatusData),
    }
}

/// # Safety
/// `models` must be a pointer returned by this library, or null; it must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn covrank_models_free(models: *mut CovrankModels) {
    if !models.is_null() {
        drop(Box::from_raw(models));
    }
}

/// Rank the elements of one bug (by index) at the requested level.
///
/// # Safety
/// `models` and `ds` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn covrank_localize(
    models: *const CovrankModels,
    ds: *const CovrankDataset,
    bug_index: usize,
    level: CovrankLevel,
    out: *mut *mut CovrankRanking,
) -> CovrankStatus {
    if models.is_null() || ds.is_null() {
        set_error("null handle");
        return CovrankStatusNullArgument;
    }
    let dataset = &(*ds).inner;
    if bug_index >= dataset.bugs.len() {
        set_error(&format!(
            "bug index {bug_index} out of range ({} bugs)",
            dataset.bugs.len()
        ));
        return CovrankStatusOutOfRange;
    }
    let single = Dataset::new(
        dataset.project.clone(),
        vec![dataset.bugs[bug_index].clone()],
    );
    let trained = &(*models).inner;
    let feats = match build_features(&single, &trained.cfg) {
        Ok(f) => f,
        Err(e) => return fail(e, CovrankStatusEvaluation),
    };
    let ranking = match Level::from(level) {
        Level::Statement => localize_statements(trained, &feats.bugs[0]),
        Level::Method => localize_methods(trained, &feats.bugs[0]),
    };
    match ranking {
        Ok(inner) => give(out, CovrankRanking { inner }),
        Err(e) => fail(e, CovrankStatusEvaluation),
    }
}

/// Number of ranked elements; 0 for a null handle.
///
/// # Safety
/// `r` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn covrank_ranking_len(r: *const CovrankRanking) -> usize {
    if r.is_null() {
        return 0;
    }
    (*r).inner.items.len()
}

/// Element id, score, and average-tie rank at display position `pos`.
///
/// # Safety
/// `r` must be a live handle; out-parameters must be valid or null (null
/// out-parameters are skipped).
#[no_mangle]
pub unsafe extern "C" fn covrank_ranking_entry(
    r: *const CovrankRanking,
    pos: usize,
    out_id: *mut usize,
    out_score: *mut f64,
    out_rank: *mut f64,
) -> CovrankStatus {
    if r.is_null() {
        set_error("null ranking handle");
        return CovrankStatusNullArgument;
    }
    let items = &(*r).inner.items;
    if pos >= items.len() {
        set_error(&format!("position {pos} out of range ({} items)", items.len()));
        return CovrankStatusOutOfRange;
    }
    let item = &items[pos];
    if !out_id.is_null() {
        *out_id = item.id;
    }
    if !out_score.is_null() {
        *out_score = item.score;
    }
    if !out_rank.is_null() {
        *out_rank = item.rank;
    }
    CovrankStatusOk
}

/// # Safety
/// `r` must be a pointer returned by this library, or null; it must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn covrank_ranking_free(r: *mut CovrankRanking) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Leave-one-out evaluation over `ds`; writes the report as a JSON string to
/// `out_json` (release with `covrank_string_free`).
///
/// # Safety
/// `ds` must be a live handle; `config_json` a valid string or null;
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn covrank_evaluate_loo(
    ds: *const CovrankDataset,
    config_json: *const c_char,
    level: CovrankLevel,
    out_json: *mut *mut c_char,
) -> CovrankStatus {
    if ds.is_null() {
        set_error("null dataset handle");
        return CovrankStatusNullArgument;
    }
    if out_json.is_null() {
        set_error("null out-parameter");
        return CovrankStatusNullArgument;
    }
    let config_json = if config_json.is_null() {
        None
    } else {
        match str_arg(config_json) {
            Ok(s) => Some(s),
            Err(s) => return s,
        }
    };
    let cfg = match pipeline_config(config_json) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let report = match run_leave_one_out(&(*ds).inner, level.into(), &cfg) {
        Ok(r) => r,
        Err(e) => return fail(e, CovrankStatusEvaluation),
    };
    let json = match serde_json::to_string_pretty(&report) {
        Ok(j) => j,
        Err(e) => {
            set_error(&e.to_string());
            return CovrankStatusEvaluation;
        }
    };
    *out_json = CString::new(json).expect("JSON has no NUL bytes").into_raw();
    CovrankStatusOk
}
