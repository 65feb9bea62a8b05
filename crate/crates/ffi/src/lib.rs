//! C ABI for loading saved strategy models and running batch prediction.
//!
//! All functions are thread-safe for distinct handles; a handle must not be
//! used concurrently from multiple threads. Strings returned by accessor
//! functions stay valid until the owning handle is freed. Error details for
//! the calling thread are available via `hm_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use habmod::dataset::{Modality, SampleTable};
use habmod::schemes::{predict_joint, ModelArtifact};
use habmod::taxonomy::Taxonomy;
use habmod::Error;
use ndarray::Array2;

/// Success.
pub const HM_OK: i32 = 0;
/// Invalid input: bad JSON, schema mismatch, or out-of-range argument.
pub const HM_ERR_INVALID: i32 = 1;
/// Internal failure during prediction.
pub const HM_ERR_RUNTIME: i32 = 2;
/// A required pointer argument was null.
pub const HM_ERR_NULL: i32 = 3;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn code_of(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::SchemaError(_)
        | Error::SchemaMismatch(_)
        | Error::InvalidSpec(_)
        | Error::Json(_) => HM_ERR_INVALID,
        _ => HM_ERR_RUNTIME,
    }
}

/// Opaque handle to a loaded strategy model.
pub struct HmModel {
    artifact: ModelArtifact,
    taxonomy: Taxonomy,
    feature_names: Vec<CString>,
    class_codes: Vec<CString>,
}

/// Message for the most recent error on this thread; empty string if none.
/// The pointer is valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

fn load_from_str(json: &str) -> Result<Box<HmModel>, (i32, String)> {
    let artifact = ModelArtifact::from_json(json).map_err(|e| (code_of(&e), e.to_string()))?;
    let taxonomy = artifact.taxonomy().map_err(|e| (code_of(&e), e.to_string()))?;
    let feature_names = artifact
        .model
        .feature_names
        .iter()
        .map(|n| CString::new(n.as_str()).unwrap())
        .collect();
    let class_codes = artifact
        .leaf_codes
        .iter()
        .map(|c| CString::new(c.as_str()).unwrap())
        .collect();
    Ok(Box::new(HmModel {
        artifact,
        taxonomy,
        feature_names,
        class_codes,
    }))
}

/// Loads a model from a JSON string. Returns null on failure; consult
/// `hm_last_error`.
///
/// # Safety
/// `json` must be a valid null-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn hm_model_load_json(json: *const c_char) -> *mut HmModel {
    if json.is_null() {
        set_error("null json pointer");
        return ptr::null_mut();
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("json is not valid UTF-8");
            return ptr::null_mut();
        }
    };
    match load_from_str(text) {
        Ok(m) => Box::into_raw(m),
        Err((_, msg)) => {
            set_error(&msg);
            ptr::null_mut()
        }
    }
}

/// Loads a model from a JSON file on disk. Returns null on failure.
///
/// # Safety
/// `path` must be a valid null-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hm_model_load_file(path: *const c_char) -> *mut HmModel {
    if path.is_null() {
        set_error("null path pointer");
        return ptr::null_mut();
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return ptr::null_mut();
        }
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            set_error(&format!("cannot read {path}: {e}"));
            return ptr::null_mut();
        }
    };
    match load_from_str(&text) {
        Ok(m) => Box::into_raw(m),
        Err((_, msg)) => {
            set_error(&msg);
            ptr::null_mut()
        }
    }
}

/// Frees a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be a pointer returned by a load function, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn hm_model_free(model: *mut HmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of feature columns the model expects, or -1 on null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hm_model_n_features(model: *const HmModel) -> i64 {
    match model.as_ref() {
        Some(m) => m.feature_names.len() as i64,
        None => -1,
    }
}

/// Number of output classes (taxonomy leaves), or -1 on null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hm_model_n_classes(model: *const HmModel) -> i64 {
    match model.as_ref() {
        Some(m) => m.class_codes.len() as i64,
        None => -1,
    }
}

/// Name of feature column `i`, or null if out of range. Valid until the
/// handle is freed.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hm_model_feature_name(model: *const HmModel, i: usize) -> *const c_char {
    match model.as_ref().and_then(|m| m.feature_names.get(i)) {
        Some(s) => s.as_ptr(),
        None => ptr::null(),
    }
}

/// Class code of output column `i`, or null if out of range. Valid until the
/// handle is freed.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hm_model_class_code(model: *const HmModel, i: usize) -> *const c_char {
    match model.as_ref().and_then(|m| m.class_codes.get(i)) {
        Some(s) => s.as_ptr(),
        None => ptr::null(),
    }
}

/// Predicts class probabilities for a batch of rows.
///
/// `x` is row-major with `n_rows * n_features` values, columns ordered as
/// reported by `hm_model_feature_name`. `out_probs` receives
/// `n_rows * n_classes` values, row-major, each row summing to 1.
///
/// # Safety
/// `model` must be a live handle; `x` and `out_probs` must point to buffers
/// of at least the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn hm_model_predict(
    model: *const HmModel,
    x: *const f64,
    n_rows: usize,
    n_features: usize,
    out_probs: *mut f64,
) -> i32 {
    let Some(m) = model.as_ref() else {
        set_error("null model handle");
        return HM_ERR_NULL;
    };
    if x.is_null() || out_probs.is_null() {
        set_error("null buffer pointer");
        return HM_ERR_NULL;
    }
    if n_features != m.feature_names.len() {
        set_error(&format!(
            "expected {} features, got {n_features}",
            m.feature_names.len()
        ));
        return HM_ERR_INVALID;
    }
    if n_rows == 0 {
        return HM_OK;
    }
    let data = std::slice::from_raw_parts(x, n_rows * n_features);
    let features = Array2::from_shape_vec((n_rows, n_features), data.to_vec()).unwrap();
    let modalities: Vec<Modality> = m
        .artifact
        .model
        .feature_names
        .iter()
        .map(|n| {
            n.split("__")
                .next()
                .unwrap_or("")
                .parse()
                .unwrap_or(Modality::Abio)
        })
        .collect();
    let table = SampleTable {
        ids: (0..n_rows).map(|i| format!("r{i}")).collect(),
        x: vec![0.0; n_rows],
        y: vec![0.0; n_rows],
        bioregion: vec![String::new(); n_rows],
        leaf: vec![None; n_rows],
        feature_names: m.artifact.model.feature_names.clone(),
        modalities,
        features,
    };
    match predict_joint(&m.artifact.model, &table, &m.taxonomy) {
        Ok(p) => {
            let k = m.class_codes.len();
            let out = std::slice::from_raw_parts_mut(out_probs, n_rows * k);
            for i in 0..n_rows {
                for j in 0..k {
                    out[i * k + j] = p.probs[[i, j]];
                }
            }
            HM_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_of(&e)
        }
    }
}
