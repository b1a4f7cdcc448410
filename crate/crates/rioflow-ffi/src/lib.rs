//! C ABI for the rioflow toolchain.
//!
//! The surface is handle-based: parse or load a project into an opaque
//! `RfProject`, then query it. Every returned string is heap-allocated and
//! must be released with `rf_string_free`; every call that can fail returns
//! an `RfStatus` and leaves a description for `rf_last_error_message`.
//! The matching declarations live in `include/rioflow.h`.

use rioflow::cosim::{Cosim, CosimInputs};
use rioflow::elaborate::{check_sctl, elaborate, DepthTable};
use rioflow::fabric::sim::NullSink;
use rioflow::host::ExecConfig;
use rioflow::ir::Project;
use rioflow::value::{FxpValue, OverflowMode, Value, WireType};
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

/// Status codes shared with the C header.
pub const RF_OK: i32 = 0;
pub const RF_ERR_ARG: i32 = 1;
pub const RF_ERR_PARSE: i32 = 2;
pub const RF_ERR_CHECK: i32 = 3;
pub const RF_ERR_RUNTIME: i32 = 4;
pub const RF_ERR_IO: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &rioflow::Error) -> i32 {
    use rioflow::ErrorCode::*;
    match err.code() {
        Syntax | UnknownPrimitive => RF_ERR_PARSE,
        Io => RF_ERR_IO,
        Deadlock | Limit | Runtime | Underrun | Overflow => RF_ERR_RUNTIME,
        _ => RF_ERR_CHECK,
    }
}

/// Opaque project handle.
pub struct RfProject {
    project: Project,
}

fn to_cstring(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

unsafe fn cstr<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    CStr::from_ptr(p).to_str().ok()
}

/// Returns the library version as a static string (do not free).
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the message of the most recent error on this thread. The returned
/// string must be freed with `rf_string_free`; returns NULL when no error
/// has been recorded.
#[no_mangle]
pub extern "C" fn rf_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if msg.is_empty() {
            std::ptr::null_mut()
        } else {
            to_cstring(msg.clone())
        }
    })
}

/// Frees a string returned by this library. NULL is allowed.
///
/// # Safety
/// `s` must have been returned by a rioflow function and not freed before.
#[no_mangle]
pub unsafe extern "C" fn rf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses project text. On success stores a new handle in `*out` and
/// returns RF_OK; the handle must be released with `rf_project_free`.
///
/// # Safety
/// `text` and `name` must be valid NUL-terminated strings (name may be
/// NULL); `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_project_parse(
    text: *const c_char,
    name: *const c_char,
    out: *mut *mut RfProject,
) -> i32 {
    let Some(text) = cstr(text) else {
        set_error("text must be valid UTF-8 and non-NULL");
        return RF_ERR_ARG;
    };
    if out.is_null() {
        set_error("out must not be NULL");
        return RF_ERR_ARG;
    }
    let name = cstr(name).unwrap_or("project.gtext");
    match rioflow::gtext::parse(text, name) {
        Ok(project) => {
            *out = Box::into_raw(Box::new(RfProject { project }));
            RF_OK
        }
        Err(diags) => {
            set_error(
                diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"),
            );
            let syntax = diags
                .iter()
                .any(|d| matches!(d.code, rioflow::ErrorCode::Syntax | rioflow::ErrorCode::UnknownPrimitive));
            if syntax {
                RF_ERR_PARSE
            } else {
                RF_ERR_CHECK
            }
        }
    }
}

/// Loads and parses a project file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_project_load(path: *const c_char, out: *mut *mut RfProject) -> i32 {
    let Some(path) = cstr(path) else {
        set_error("path must be valid UTF-8 and non-NULL");
        return RF_ERR_ARG;
    };
    match std::fs::read_to_string(Path::new(path)) {
        Ok(text) => {
            let ctext = match CString::new(text) {
                Ok(t) => t,
                Err(_) => {
                    set_error("project file contains NUL bytes");
                    return RF_ERR_IO;
                }
            };
            let cname = CString::new(
                Path::new(path).file_name().and_then(|s| s.to_str()).unwrap_or("project.gtext"),
            )
            .unwrap();
            rf_project_parse(ctext.as_ptr(), cname.as_ptr(), out)
        }
        Err(e) => {
            set_error(format!("cannot read {}: {}", path, e));
            RF_ERR_IO
        }
    }
}

/// Releases a project handle. NULL is allowed.
///
/// # Safety
/// `p` must be a handle from rf_project_parse/load, not freed before.
#[no_mangle]
pub unsafe extern "C" fn rf_project_free(p: *mut RfProject) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Canonical gtext text of the project. Free with `rf_string_free`.
///
/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rf_project_format(p: *const RfProject) -> *mut c_char {
    let Some(p) = p.as_ref() else {
        set_error("project handle is NULL");
        return std::ptr::null_mut();
    };
    to_cstring(rioflow::gtext::format_project(&p.project))
}

/// Full design check: expansion, type inference, partitioning and timing.
/// Returns a JSON array of diagnostics (empty when the design is clean) via
/// `*out_json`.
///
/// # Safety
/// `p` must be a live handle; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_project_check_json(
    p: *const RfProject,
    out_json: *mut *mut c_char,
) -> i32 {
    let Some(p) = p.as_ref() else {
        set_error("project handle is NULL");
        return RF_ERR_ARG;
    };
    if out_json.is_null() {
        set_error("out_json must not be NULL");
        return RF_ERR_ARG;
    }
    let mut diags = Vec::new();
    match elaborate(&p.project, &BTreeMap::new(), &BTreeMap::new()) {
        Ok(elab) => {
            let table = DepthTable::new();
            for fl in &elab.plan.fabric_loops {
                match check_sctl(&fl.node_id, &fl.sctl, fl.clock_hz, &table, &BTreeMap::new()) {
                    Ok(report) => {
                        if let Err(e) = report.as_result() {
                            diags.extend(e.diagnostics());
                        }
                    }
                    Err(e) => diags.extend(e.diagnostics()),
                }
            }
        }
        Err(e) => diags.extend(e.diagnostics()),
    }
    let json = serde_json::to_string(&diags).unwrap_or_else(|_| "[]".into());
    *out_json = to_cstring(json);
    if diags.is_empty() {
        RF_OK
    } else {
        RF_ERR_CHECK
    }
}

fn value_from_json(ty: &WireType, v: &serde_json::Value) -> Option<Value> {
    Some(match ty {
        WireType::Bool => Value::Bool(v.as_bool()?),
        WireType::Int32 => Value::Int32(v.as_i64()? as i32),
        WireType::Float64 => Value::Float64(v.as_f64()?),
        WireType::Fxp { word_bits, int_bits } => {
            Value::Fxp(FxpValue::from_f64(v.as_f64()?, *word_bits, *int_bits, OverflowMode::Saturate))
        }
        _ => return None,
    })
}

/// Runs the host partition to completion. `inputs_json` maps control names
/// to values (`{"a": 2.0, "go": true}`); NULL means no inputs. On success
/// stores a JSON object of indicator values in `*out_json`.
///
/// # Safety
/// `p` must be a live handle; `out_json` valid; `inputs_json` NULL or a
/// valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rf_run_host_json(
    p: *const RfProject,
    inputs_json: *const c_char,
    seed: u64,
    max_firings: u64,
    out_json: *mut *mut c_char,
) -> i32 {
    let Some(p) = p.as_ref() else {
        set_error("project handle is NULL");
        return RF_ERR_ARG;
    };
    if out_json.is_null() {
        set_error("out_json must not be NULL");
        return RF_ERR_ARG;
    }
    let elab = match elaborate(&p.project, &BTreeMap::new(), &BTreeMap::new()) {
        Ok(e) => e,
        Err(e) => {
            set_error(e.to_string());
            return status_of(&e);
        }
    };
    let mut inputs: BTreeMap<String, Value> = BTreeMap::new();
    if let Some(text) = cstr(inputs_json) {
        let parsed: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                set_error(format!("bad inputs JSON: {}", e));
                return RF_ERR_ARG;
            }
        };
        if let Some(map) = parsed.as_object() {
            for c in &elab.plan.host.diagram.controls {
                if let Some(v) = map.get(&c.name) {
                    match value_from_json(&c.ty, v) {
                        Some(val) => {
                            inputs.insert(c.name.clone(), val);
                        }
                        None => {
                            set_error(format!("input `{}` does not fit type {}", c.name, c.ty));
                            return RF_ERR_ARG;
                        }
                    }
                }
            }
        }
    }
    for c in &elab.plan.host.diagram.controls {
        inputs.entry(c.name.clone()).or_insert_with(|| c.ty.default_value());
    }
    let cfg = ExecConfig {
        seed,
        max_firings: if max_firings == 0 { 1_000_000 } else { max_firings },
        ..Default::default()
    };
    let mut comm = match rioflow::comm::CommSet::create(&p.project.channels, &BTreeMap::new()) {
        Ok(c) => c,
        Err(e) => {
            set_error(e.to_string());
            return status_of(&e);
        }
    };
    let mut env = rioflow::host::HostEnv { comm: Some(&mut comm), ..Default::default() };
    match rioflow::host::run(&elab.plan.host.diagram, Some(&p.project), &inputs, &cfg, &mut env) {
        Ok(out) => {
            let map: serde_json::Map<String, serde_json::Value> = out
                .outputs
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.to_string())))
                .collect();
            *out_json = to_cstring(serde_json::Value::Object(map).to_string());
            RF_OK
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Co-simulates the project for `ticks` grid ticks and stores the summary
/// JSON in `*out_json`.
///
/// # Safety
/// `p` must be a live handle; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rf_simulate_json(
    p: *const RfProject,
    ticks: u64,
    seed: u64,
    out_json: *mut *mut c_char,
) -> i32 {
    let Some(p) = p.as_ref() else {
        set_error("project handle is NULL");
        return RF_ERR_ARG;
    };
    if out_json.is_null() {
        set_error("out_json must not be NULL");
        return RF_ERR_ARG;
    }
    let elab = match elaborate(&p.project, &BTreeMap::new(), &BTreeMap::new()) {
        Ok(e) => e,
        Err(e) => {
            set_error(e.to_string());
            return status_of(&e);
        }
    };
    let mut controls = BTreeMap::new();
    for c in &elab.plan.host.diagram.controls {
        controls.insert(c.name.clone(), c.ty.default_value());
    }
    let cfg = ExecConfig { seed, max_firings: 100_000_000, sctl_iters: ticks, ..Default::default() };
    let inputs = CosimInputs { controls, ..Default::default() };
    let mut cosim = match Cosim::new(
        &p.project,
        &elab,
        &DepthTable::new(),
        &BTreeMap::new(),
        inputs,
        cfg,
    ) {
        Ok(c) => c,
        Err(e) => {
            set_error(e.to_string());
            return status_of(&e);
        }
    };
    match cosim.run(ticks, &mut NullSink) {
        Ok(summary) => {
            *out_json = to_cstring(serde_json::to_string(&summary).unwrap_or_default());
            RF_OK
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}
