//! Flat `key = value` TOML files for hardware/cost/calibration models and
//! workloads, plus name resolution against built-in presets and an optional
//! config directory.
//!
//! A model file overrides any subset of the `gh100` preset:
//!
//! ```toml
//! name = "my-chip"
//! mma_flops = 3.2e15
//! rng_issue_fixed = 48
//! drop_overhead = 1.10
//! ```
//!
//! Keys come from [`HardwareConfig`], [`CostTable`], [`CalibrationFactors`]
//! and `gemm_threshold`; anything else is rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::cost::{CostTable, HardwareConfig};
use crate::error::{Error, Result};
use crate::schedule::{CalibrationFactors, PerfModel};
use crate::workload::{self, WorkloadConfig};

/// Points at a directory holding `hardware/<name>.toml` and
/// `workload/<name>.toml`.
pub const CONFIG_DIR_ENV: &str = "DROPSCHED_CONFIG_DIR";

pub const HARDWARE_PRESETS: &[&str] = &["gh100"];

fn cfg_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn to_table<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("config structs serialize to tables"),
    }
}

fn from_table<T: DeserializeOwned>(t: Table, path: &Path) -> Result<T> {
    Value::Table(t)
        .try_into()
        .map_err(|e: toml::de::Error| cfg_err(path, e.message().to_string()))
}

/// Integer literals are accepted where the preset holds a float.
fn coerce(default: &Value, given: Value) -> Option<Value> {
    match (default, given) {
        (Value::Float(_), Value::Integer(i)) => Some(Value::Float(i as f64)),
        (Value::Float(_), v @ Value::Float(_)) => Some(v),
        (Value::Integer(_), v @ Value::Integer(_)) => Some(v),
        (Value::String(_), v @ Value::String(_)) => Some(v),
        _ => None,
    }
}

fn parse_flat(text: &str, path: &Path) -> Result<Table> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| cfg_err(path, e.message().to_string()))?;
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table() || v.is_array()) {
        return Err(cfg_err(path, format!("`{k}` must be a plain `key = value` entry")));
    }
    Ok(table)
}

/// Parses a model file; `path` is used only in error messages.
pub fn model_from_str(text: &str, path: &Path) -> Result<PerfModel> {
    let base = PerfModel::gh100();
    let mut sections = [to_table(&base.hw), to_table(&base.ct), to_table(&base.cal)];
    let mut threshold = base.gemm_threshold;

    for (key, given) in parse_flat(text, path)? {
        if key == "gemm_threshold" {
            threshold = match coerce(&Value::Float(0.0), given) {
                Some(Value::Float(f)) => f,
                _ => return Err(cfg_err(path, "`gemm_threshold` must be a number")),
            };
            continue;
        }
        let Some(section) = sections.iter_mut().find(|s| s.contains_key(&key)) else {
            return Err(cfg_err(path, format!("unknown key `{key}`")));
        };
        let slot = section.get_mut(&key).expect("key checked above");
        *slot = coerce(slot, given)
            .ok_or_else(|| cfg_err(path, format!("`{key}` has the wrong type")))?;
    }

    let [hw, ct, cal] = sections;
    let mut model = PerfModel::new(
        from_table::<HardwareConfig>(hw, path)?,
        from_table::<CostTable>(ct, path)?,
        from_table::<CalibrationFactors>(cal, path)?,
    )
    .map_err(|e| cfg_err(path, e.to_string()))?;
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(cfg_err(path, format!("gemm_threshold must be in (0, 1], got {threshold}")));
    }
    model.gemm_threshold = threshold;
    Ok(model)
}

pub fn load_model_file(path: &Path) -> Result<PerfModel> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(path, e.to_string()))?;
    model_from_str(&text, path)
}

pub fn workload_from_str(text: &str, path: &Path) -> Result<WorkloadConfig> {
    let cfg: WorkloadConfig = from_table(parse_flat(text, path)?, path)?;
    cfg.validate().map_err(|e| cfg_err(path, e.to_string()))?;
    Ok(cfg)
}

pub fn load_workload_file(path: &Path) -> Result<WorkloadConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(path, e.to_string()))?;
    workload_from_str(&text, path)
}

fn config_dir() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_ENV).map(PathBuf::from)
}

fn looks_like_path(s: &str) -> bool {
    s.ends_with(".toml") || s.contains(std::path::MAIN_SEPARATOR) || s.contains('/')
}

fn dir_entry(kind: &str, name: &str) -> Option<PathBuf> {
    let p = config_dir()?.join(kind).join(format!("{name}.toml"));
    p.is_file().then_some(p)
}

fn dir_names(kind: &str) -> Vec<String> {
    let Some(dir) = config_dir() else {
        return Vec::new();
    };
    let Ok(rd) = std::fs::read_dir(dir.join(kind)) else {
        return Vec::new();
    };
    let mut names: Vec<String> = rd
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "toml").then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    names.sort();
    names
}

fn available(builtin: &[&str], kind: &str) -> String {
    let mut all: Vec<String> = builtin.iter().map(|s| s.to_string()).collect();
    for n in dir_names(kind) {
        if !all.contains(&n) {
            all.push(n);
        }
    }
    all.join(", ")
}

/// A file path, a file in the config directory, or a built-in preset, in
/// that order.
pub fn resolve_model(name: &str) -> Result<PerfModel> {
    if looks_like_path(name) {
        return load_model_file(Path::new(name));
    }
    if let Some(p) = dir_entry("hardware", name) {
        return load_model_file(&p);
    }
    match name {
        "gh100" => Ok(PerfModel::gh100()),
        _ => Err(Error::UnknownName {
            kind: "hardware preset",
            name: name.to_string(),
            available: available(HARDWARE_PRESETS, "hardware"),
        }),
    }
}

pub fn resolve_workload(name: &str) -> Result<WorkloadConfig> {
    if looks_like_path(name) {
        return load_workload_file(Path::new(name));
    }
    if let Some(p) = dir_entry("workload", name) {
        return load_workload_file(&p);
    }
    workload::preset(name).ok_or_else(|| Error::UnknownName {
        kind: "workload preset",
        name: name.to_string(),
        available: available(workload::PRESET_NAMES, "workload"),
    })
}
