//! Settings resolution: a JSON config file overlaid with command-line
//! flags, and the resolved snapshot written next to every output.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

/// Keys of `file` are flag names in snake case; any flag given on the
/// command line wins.
pub fn resolve<T: Serialize + DeserializeOwned>(file: Option<&Path>, flags: &T) -> Result<T> {
    let mut merged = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage("config", format!("cannot read {}: {e}", path.display())))?;
            match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::usage("config", "config file must hold a JSON object")),
                Err(e) => return Err(CliError::usage("config", format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(m) = serde_json::to_value(flags).expect("settings serialize") {
        for (k, v) in m {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage("config", e.to_string()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

/// Writes `resolved_config.json` into `dir`.
pub fn write_resolved(dir: &Path, command: &str, settings: Value) -> Result<()> {
    let snapshot = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
    });
    write_json(&dir.join("resolved_config.json"), &snapshot)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn require_file(path: &Path, field: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(field, format!("{} does not exist", path.display())))
    }
}

pub fn require_dir(path: &Path, field: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::usage(field, format!("{} is not a directory", path.display())))
    }
}

/// Runs `f` inside a pool of `jobs` threads, or on the global pool.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match jobs {
        Some(0) => Err(CliError::usage("jobs", "must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::runtime(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}
