//! Layered settings: command-line flags over config-file section over
//! built-in defaults. Config keys are the long flag names.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::failure::Failure;

/// Reads a config file: a JSON object with one section per subcommand plus an
/// optional `proposals` section.
pub fn load_file(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("config {}: {e}", path.display())))?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("config {}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Failure::input(format!("config {}: expected a JSON object", path.display())));
    }
    Ok(v)
}

fn overlay(base: &mut Value, top: &Value) {
    if let (Value::Object(b), Value::Object(t)) = (base, top) {
        for (k, v) in t {
            if !v.is_null() {
                b.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Resolves a command's settings. `C` must deserialize with defaults and
/// reject unknown keys.
pub fn resolve<F: Serialize, C: Serialize + DeserializeOwned + Default>(
    flags: &F,
    file: Option<&Value>,
    section: &str,
) -> Result<C, Failure> {
    let mut merged = serde_json::to_value(C::default()).expect("defaults serialize");
    if let Some(sec) = file.and_then(|f| f.get(section)) {
        serde_json::from_value::<C>(sec.clone())
            .map_err(|e| Failure::input(format!("config section {section:?}: {e}")))?;
        overlay(&mut merged, sec);
    }
    overlay(&mut merged, &serde_json::to_value(flags).expect("flags serialize"));
    serde_json::from_value(merged).map_err(|e| Failure::usage(format!("{section}: {e}")))
}

/// Keys a resolved config accepts.
#[cfg(test)]
pub fn keys<C: Serialize + Default>() -> Vec<String> {
    match serde_json::to_value(C::default()).expect("defaults serialize") {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

pub fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, Failure> {
    v.clone()
        .ok_or_else(|| Failure::usage(format!("missing --{flag} (flag or config key {flag:?})")))
}
