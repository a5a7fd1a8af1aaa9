//! Flag/config-file merging and the usage error type.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Bad invocation: missing or invalid options (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn load_file(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    text.parse::<toml::Table>()
        .map_err(|e| usage(format!("config file {}: {e}", path.display())))
}

fn is_unset(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Bool(b) => !b,
        Value::Array(a) => a.is_empty(),
        _ => false,
    }
}

/// Overlays the flags that were given on top of the `[section]` table of the
/// config file. Absent flags, `false` switches and empty lists count as unset.
pub fn resolve<T: Serialize + DeserializeOwned>(
    flags: &T,
    file: Option<&toml::Table>,
    section: &str,
) -> Result<T> {
    let mut merged = match file.and_then(|t| t.get(section)) {
        Some(toml::Value::Table(t)) => serde_json::to_value(t)?,
        Some(_) => return Err(usage(format!("config file: [{section}] must be a table"))),
        None => Value::Object(Default::default()),
    };
    let Value::Object(given) = serde_json::to_value(flags)? else {
        unreachable!("argument structs serialize to objects")
    };
    let target = merged.as_object_mut().expect("object");
    for (k, v) in given {
        if !is_unset(&v) {
            target.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("config [{section}]: {e}")))
}

pub fn require<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| usage(format!("missing required option --{flag}")))
}
