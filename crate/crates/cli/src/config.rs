//! Config documents, dot-path overrides, and file helpers.
//!
//! Every command takes one JSON document. `--set a.b.c=value` flags rewrite
//! scalar leaves before deserialization; unknown keys are rejected when the
//! document is bound to its schema.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::Value;

/// Parse `key.path=value` into (path, parsed value). Values parse as JSON
/// first (numbers, booleans, quoted strings); anything else is a string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("--set {spec:?}: expected key.path=value"))?;
    if path.is_empty() {
        bail!("--set {spec:?}: empty key path");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.to_string(), value))
}

/// Apply one override to a JSON document, creating intermediate objects.
pub fn apply_override(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .with_context(|| format!("--set {path}: `{}` is not an object", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

/// Load a JSON config, apply overrides, and bind it to the command schema.
pub fn load_config<T: serde::de::DeserializeOwned>(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<T> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        apply_override(&mut doc, &key, value)?;
    }
    serde_json::from_value(doc).context("config does not match the command schema")
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Insert a suffix before the final extension: `t.trace` -> `t_alpha0.5.trace`.
pub fn path_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    match path.extension() {
        Some(ext) => {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            path.with_file_name(format!("{stem}{suffix}.{}", ext.to_string_lossy()))
        }
        None => {
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            path.with_file_name(format!("{name}{suffix}"))
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
