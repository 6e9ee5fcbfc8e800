//! Layered run configuration: built-in defaults, then a TOML file, then
//! `--set key=value` pairs, then explicit flags. Keys are dotted paths
//! into the parameter structs.

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};
use std::path::Path;

pub fn load_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    Ok(serde_json::to_value(table)?)
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
pub fn parse_set(arg: &str) -> Result<(String, Value)> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got {arg:?}"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("--set expects key=value, got {arg:?}");
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("parsed key"))?,
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

/// Writes `value` at a dotted `key`, creating intermediate tables.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            bail!("config key `{key}`: `{}` is not a table", parts[..i].join("."));
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Recursively overlays `top` onto `base`. Tables merge; anything else
/// replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Deserializes `value` into `T`, naming the offending key on unknown
/// fields and type errors.
pub fn strict<T: DeserializeOwned>(value: Value) -> Result<T> {
    let mut unknown = Vec::new();
    let mut note = |path: serde_ignored::Path| unknown.push(path.to_string());
    let de = serde_ignored::Deserializer::new(value, &mut note);
    let parsed: std::result::Result<T, _> = serde_path_to_error::deserialize(de);
    let parsed = parsed.map_err(|e| anyhow!("config field `{}`: {}", e.path(), e.inner()))?;
    if let Some(key) = unknown.first() {
        bail!("unknown config key `{key}`");
    }
    Ok(parsed)
}

/// Attaches a field name to a validation failure.
pub fn field<T>(name: &str, r: bouncekit::Result<T>) -> Result<T> {
    r.map_err(|e| anyhow!("config field `{name}`: {e}"))
}
