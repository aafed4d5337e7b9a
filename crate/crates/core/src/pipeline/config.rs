//! JSON configuration files layered over built-in defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Recursively overlays `top` onto `base`. Objects merge key by key; any
/// other value replaces the base value.
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

/// `defaults` with the file at `path` (if any) merged on top. Keys that the
/// defaults do not have are rejected so typos surface.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)?;
        let top: Value = serde_json::from_str(&text)?;
        check_keys(&v, &top, "")?;
        merge(&mut v, top);
    }
    Ok(serde_json::from_value(v)?)
}

fn check_keys(base: &Value, top: &Value, at: &str) -> Result<()> {
    if let (Value::Object(b), Value::Object(t)) = (base, top) {
        for (k, v) in t {
            let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
            match b.get(k) {
                None => return Err(Error::invalid(format!("unknown config key {here}"))),
                Some(inner) => check_keys(inner, v, &here)?,
            }
        }
    }
    Ok(())
}
