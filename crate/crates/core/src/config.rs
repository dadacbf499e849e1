//! Flat `section.key=value` configuration files layered over typed defaults.
//!
//! ```text
//! # comment
//! codec.kl_upper = 0.01
//! flow.schedule.warm = 0.99
//! ```
//!
//! A section is applied by serializing the defaults, replacing the addressed
//! fields, and deserializing again, so values are type-checked against the
//! defaults and a key that names no field is a config error.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key=value", i + 1)))?;
            let k = k.trim();
            if k.is_empty() || !k.contains('.') {
                return Err(cfg_err(format!("line {}: key '{k}' needs a section prefix", i + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(cfg_err(format!("line {}: duplicate key {k}", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Fails on any key whose section is not in `sections`.
    pub fn ensure_sections(&self, sections: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            let sec = k.split('.').next().unwrap_or("");
            if !sections.contains(&sec) {
                return Err(cfg_err(format!("unknown config section in key {k}")));
            }
        }
        Ok(())
    }

    /// `defaults` with every `section.*` key applied.
    pub fn apply<C: Serialize + DeserializeOwned>(&self, section: &str, defaults: &C) -> Result<C> {
        let mut tree = serde_json::to_value(defaults)?;
        let prefix = format!("{section}.");
        for (k, v) in &self.entries {
            let Some(path) = k.strip_prefix(&prefix) else { continue };
            set_path(&mut tree, path, v).map_err(|e| cfg_err(format!("{k}: {e}")))?;
        }
        serde_json::from_value(tree).map_err(|e| cfg_err(format!("section {section}: {e}")))
    }
}

fn set_path(tree: &mut Value, path: &str, raw: &str) -> std::result::Result<(), String> {
    let mut node = tree;
    for part in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| format!("unknown key '{part}'"))?;
    }
    *node = match node {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| format!("'{raw}' is not a bool"))?),
        Value::Number(n) if n.is_u64() => match raw.parse::<u64>() {
            Ok(u) => Value::from(u),
            Err(_) => return Err(format!("'{raw}' is not an unsigned integer")),
        },
        Value::Number(n) if n.is_i64() => match raw.parse::<i64>() {
            Ok(i) => Value::from(i),
            Err(_) => return Err(format!("'{raw}' is not an integer")),
        },
        Value::Number(_) => {
            let f: f64 = raw.parse().map_err(|_| format!("'{raw}' is not a number"))?;
            serde_json::Number::from_f64(f).map(Value::Number).ok_or("non-finite number")?
        }
        Value::String(_) => Value::String(raw.to_string()),
        Value::Null => {
            // optional field currently unset: accept a number, else a string
            match raw.parse::<f64>() {
                Ok(f) if raw.parse::<u64>().is_ok() => Value::from(f as u64),
                Ok(f) => serde_json::Number::from_f64(f).map(Value::Number).ok_or("non-finite number")?,
                Err(_) => Value::String(raw.to_string()),
            }
        }
        Value::Object(_) | Value::Array(_) => return Err("cannot set a composite value".into()),
    };
    Ok(())
}
