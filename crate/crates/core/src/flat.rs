//! Flat `section.key = value` text used for configs and manifests.

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{Error, Result};

fn flatten(prefix: &str, table: &Table, out: &mut String) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.push_str(&key);
                out.push_str(" = ");
                out.push_str(&other.to_string());
                out.push('\n');
            }
        }
    }
}

/// One line per leaf, keys sorted within each table.
pub fn to_flat<T: Serialize>(value: &T) -> Result<String> {
    let table = Table::try_from(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = String::new();
    flatten("", &table, &mut out);
    Ok(out)
}

pub fn from_flat<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}
