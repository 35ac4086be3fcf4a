//! Canonical JSON: sorted object keys, floats written with nine significant
//! digits in exponent form, integers verbatim. Two equal values always
//! produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Multi-line canonical rendering (two-space indent, trailing newline).
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::json("serialize", e))?;
    let mut out = String::new();
    write_value(&mut out, &v, Some(0));
    out.push('\n');
    Ok(out)
}

/// Single-line canonical rendering, no trailing newline. Used for JSON-lines.
pub fn to_canonical_line<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::json("serialize", e))?;
    let mut out = String::new();
    write_value(&mut out, &v, None);
    Ok(out)
}

pub fn write_canonical<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_canonical_string(value)?;
    crate::raster::write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))
}

/// Nine significant digits, exponent notation: `1.25e-1` style is never
/// emitted, always `1.25000000e-1`.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        // -0.0 and 0.0 print the same
        return "0.00000000e0".to_string();
    }
    format!("{x:.8e}")
}

fn write_value(out: &mut String, v: &Value, indent: Option<usize>) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else {
                out.push_str(&format_float(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"))
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, indent.map(|d| d + 1));
                write_value(out, item, indent.map(|d| d + 1));
            }
            newline(out, indent);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, indent.map(|d| d + 1));
                out.push_str(&serde_json::to_string(k).expect("string serialization is infallible"));
                out.push(':');
                if indent.is_some() {
                    out.push(' ');
                }
                write_value(out, &map[k.as_str()], indent.map(|d| d + 1));
            }
            newline(out, indent);
            out.push('}');
        }
    }
}

fn newline(out: &mut String, indent: Option<usize>) {
    if let Some(d) = indent {
        out.push('\n');
        for _ in 0..d {
            out.push_str("  ");
        }
    }
}
