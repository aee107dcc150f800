//! The machine-readable result document: a self-describing JSON tree with
//! fixed key order and all floats rendered at 17 significant digits, so a
//! given run always produces byte-identical output and every value survives
//! a read-back losslessly.

use anyhow::{Context, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Doc {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Array(Vec<Doc>),
    Object(Vec<(String, Doc)>),
}

impl Doc {
    pub fn obj(fields: Vec<(&str, Doc)>) -> Doc {
        Doc::Object(fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn floats(values: &[f64]) -> Doc {
        Doc::Array(values.iter().map(|&v| Doc::Float(v)).collect())
    }

    pub fn strings(values: &[String]) -> Doc {
        Doc::Array(values.iter().map(|v| Doc::Str(v.clone())).collect())
    }
}

fn escape_json(s: &str, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_value(doc: &Doc, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match doc {
        Doc::Null => out.push_str("null"),
        Doc::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Doc::Int(i) => out.push_str(&i.to_string()),
        Doc::Float(v) => {
            if v.is_nan() || v.is_infinite() {
                out.push_str("null");
            } else {
                // 17 significant digits: exact f64 round trip
                out.push_str(&format!("{v:.16e}"));
            }
        }
        Doc::Str(s) => escape_json(s, out),
        Doc::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad);
                out.push_str("  ");
                write_value(item, indent + 1, out);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad);
            out.push(']');
        }
        Doc::Object(fields) => {
            if fields.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (key, value)) in fields.iter().enumerate() {
                out.push_str(&pad);
                out.push_str("  ");
                escape_json(key, out);
                out.push_str(": ");
                write_value(value, indent + 1, out);
                if i + 1 < fields.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            out.push_str(&pad);
            out.push('}');
        }
    }
}

/// Render the document tree to its canonical text form.
pub fn render(doc: &Doc) -> String {
    let mut out = String::new();
    write_value(doc, 0, &mut out);
    out.push('\n');
    out
}

/// Write the rendered document atomically.
pub fn write(path: &Path, doc: &Doc) -> Result<()> {
    crate::atomic_write(path, render(doc).as_bytes())
}

/// Read a result document back as parsed JSON.
pub fn read(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read result document `{}`", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("`{}` is not a valid result document", path.display()))
}
