//! Line-based `key=value` config dialect shared by run configs, synthetic
//! task specs and experiment specs. `#` starts a comment; blank lines are
//! ignored; keys may repeat only where the consumer allows it.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_kv(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push(Entry {
            line: n + 1,
            key: k.trim().to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text)
}

/// Parses `key=value` overrides given on the command line.
pub fn parse_overrides(items: &[String]) -> Result<Vec<Entry>> {
    parse_kv(&items.join("\n"))
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn unknown_key(e: &Entry) -> Error {
    Error::Config(format!("line {}: unknown key {:?}", e.line, e.key))
}
