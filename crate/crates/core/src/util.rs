//! Small shared helpers: timestamps, digests and atomic file output.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate};
use sha2::{Digest, Sha256};

/// Formats UTC epoch seconds as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_utc(ts: i64) -> String {
    match DateTime::from_timestamp(ts, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => ts.to_string(),
    }
}

/// Parses either integer epoch seconds or an RFC 3339 timestamp.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    DateTime::parse_from_rfc3339(raw).ok().map(|dt| dt.timestamp())
}

pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").ok()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes `bytes` to `path` via a sibling temp file and rename, so readers
/// never observe a half-written output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Rewrites TOML date and datetime values as strings, in place, so bare
/// `2020-06-01` and quoted `"2020-06-01"` deserialize the same way.
pub fn toml_dates_to_strings(value: &mut toml::Value) {
    match value {
        toml::Value::Datetime(d) => *value = toml::Value::String(d.to_string()),
        toml::Value::Array(items) => items.iter_mut().for_each(toml_dates_to_strings),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, v)| toml_dates_to_strings(v)),
        _ => {}
    }
}
