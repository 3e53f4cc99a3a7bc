//! File formats, numerical oracles, trainers and the command drivers used by
//! the CLI and the acceptance suite.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod mixsim;
pub mod oracle;
pub mod probe;
pub mod rdm1;
pub mod trajectory;

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CrepeError, Result};

/// Byte offset of a serde_json error inside `text`.
pub(crate) fn json_error_offset(text: &[u8], err: &serde_json::Error) -> usize {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let line_start = text
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(line.saturating_sub(2))
        .map_or(0, |(i, _)| if line == 1 { 0 } else { i + 1 });
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Parses JSON; syntax and type errors become parse errors with a byte offset.
pub(crate) fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CrepeError::parse(json_error_offset(text.as_bytes(), &e), e.to_string()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CrepeError::input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
