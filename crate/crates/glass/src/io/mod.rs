//! File formats.

pub mod checkpoint;
pub mod dataset;
pub mod tables;

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{AppError, Result};

pub use checkpoint::{Checkpoint, TOOL_VERSION};

pub const RESOLVED_CONFIG: &str = "resolved-config.toml";

#[derive(Serialize)]
struct Resolved<'a> {
    tool: &'a str,
    tool_version: &'a str,
    command: &'a str,
    config: &'a RunConfig,
}

/// Writes the fully resolved configuration and tool version into `dir`.
pub fn write_resolved_config(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let doc = Resolved {
        tool: "glass",
        tool_version: TOOL_VERSION,
        command,
        config: cfg,
    };
    let text = toml::to_string(&doc).map_err(|e| AppError::Config(e.to_string()))?;
    write_text(&dir.join(RESOLVED_CONFIG), &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::format(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))
}
