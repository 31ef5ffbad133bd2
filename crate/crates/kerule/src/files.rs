//! Reading and writing the on-disk artifacts: trajectory files, rule
//! programs, JSON/TOML configs.

use std::fs;
use std::path::Path;

use kerule_core::datasets::{read_text, write_text};
use kerule_core::ruledsl::{self, RuleProgram};
use kerule_core::statespace::Trajectory;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.into(), source })
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    read_text(&read_string(path)?).map_err(|source| Error::Dataset { path: path.into(), source })
}

pub fn write_trajectories(trajs: &[Trajectory], path: &Path) -> Result<()> {
    let text = write_text(trajs).map_err(|source| Error::Dataset { path: path.into(), source })?;
    write_string(path, &text)
}

/// A `.kerule` file, or the name of a built-in program.
pub fn read_rule(spec: &str) -> Result<RuleProgram> {
    if let Some(p) = ruledsl::builtin(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    ruledsl::parse(&read_string(path)?).map_err(|source| Error::Rule { path: path.into(), source })
}

pub fn write_rule(program: &RuleProgram, path: &Path) -> Result<()> {
    let mut text = ruledsl::serialize(program);
    if !text.ends_with('\n') {
        text.push('\n');
    }
    write_string(path, &text)
}

enum Format {
    Json,
    Toml,
}

fn format_of(path: &Path, text: &str) -> Format {
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => Format::Toml,
        Some("json") => Format::Json,
        _ if text.trim_start().starts_with('{') => Format::Json,
        _ => Format::Toml,
    }
}

/// Parses a config from JSON or TOML, chosen by extension and falling back
/// on a peek at the content.
pub fn parse_config<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    match format_of(path, text) {
        Format::Json => serde_json::from_str(text).map_err(|source| Error::Json { path: path.into(), source }),
        Format::Toml => toml::from_str(text).map_err(|e| Error::Toml {
            path: path.into(),
            line: e.span().map(|s| text[..s.start.min(text.len())].lines().count().max(1)),
            message: e.message().to_string(),
        }),
    }
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_config(path, &read_string(path)?)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    text.push('\n');
    write_string(path, &text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.into(), source })?;
    Ok(sha256_hex(&bytes))
}
