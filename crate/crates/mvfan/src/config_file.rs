//! Experiment configs as TOML, dotted-path overrides and the config hash.

use std::fs;
use std::path::{Path, PathBuf};

use mvfan_core::config::ExperimentConfig;
use sha2::{Digest, Sha256};
use toml::Value;

use crate::error::{Error, Result};

/// Environment variable naming the directory runs are written under.
pub const OUTPUT_ROOT_ENV: &str = "MVFAN_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from)
}

pub fn to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Hex SHA-256 of the canonical TOML form.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(to_toml(cfg)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (`name=desk` as well as `name="desk"`).
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Keys that may be absent from a serialized config because they default
/// to nothing.
const OPTIONAL_KEYS: [&str; 1] = ["data.root"];

/// Applies `a.b.c=value` to a TOML tree. The path must already exist so a
/// typo cannot silently add an ignored key; integers are widened to floats
/// where the existing value is a float.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    let optional = OPTIONAL_KEYS.contains(&path.trim());
    let mut node = tree;
    for (i, k) in keys.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not a table", keys[..i].join("."))))?;
        if optional && i + 1 == keys.len() && !table.contains_key(*k) {
            table.insert((*k).to_string(), Value::String(String::new()));
        }
        node = table
            .get_mut(*k)
            .ok_or_else(|| Error::Config(format!("unknown config key `{}`", keys[..=i].join("."))))?;
    }
    let mut v = parse_value(raw.trim());
    if let (Value::Float(_), Value::Integer(n)) = (&*node, &v) {
        v = Value::Float(*n as f64);
    }
    *node = v;
    Ok(())
}

/// Preset or file, then overrides in order.
pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let base = match (file, preset) {
        (Some(p), _) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        (None, name) => {
            let name = name.unwrap_or("desk");
            let cfg = ExperimentConfig::preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset `{name}` (available: {})",
                    ExperimentConfig::PRESETS.join(", ")
                ))
            })?;
            to_toml(&cfg)?
        }
    };
    override_text(&base, overrides)
}

/// Overrides applied to an existing config.
pub fn with_overrides(cfg: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    override_text(&to_toml(cfg)?, overrides)
}

fn override_text(base: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut tree: Value = toml::from_str(base).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let cfg: ExperimentConfig = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
