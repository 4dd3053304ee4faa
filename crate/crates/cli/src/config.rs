//! Scenario config loading, canonical form and digest.

use std::fs;
use std::path::Path;

use cacc_core::sim::ScenarioConfig;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn parse(text: &str, origin: &str) -> Result<ScenarioConfig, CliError> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
        // serde_json appends "at line L column C" to its message
        CliError::Config(format!("{origin}: {e}"))
    })?;
    cfg.validate()
        .map_err(|e| CliError::Config(format!("{origin}: invalid config: {e}")))?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

/// Compact JSON in declaration order; equal configs give equal bytes.
pub fn canonical(cfg: &ScenarioConfig) -> String {
    serde_json::to_string(cfg).expect("scenario configs always serialize")
}

pub fn digest(cfg: &ScenarioConfig) -> String {
    Sha256::digest(canonical(cfg).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
