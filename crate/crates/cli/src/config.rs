//! Plain-text `key=value` configuration files and `--set` overrides.

use std::path::Path;

use densefuse_core::pipeline::{Ablation, ABLATION_FLAGS};
use densefuse_core::FusionConfig;

use crate::error::CliError;

/// Applies every `key=value` line of `text` on top of `base`. Blank lines
/// and `#` comments are ignored; the same key may appear more than once, the
/// last one wins.
pub fn parse_config(
    text: &str,
    file: &Path,
    base: FusionConfig<f64>,
) -> Result<FusionConfig<f64>, CliError> {
    let mut cfg = base;
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let offset = line_start;
        line_start += line.len();
        let lead = line.len() - line.trim_start().len();
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(CliError::parse(
                file,
                offset + lead,
                format!("expected key=value, found `{body}`"),
            ));
        };
        cfg.set(key.trim(), value.trim())
            .map_err(|e| CliError::parse(file, offset + lead, e.to_string()))?;
    }
    cfg.validate().map_err(|source| CliError::Config {
        file: file.to_path_buf(),
        source,
    })?;
    Ok(cfg)
}

/// Applies `--set key=value` overrides. Errors are usage errors.
pub fn apply_sets(
    mut cfg: FusionConfig<f64>,
    sets: &[String],
) -> Result<FusionConfig<f64>, CliError> {
    for s in sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects key=value, found `{s}`")))?;
        cfg.set(key.trim(), value.trim())
            .map_err(|e| CliError::usage(format!("--set {s}: {e}")))?;
    }
    cfg.validate()
        .map_err(|e| CliError::usage(format!("invalid configuration: {e}")))?;
    Ok(cfg)
}

/// Flips every named stage switch from its default.
pub fn parse_ablation(list: &[String]) -> Result<Ablation, CliError> {
    let mut a = Ablation::default();
    for name in list
        .iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        if !a.toggle(name) {
            return Err(CliError::usage(format!(
                "unknown --ablate flag `{name}` (expected one of {})",
                ABLATION_FLAGS.join(", ")
            )));
        }
    }
    Ok(a)
}
