//! `key=value` config files. Each pair becomes `--key=value` placed right
//! after the subcommand name, ahead of the user's own flags, so the command
//! line wins and unknown keys are rejected by the normal flag parser.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::UsageError;

pub fn read_pairs(path: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    parse_pairs(&text)
}

pub fn parse_pairs(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected key=value, got `{line}`", k + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", k + 1)).into());
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

const VALUED_GLOBALS: [&str; 3] = ["--threads", "--config", "--data-dir"];

/// Value of `--config` wherever it appears.
pub fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut found = None;
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if tok == "--" {
            break;
        }
        if tok == "--config" {
            found = argv.get(i + 1).map(PathBuf::from);
            i += 2;
        } else if let Some(v) = tok.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
            i += 1;
        } else {
            i += 1;
        }
    }
    found
}

/// Index of the first subcommand token in `argv`, skipping the values of
/// the global flags that take one.
fn subcommand_index(argv: &[OsString], names: &[&str]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if names.contains(&tok.as_ref()) {
            return Some(i);
        }
        i += if VALUED_GLOBALS.contains(&tok.as_ref()) { 2 } else { 1 };
    }
    None
}

pub fn inject(argv: &[OsString], subcommands: &[&str], pairs: &[(String, String)]) -> Vec<OsString> {
    let at = subcommand_index(argv, subcommands).map_or(argv.len(), |i| i + 1);
    let mut out: Vec<OsString> = argv[..at].to_vec();
    out.extend(pairs.iter().map(|(k, v)| OsString::from(format!("--{k}={v}"))));
    out.extend_from_slice(&argv[at..]);
    out
}
