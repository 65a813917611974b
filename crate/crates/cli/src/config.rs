//! Flat `key = value` config files.
//!
//! Each entry becomes a `--key value` flag placed right after the
//! subcommand, ahead of the flags typed on the command line, so explicit
//! flags win. Keys may use `_` or `-`; `true` turns on a switch and `false`
//! leaves it off.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key = value, got {raw:?}", i + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("line {}: invalid key {:?}", i + 1, k.trim());
        }
        entries.push((key, v.trim().to_string()));
    }
    Ok(entries)
}

fn to_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut flags = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "false" => {}
            "true" => flags.push(format!("--{k}").into()),
            _ => {
                flags.push(format!("--{k}").into());
                flags.push(v.into());
            }
        }
    }
    flags
}

/// Removes `--config PATH` (or `--config=PATH`) from `args` and splices the
/// file's entries in after the subcommand.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                let Some(p) = it.next() else {
                    bail!("--config needs a path");
                };
                config = Some(p);
            }
            Some(s) if s.starts_with("--config=") => config = Some(s["--config=".len()..].into()),
            _ => rest.push(a),
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let flags = to_flags(&read_config(Path::new(&path))?);
    // Program name, then the first non-flag token is the subcommand.
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 2)
        .unwrap_or(rest.len());
    let mut out: Vec<OsString> = rest[..sub].to_vec();
    out.extend(flags);
    out.extend_from_slice(&rest[sub..]);
    Ok(out)
}
