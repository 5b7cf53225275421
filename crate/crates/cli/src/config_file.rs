//! `key=value` configuration files. Keys are long flag names without the
//! leading dashes; a flag given on the command line always wins.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Context;
use clap::{ArgAction, CommandFactory};

use crate::cli::Cli;
use crate::UsageError;

/// Parse `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(UsageError(format!("config line {}: expected key=value", i + 1)));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// The value of `--config` in `argv`, if any.
fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn given(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let with_value = format!("--{long}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_value)
    })
}

pub struct Expanded {
    pub argv: Vec<OsString>,
    /// Path and contents of the configuration file, when one was read.
    pub file: Option<(PathBuf, Vec<u8>)>,
}

/// Append flags from the configuration file named by `--config` for every
/// key the chosen subcommand (or the global options) accepts and that the
/// command line does not already set.
pub fn expand(argv: Vec<OsString>) -> anyhow::Result<Expanded> {
    let Some(path) = config_path(&argv) else {
        return Ok(Expanded { argv, file: None });
    };
    let bytes = std::fs::read(&path).with_context(|| format!("reading config file {}", path.display()))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| UsageError(format!("{} is not UTF-8", path.display())))?;
    let entries = parse(&text)?;

    let root = Cli::command();
    let sub = argv
        .iter()
        .skip(1)
        .find_map(|a| root.find_subcommand(a.to_string_lossy().as_ref()).cloned());
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if key == "config" || key == "manifest" {
            return Err(UsageError(format!("config key {key:?} can only be given on the command line")).into());
        }
        let arg = sub
            .iter()
            .flat_map(|s| s.get_arguments())
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()));
        let Some(arg) = arg else {
            let scope = sub.as_ref().map_or("morphproj".to_string(), |s| s.get_name().to_string());
            return Err(UsageError(format!("config key {key:?} is not an option of {scope}")).into());
        };
        if given(&argv, &key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => extra.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                _ => return Err(UsageError(format!("config key {key:?} expects true or false, got {value:?}")).into()),
            },
            ArgAction::Count => {
                let n: usize = value
                    .parse()
                    .map_err(|_| UsageError(format!("config key {key:?} expects a count, got {value:?}")))?;
                extra.extend((0..n).map(|_| OsString::from(format!("--{key}"))));
            }
            _ => extra.push(format!("--{key}={value}").into()),
        }
    }
    let mut argv = argv;
    // Keep anything after `--` in place.
    let at = argv.iter().position(|a| a == "--").unwrap_or(argv.len());
    argv.splice(at..at, extra);
    Ok(Expanded {
        argv,
        file: Some((path, bytes)),
    })
}
