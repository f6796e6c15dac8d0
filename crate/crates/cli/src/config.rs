//! Flat key=value config files and the effective-config echo.

use std::ffi::OsString;
use std::fmt;
use std::path::Path;

use anyhow::Context;
use clap::{ArgAction, CommandFactory};
use serde::Serialize;
use serde_json::Value;

use crate::Cli;

/// An error in how the tool was invoked rather than in the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Global flags that take a value, for locating the subcommand in argv.
const GLOBAL_VALUED: [&str; 3] = ["--config", "--threads", "--seed"];

/// `(key, value)` pairs in file order.
pub fn parse_config(text: &str, origin: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            usage(format!("{}:{}: expected key=value, found {line:?}", origin.display(), n + 1))
        })?;
        let k = k.trim();
        if k.is_empty() || k == "config" {
            return Err(usage(format!("{}:{}: invalid key {k:?}", origin.display(), n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Index just past the subcommand (and a positional action for `baseline`).
fn insertion_point(argv: &[OsString]) -> Option<(usize, String)> {
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy();
        if GLOBAL_VALUED.contains(&s.as_ref()) {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            return Some((i + 1, s.into_owned()));
        }
    }
    None
}

/// Splices the `--config` file into argv right after the subcommand name,
/// skipping keys whose flag is already given on the command line.
pub fn merge_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
    let pairs = parse_config(&text, path)?;
    let Some((at, sub)) = insertion_point(&argv) else {
        return Ok(argv);
    };
    let root = Cli::command();
    let Some(cmd) = root.find_subcommand(&sub) else {
        return Ok(argv);
    };
    let given = |k: &str| {
        argv[1..].iter().any(|a| {
            let a = a.to_string_lossy();
            a.strip_prefix("--")
                .is_some_and(|rest| rest == k || rest.strip_prefix(k).is_some_and(|r| r.starts_with('=')))
        })
    };
    let mut extra: Vec<OsString> = Vec::new();
    for (k, v) in pairs {
        if given(&k) {
            continue;
        }
        let flag = cmd
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(k.as_str()));
        let is_switch = flag.is_some_and(|a| matches!(a.get_action(), ArgAction::SetTrue));
        if is_switch {
            match v.as_str() {
                "true" => extra.push(format!("--{k}").into()),
                "false" => {}
                _ => return Err(usage(format!("config key {k:?}: expected true or false, found {v:?}"))),
            }
        } else {
            extra.push(format!("--{k}").into());
            extra.push(v.into());
        }
    }
    let mut out = argv[..at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

fn render(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Array(a) if a.is_empty() => None,
        Value::Array(a) => Some(a.iter().filter_map(render).collect::<Vec<_>>().join(",")),
        other => Some(other.to_string()),
    }
}

/// Prints the resolved settings to stderr as key=value lines.
pub fn echo(command: &str, globals: &[(&str, String)], args: &impl Serialize) -> anyhow::Result<()> {
    let value = serde_json::to_value(args).context("serializing effective config")?;
    let mut lines = vec![format!("# clbench {command} effective config")];
    lines.extend(globals.iter().map(|(k, v)| format!("{k}={v}")));
    if let Value::Object(map) = value {
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        for k in keys {
            if let Some(v) = render(&map[k]) {
                lines.push(format!("{k}={v}"));
            }
        }
    }
    eprintln!("{}", lines.join("\n"));
    Ok(())
}
