//! `--config` files: `name=value` lines naming long flags of the subcommand.
//! Blank lines and lines starting with `#` are ignored. Values are spliced in
//! as flags right after the subcommand, except those already given on the
//! command line.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Command};

fn config_value(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v);
        }
    }
    None
}

fn given(args: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    let with_value = format!("--{long}=");
    args.iter().any(|a| *a == flag || a.starts_with(&with_value))
}

pub fn parse_pairs(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected name=value", origin.display(), n + 1);
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Returns `args` with config-file values inserted.
pub fn expand(args: Vec<String>, root: &Command) -> Result<Vec<String>> {
    let Some(path) = config_value(&args) else {
        return Ok(args);
    };
    let path = Path::new(path);
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let pairs = parse_pairs(&text, path)?;
    let Some(sub_name) = args.get(1).filter(|a| !a.starts_with('-')) else {
        bail!("--config must follow a subcommand");
    };
    let Some(sub) = root.find_subcommand(sub_name) else {
        // let clap report the unknown subcommand
        return Ok(args);
    };

    let mut injected = Vec::new();
    for (key, value) in pairs {
        if key == "config" {
            bail!("{}: `config` cannot be set from a config file", path.display());
        }
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .with_context(|| format!("{}: unknown setting `{key}` for `{sub_name}`", path.display()))?;
        if given(&args, &key) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            let on: bool = value
                .parse()
                .with_context(|| format!("{}: `{key}` takes true or false", path.display()))?;
            if on {
                injected.push(format!("--{key}"));
            }
        } else {
            injected.push(format!("--{key}={value}"));
        }
    }
    let mut out = args[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}
