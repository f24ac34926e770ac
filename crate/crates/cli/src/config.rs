//! `--config` support: a JSON object whose keys are flag names (with or
//! without leading dashes, `_` and `-` interchangeable). Its entries are
//! spliced in ahead of the command-line flags, so the command line wins.

use std::path::PathBuf;

use serde_json::Value;
use spikecov::{Error, Result};

const SUBCOMMANDS: &[&str] =
    &["simulate", "spectrum", "nfactors", "test", "cluster", "mc-size", "mc-power", "mc-clt", "preprocess"];

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn value_text(key: &str, v: &Value) -> Result<Option<String>> {
    Ok(match v {
        Value::Null => None,
        Value::Bool(_) => return Err(Error::Config(format!("config key '{key}': boolean flags are not supported"))),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => {
            let parts = items
                .iter()
                .map(|x| match x {
                    Value::Number(n) => Ok(n.to_string()),
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(Error::Config(format!("config key '{key}': list items must be numbers or strings"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Some(parts.join(","))
        }
        Value::Object(_) => return Err(Error::Config(format!("config key '{key}': nested objects are not supported"))),
    })
}

/// Flags from the config file as `--name value` pairs.
pub fn config_args(text: &str) -> Result<Vec<String>> {
    let root: Value = serde_json::from_str(text)?;
    let Value::Object(map) = root else {
        return Err(Error::Config("config file must hold a JSON object".into()));
    };
    let mut out = Vec::new();
    for (key, v) in &map {
        let name = key.trim_start_matches('-').replace('_', "-");
        if name == "config" {
            return Err(Error::Config("config files cannot include other config files".into()));
        }
        if let Some(text) = value_text(key, v)? {
            out.push(format!("--{name}"));
            out.push(text);
        }
    }
    Ok(out)
}

/// Insert config-file flags right after the subcommand name.
pub fn merge_config(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv) else { return Ok(argv) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let extra = config_args(&text)?;
    let Some(pos) = argv.iter().skip(1).position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let at = pos + 2;
    let mut merged = argv[..at].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&argv[at..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_from_json() {
        let args = config_args(r#"{"tau": 1, "boot": 300, "in_a": "a.csv", "t": [400, 800], "k": null}"#).unwrap();
        assert_eq!(args, vec!["--boot", "300", "--in-a", "a.csv", "--t", "400,800", "--tau", "1"]);
        assert!(config_args("[1]").is_err());
        assert!(config_args(r#"{"x": {"y": 1}}"#).is_err());
    }

    #[test]
    fn splice_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3}"#).unwrap();
        let argv: Vec<String> =
            ["spikecov", "--config", p.to_str().unwrap(), "test", "--seed", "9"].iter().map(|s| s.to_string()).collect();
        let merged = merge_config(argv).unwrap();
        assert_eq!(&merged[3..], &["test", "--seed", "3", "--seed", "9"]);
    }
}
