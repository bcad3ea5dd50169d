//! Config files become `--key value` tokens placed ahead of the user's own
//! arguments, so explicit flags always win and unknown keys fail exactly like
//! unknown flags.

use std::fs;
use std::path::Path;

use serde_json::Value;

pub const SUBCOMMANDS: [&str; 4] = ["select", "verify", "experiment", "gen"];

/// Reads a flat `key = value` file, or a JSON object when the content starts with `{`.
pub fn load(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    if text.trim_start().starts_with('{') {
        parse_json(&text)
    } else {
        parse_flat(&text)
    }
}

pub fn parse_flat(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected 'key = value'", n + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("config line {}: empty key", n + 1));
        }
        pairs.push((key.to_string(), unquote(value.trim()).to_string()));
    }
    Ok(pairs)
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

pub fn parse_json(text: &str) -> Result<Vec<(String, String)>, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON config: {e}"))?;
    let Value::Object(map) = value else {
        return Err("JSON config must be an object".into());
    };
    map.into_iter()
        .map(|(k, v)| Ok((k.clone(), scalar(&k, &v)?)))
        .collect()
}

fn scalar(key: &str, v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::Array(_) | Value::Object(_) => Err(format!("config key '{key}': nested values are not supported")),
                other => scalar(key, other),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|parts| parts.join(",")),
        Value::Null | Value::Object(_) => Err(format!("config key '{key}': unsupported value")),
    }
}

/// Returns `args` with the config's tokens inserted right after the subcommand.
pub fn expand(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if a == "--config" {
            config = args.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else if a == "--threads" {
            i += 2;
            continue;
        } else if sub.is_none() && SUBCOMMANDS.contains(&a.as_str()) {
            sub = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(at)) = (config, sub) else {
        return Ok(args);
    };
    let mut tokens = Vec::new();
    for (key, value) in load(Path::new(&path))? {
        let flag = key.replace('_', "-");
        if flag == "config" {
            return Err("config files cannot nest --config".into());
        }
        tokens.push(format!("--{flag}"));
        tokens.push(value);
    }
    let mut out = args[..=at].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}
