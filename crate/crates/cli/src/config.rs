//! `key = value` config files and layered resolution.
//!
//! Keys are namespaced by section (`gan.lr`, `inpaint.lambda`, ...). A
//! command reads only the sections it uses; within those, unknown keys are
//! errors. Values are parsed as JSON when possible (`0.5`, `true`, `"x"`)
//! and taken as bare strings otherwise (`toy_faces`).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Parsed config file: section → key → value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, Map<String, Value>>,
}

pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`", n + 1))?;
            let (section, name) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| anyhow!("config line {}: key `{}` needs a section prefix such as `gan.`", n + 1, key.trim()))?;
            cfg.sections
                .entry(section.to_string())
                .or_default()
                .insert(name.to_string(), parse_value(value.trim()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn section(&self, name: &str) -> Option<&Map<String, Value>> {
        self.sections.get(name)
    }
}

/// Applies `file` then `flags` on top of `defaults` and returns the
/// resolved value.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    section: &str,
    file: Option<&ConfigFile>,
    flags: &[(&str, Option<Value>)],
) -> Result<T> {
    let mut map = match serde_json::to_value(defaults)? {
        Value::Object(m) => m,
        _ => bail!("config section {section} is not a record"),
    };
    if let Some(entries) = file.and_then(|f| f.section(section)) {
        for (k, v) in entries {
            if !map.contains_key(k) {
                let valid: Vec<&str> = map.keys().map(String::as_str).collect();
                bail!(
                    "unknown config key `{section}.{k}`; valid keys: {}",
                    valid.join(", ")
                );
            }
            map.insert(k.clone(), v.clone());
        }
    }
    for (k, v) in flags {
        if let Some(v) = v {
            map.insert((*k).to_string(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(map))
        .with_context(|| format!("invalid `{section}` configuration"))
}

/// Flag value as an optional JSON value.
pub fn flag<T: Serialize>(v: &Option<T>) -> Option<Value> {
    v.as_ref().map(|x| serde_json::to_value(x).expect("flag values serialize"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Demo {
        lr: f64,
        name: String,
        on: bool,
    }

    #[test]
    fn precedence_is_defaults_file_flags() {
        let d = Demo { lr: 1.0, name: "a".into(), on: false };
        let f = ConfigFile::parse("# comment\ndemo.lr = 0.5\ndemo.name = toy_faces\nother.x = 3\n").unwrap();
        let r: Demo = resolve(&d, "demo", Some(&f), &[("on", Some(Value::Bool(true)))]).unwrap();
        assert_eq!(r, Demo { lr: 0.5, name: "toy_faces".into(), on: true });
        let r: Demo = resolve(&d, "demo", Some(&f), &[("lr", Some(Value::from(2.0)))]).unwrap();
        assert_eq!(r.lr, 2.0);
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(ConfigFile::parse("lr = 1").is_err());
        assert!(ConfigFile::parse("demo.lr 1").is_err());
        let d = Demo { lr: 1.0, name: "a".into(), on: false };
        let f = ConfigFile::parse("demo.typo = 1").unwrap();
        let err = resolve(&d, "demo", Some(&f), &[]).unwrap_err().to_string();
        assert!(err.contains("demo.typo"), "{err}");
        let f = ConfigFile::parse("demo.lr = fast").unwrap();
        assert!(resolve(&d, "demo", Some(&f), &[]).is_err());
    }
}
