//! Layered settings: command-line flag, then `SPECTOD_*` environment variable, then the
//! TOML config file, then the built-in default. Every resolved value remembers its source
//! so output directories can record how a run was configured.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "SPECTOD_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Flag,
    Env,
    File,
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setting {
    pub value: String,
    pub source: Source,
}

/// Run metadata written next to every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_file: Option<PathBuf>,
    pub settings: BTreeMap<String, Setting>,
}

pub struct Settings {
    file: toml::Table,
    path: Option<PathBuf>,
    env: Box<dyn Fn(&str) -> Option<String>>,
    resolved: BTreeMap<String, Setting>,
}

fn env_name(key: &str) -> String {
    format!("SPECTOD_{}", key.to_uppercase().replace('-', "_"))
}

fn toml_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(items) => items.iter().map(toml_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

impl Settings {
    /// Loads the config file given by flag, else by `SPECTOD_CONFIG`, else none.
    pub fn load(flag: Option<&Path>) -> anyhow::Result<Self> {
        Self::with_env(
            flag,
            Box::new(|k| std::env::var(k).ok().filter(|v| !v.is_empty())),
        )
    }

    /// Like [`Settings::load`] with an explicit environment lookup.
    pub fn with_env(
        flag: Option<&Path>,
        env: Box<dyn Fn(&str) -> Option<String>>,
    ) -> anyhow::Result<Self> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| env(CONFIG_ENV).map(PathBuf::from));
        let file = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?
            }
            None => toml::Table::new(),
        };
        Ok(Settings {
            file,
            path,
            env,
            resolved: BTreeMap::new(),
        })
    }

    /// Resolves `key` (kebab-case) through the layers and records the winner.
    pub fn get(
        &mut self,
        key: &str,
        flag: Option<String>,
        default: Option<&str>,
    ) -> Option<String> {
        let file_key = key.replace('-', "_");
        let found = flag
            .map(|v| (v, Source::Flag))
            .or_else(|| (self.env)(&env_name(key)).map(|v| (v, Source::Env)))
            .or_else(|| {
                self.file
                    .get(&file_key)
                    .or_else(|| self.file.get(key))
                    .map(|v| (toml_text(v), Source::File))
            })
            .or_else(|| default.map(|d| (d.to_string(), Source::Default)));
        let (value, source) = found?;
        self.resolved.insert(
            key.to_string(),
            Setting {
                value: value.clone(),
                source,
            },
        );
        Some(value)
    }

    /// Resolves and parses a value, naming the key and source in the error.
    pub fn parse<T: std::str::FromStr>(
        &mut self,
        key: &str,
        flag: Option<String>,
        default: Option<&str>,
    ) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.get(key, flag, default) else {
            return Ok(None);
        };
        let source = self.resolved[key].source;
        raw.parse::<T>()
            .map(Some)
            .map_err(|e| anyhow::anyhow!("invalid {key} `{raw}` (from {source:?}): {e}"))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        self.get(key, flag.map(|p| p.display().to_string()), None)
            .map(PathBuf::from)
    }

    /// A `[table]` from the config file, flattened to text values.
    pub fn file_table(&self, name: &str) -> BTreeMap<String, String> {
        match self.file.get(name) {
            Some(toml::Value::Table(t)) => {
                t.iter().map(|(k, v)| (k.clone(), toml_text(v))).collect()
            }
            _ => BTreeMap::new(),
        }
    }

    pub fn record(&mut self, key: &str, value: impl ToString, source: Source) {
        self.resolved.insert(
            key.to_string(),
            Setting {
                value: value.to_string(),
                source,
            },
        );
    }

    pub fn header(&self, command: &str) -> RunHeader {
        RunHeader {
            tool: "spectod".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_file: self.path.clone(),
            settings: self.resolved.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "workers = 3\nmode = \"gold_state\"\nseed = 5\n").unwrap();
        let env: Box<dyn Fn(&str) -> Option<String>> =
            Box::new(|k| (k == "SPECTOD_MODE").then(|| "policy".to_string()));
        let mut s = Settings::with_env(Some(&cfg), env).unwrap();
        assert_eq!(
            s.get("workers", Some("8".into()), Some("1")).as_deref(),
            Some("8")
        );
        assert_eq!(
            s.get("mode", None, Some("policy")).as_deref(),
            Some("policy")
        );
        assert_eq!(s.get("seed", None, Some("13")).as_deref(), Some("5"));
        assert_eq!(s.get("limit", None, Some("0")).as_deref(), Some("0"));
        let h = s.header("run");
        assert_eq!(h.settings["workers"].source, Source::Flag);
        assert_eq!(h.settings["mode"].source, Source::Env);
        assert_eq!(h.settings["seed"].source, Source::File);
        assert_eq!(h.settings["limit"].source, Source::Default);
    }
}
