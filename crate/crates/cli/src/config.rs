//! Optional `key = value` config files and the effective-config echo.
//!
//! Keys mirror the long flag names. Precedence is flag over file over
//! built-in default; the merged result is written to `config.echo` in the
//! run directory, and that file alone replays the run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rootsr::{Error, Result};

pub struct FileConfig {
    path: PathBuf,
    map: BTreeMap<String, String>,
}

impl FileConfig {
    /// Loads a config file, or an empty set when no path is given.
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig {
                path: PathBuf::new(),
                map: BTreeMap::new(),
            });
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected `key = value`, got {line:?}",
                    path.display(),
                    idx + 1
                )));
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig {
            path: path.to_path_buf(),
            map,
        })
    }

    /// Removes and parses one value; `None` when the file does not set it.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                Error::Config(format!(
                    "{}: bad value for {key}: {raw:?} ({e})",
                    self.path.display()
                ))
            }),
        }
    }

    /// Comma-separated list variant of [`FileConfig::take`].
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|e| {
                        Error::Config(format!(
                            "{}: bad value for {key}: {s:?} ({e})",
                            self.path.display()
                        ))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Rejects any key the command did not consume, to catch typos.
    pub fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.map.keys().map(String::as_str).collect();
        Err(Error::Config(format!(
            "{}: unknown config keys: {}",
            self.path.display(),
            keys.join(", ")
        )))
    }
}

/// Accumulates the effective configuration for the `config.echo` file.
#[derive(Default)]
pub struct Echo {
    lines: Vec<String>,
}

impl Echo {
    pub fn push(&mut self, key: &str, value: impl Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    /// Unset optional values stay absent, matching their default.
    pub fn push_opt(&mut self, key: &str, value: Option<impl Display>) {
        if let Some(v) = value {
            self.push(key, v);
        }
    }

    pub fn push_list(&mut self, key: &str, values: &[impl Display]) {
        if !values.is_empty() {
            let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            self.push(key, joined.join(", "));
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = dir.join("config.echo");
        std::fs::write(&path, self.lines.join("\n") + "\n").map_err(|e| Error::Io {
            path,
            source: e,
        })
    }
}
