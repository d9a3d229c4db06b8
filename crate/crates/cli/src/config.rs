//! Optional TOML defaults. Keys are the long flag names, e.g.
//! `apply-prob = 0.6`; a flag given on the command line wins.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Config {
    table: toml::Table,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(Self { table })
    }

    /// `flag` if given, else the config value under `key`, else `None`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.table.get(key) {
            None => Ok(None),
            Some(value) => value
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn required<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("missing required option --{key}")))
    }
}
