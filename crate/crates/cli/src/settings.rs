//! Layered settings: command-line flags over a `key = value` file over defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "seeds",
    "bins",
    "layers",
    "dmodel",
    "heads",
    "mask",
    "feature-mode",
    "norm-scope",
    "frozen",
    "epochs",
    "lr",
    "sequences",
    "batch",
    "sequencing",
    "out",
    "attack",
    "benign",
    "subnets",
    "vectors",
    "top",
    "scenario",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    path: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("--config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!("{path}:{}: expected `key = value`, found `{line}`", i + 1)));
            };
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("{path}:{}: unknown key `{key}`", i + 1)));
            }
            entries.insert(key, (value.trim().to_string(), i + 1));
        }
        Ok(Self {
            path: path.to_string(),
            entries,
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.entries
            .get(key)
            .map(|(v, line)| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("{}:{line}: invalid value for `{key}`: {e}", self.path)))
            })
            .transpose()
    }

    /// Flag value if given, else the file's, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

/// Comma-separated list, for config-file values.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{}`: {e}", p.trim())))
            .collect::<Result<Vec<T>, _>>()
            .map(List)
    }
}
