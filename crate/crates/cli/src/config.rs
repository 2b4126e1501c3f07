//! Flat key-value run configuration. One plain-text file, dotted key
//! namespacing, `key = value` per line, `#` starts a comment. Values
//! from the file can be overridden per key with `--set key=value`, and
//! the dedicated flags (`--seed`, `--checkpoint`, ...) override those.
//! Every command is a pure function of the resulting settings, which is
//! what makes reruns reproducible.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

/// Every key a config file or `--set` may mention. Unknown keys are
/// rejected up front so typos fail loudly instead of silently falling
/// back to defaults.
pub const KNOWN_KEYS: &[&str] = &[
    "data.vocab_cap",
    "eval.compare",
    "eval.include_dummy",
    "gradcheck.embed",
    "gradcheck.hidden",
    "gradcheck.relations",
    "gradcheck.seed",
    "gradcheck.sentences",
    "gradcheck.vocab",
    "grid.embed",
    "grid.hidden",
    "model.embed",
    "model.hidden",
    "model.variant",
    "paths.checkpoint",
    "paths.dev",
    "paths.epoch_log",
    "paths.labels",
    "paths.manifest",
    "paths.predictions",
    "paths.test",
    "paths.train",
    "paths.vocab",
    "synth.block_size",
    "synth.dev_docs",
    "synth.max_len",
    "synth.min_len",
    "synth.peak_transition",
    "synth.relations",
    "synth.seed",
    "synth.sentences_per_doc",
    "synth.test_docs",
    "synth.train_docs",
    "train.clip_threshold",
    "train.dropout",
    "train.enum_cap",
    "train.include_dummy",
    "train.learning_rate",
    "train.max_epochs",
    "train.objective",
    "train.seed",
];

/// User mistakes exit 1; broken internal invariants exit 2.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(msg) => write!(f, "{msg}"),
            CliError::Internal(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<drlm_core::error::Error> for CliError {
    fn from(e: drlm_core::error::Error) -> CliError {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn user_error(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn check_known(key: &str) -> CliResult<()> {
    if KNOWN_KEYS.binary_search(&key).is_err() {
        return Err(user_error(format!("unknown config key {key:?}")));
    }
    Ok(())
}

impl Settings {
    pub fn new() -> Settings {
        Settings::default()
    }

    /// Parses a config file. Later lines override earlier ones.
    pub fn load_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| user_error(format!("cannot read config {}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                user_error(format!(
                    "{}:{}: expected key = value, got {raw:?}",
                    path.display(),
                    i + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            check_known(key)
                .map_err(|e| user_error(format!("{}:{}: {e}", path.display(), i + 1)))?;
            self.values.insert(key.to_string(), value.to_string());
        }
        Ok(())
    }

    /// Applies one `--set key=value` override.
    pub fn apply_set(&mut self, spec: &str) -> CliResult<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| user_error(format!("--set expects key=value, got {spec:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        check_known(key)?;
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    /// A path the command reads; must exist.
    pub fn input_path(&self, key: &str) -> CliResult<PathBuf> {
        let path = self.required_path(key)?;
        if !path.exists() {
            return Err(user_error(format!(
                "{key}: file {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    /// A path the command writes; only has to be named.
    pub fn output_path(&self, key: &str) -> CliResult<PathBuf> {
        self.required_path(key)
    }

    fn required_path(&self, key: &str) -> CliResult<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| user_error(format!("config key {key} is required by this command")))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> CliResult<usize> {
        self.parse_or(key, default)
    }

    pub fn u64_or(&self, key: &str, default: u64) -> CliResult<u64> {
        self.parse_or(key, default)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> CliResult<f64> {
        self.parse_or(key, default)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(user_error(format!(
                "{key}: expected true or false, got {other:?}"
            ))),
        }
    }

    /// Comma-separated list of sizes, e.g. `grid.hidden = 32,48,64`.
    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(text) => text
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse::<usize>()
                        .map_err(|_| user_error(format!("{key}: {item:?} is not a size")))
                })
                .collect(),
        }
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.get(key) {
            None => Ok(default),
            Some(text) => text.parse::<T>().map_err(|_| {
                user_error(format!(
                    "{key}: cannot parse {text:?} as {}",
                    std::any::type_name::<T>()
                ))
            }),
        }
    }
}
