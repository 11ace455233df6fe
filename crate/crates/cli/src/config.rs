//! Flat `key=value` run configuration: file values overridden by flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use binrec::kv::KvFile;
use binrec::teacher::Hyperparams;
use binrec::{Error, Result};

/// Keys other than hyperparameters that a config file may set.
pub const RUN_KEYS: [&str; 19] = [
    "input",
    "format",
    "min_user",
    "min_item",
    "split",
    "subsample",
    "data",
    "teacher",
    "student",
    "codes",
    "out",
    "k",
    "user",
    "dataset",
    "model",
    "repetitions",
    "items",
    "users",
    "bits",
];

pub fn build_tag() -> String {
    format!("binrec {} ({})", env!("CARGO_PKG_VERSION"), env!("BINREC_GIT_DESCRIBE"))
}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    values: KvFile,
}

fn check_key(key: &str) -> Result<()> {
    if Hyperparams::KEYS.contains(&key) || RUN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key `{key}`")))
    }
}

impl RunConfig {
    /// Reads `path` if given. Every key must be known.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let values = match path {
            Some(p) => KvFile::read(p).map_err(|e| match e {
                Error::Format { path, message } => Error::Config(format!("{}: {message}", path.display())),
                Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
                other => other,
            })?,
            None => KvFile::new(),
        };
        for (k, _) in values.iter() {
            check_key(k)?;
        }
        Ok(Self { values })
    }

    /// Flag override; `None` leaves the file value in place.
    pub fn set(&mut self, key: &str, value: Option<impl Display>) {
        debug_assert!(check_key(key).is_ok(), "{key}");
        if let Some(v) = value {
            self.values.set(key, v);
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            Some(_) => self.values.parse_value(key).map(Some),
            None => Ok(None),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing `{}` (flag or config key `{key}`)", key.replace('_', "-"))))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.require::<PathBuf>(key)
    }

    /// Comma-separated list value.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        let Some(raw) = self.values.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{s}`: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// `base` with every hyperparameter key present here applied, then validated.
    pub fn hyper(&self, base: Hyperparams) -> Result<Hyperparams> {
        let mut h = base;
        for (k, v) in self.values.iter() {
            if Hyperparams::KEYS.contains(&k) {
                h.set_key(k, v)?;
            }
        }
        h.validate()?;
        Ok(h)
    }

    /// Everything a run resolved to: command, build tag, run keys in the
    /// order they were set, then the full hyperparameter set if one applies.
    pub fn resolved(&self, command: &str, hyper: Option<&Hyperparams>) -> KvFile {
        let mut out = KvFile::new();
        out.set("command", command).set("build", build_tag());
        for (k, v) in self.values.iter() {
            if RUN_KEYS.contains(&k) {
                out.set(k, v);
            }
        }
        match hyper {
            Some(h) => {
                for (k, v) in h.to_kv().iter() {
                    out.set(k, v);
                }
            }
            None => {
                for (k, v) in self.values.iter() {
                    if Hyperparams::KEYS.contains(&k) {
                        out.set(k, v);
                    }
                }
            }
        }
        out
    }
}
