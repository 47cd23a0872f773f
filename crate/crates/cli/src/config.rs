//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use simulmt::data::CorpusFilter;
use simulmt::tensor::Precision;
use simulmt::trainer::{Mode, TrainConfig};

use crate::Failure;

/// Every accepted key with its default. An empty default means "unset".
const KEYS: &[(&str, &str)] = &[
    ("train_source", ""),
    ("train_target", ""),
    ("valid_source", ""),
    ("valid_target", ""),
    ("source_bpe", ""),
    ("target_bpe", ""),
    ("source_vocab_size", "4000"),
    ("target_vocab_size", "4000"),
    ("max_len", "60"),
    ("max_ratio", "9"),
    ("decode_max_len", "60"),
    ("mode", "adaptive"),
    ("k", "3"),
    ("alpha", "0"),
    ("learning_rate", "0.001"),
    ("clip_norm", "5"),
    ("dropout", "0.3"),
    ("batch_size", "64"),
    ("embed_dim", "512"),
    ("hidden_dim", "512"),
    ("layers", "2"),
    ("max_epochs", "10"),
    ("seed", "1"),
    ("precision", "f32"),
    ("wait_bias", "3"),
    ("init_scale", "0.1"),
    ("threads", "0"),
    ("log_wallclock", "false"),
];

pub const FILE_NAME: &str = "config.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::new("config", msg)
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_error(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| config_error(format!("line {}: {}", n + 1, e.message)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Failure> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_owned();
                Ok(())
            }
            None => Err(config_error(format!("unknown key `{key}`"))),
        }
    }

    /// Applies a `key=value` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), Failure> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| config_error(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf, Failure> {
        self.path(key).ok_or_else(|| config_error(format!("`{key}` is required")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| config_error(format!("`{key}` = `{}`: {e}", self.get(key))))
    }

    pub fn filter(&self) -> Result<CorpusFilter, Failure> {
        Ok(CorpusFilter {
            max_len: self.parse_value("max_len")?,
            max_ratio: self.parse_value("max_ratio")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let precision = match self.get("precision") {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => return Err(config_error(format!("`precision` must be f32 or f64, got `{other}`"))),
        };
        let cfg = TrainConfig {
            mode: self.parse_value::<Mode>("mode")?,
            k: self.parse_value("k")?,
            alpha: self.parse_value("alpha")?,
            learning_rate: self.parse_value("learning_rate")?,
            clip_norm: self.parse_value("clip_norm")?,
            dropout: self.parse_value("dropout")?,
            batch_size: self.parse_value("batch_size")?,
            embed_dim: self.parse_value("embed_dim")?,
            hidden_dim: self.parse_value("hidden_dim")?,
            layers: self.parse_value("layers")?,
            max_epochs: self.parse_value("max_epochs")?,
            seed: self.parse_value("seed")?,
            precision,
            wait_bias: self.parse_value("wait_bias")?,
            init_scale: self.parse_value("init_scale")?,
            log_wallclock: self.parse_value("log_wallclock")?,
        };
        cfg.validate().map_err(|e| config_error(e.to_string()))?;
        Ok(cfg)
    }

    /// One `key = value` line per key, sorted.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = RunConfig::parse("# run\nmode = waitk\nk=5\n\n").unwrap();
        assert_eq!(c.get("mode"), "waitk");
        assert_eq!(c.get("alpha"), "0");
        c.set("k", "2").unwrap();
        assert_eq!(c.train_config().unwrap().k, 2);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::parse("mode = waitk\nbogus = 1\n").unwrap_err();
        assert!(e.message.contains("line 2") && e.message.contains("bogus"));
        assert!(RunConfig::parse("no equals sign").is_err());
        assert!(RunConfig::default().set_pair("bogus=1").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        let c = RunConfig::parse("mode = sideways").unwrap();
        assert!(c.train_config().is_err());
        let c = RunConfig::parse("precision = f16").unwrap();
        assert!(c.train_config().is_err());
    }
}
