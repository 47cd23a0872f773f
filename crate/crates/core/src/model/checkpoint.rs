//! Checkpoint files: a text manifest terminated by a `data` line, followed
//! by every parameter as little-endian `f32`, concatenated in manifest order.
//!
//! ```text
//! simulmt-checkpoint 1
//! hyper source_vocab 25
//! ...
//! meta mode adaptive
//! epoch 7
//! val_loss 0.412
//! param src_embed 25 64
//! ...
//! data
//! <binary>
//! ```

use std::path::Path;
use std::sync::Arc;

use super::params::{ModelConfig, ModelParams, Param};
use super::ModelError;

const MAGIC: &str = "simulmt-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub epoch: usize,
    pub val_loss: f64,
    /// Free-form run settings (mode, k, alpha, ...), one `meta` line each.
    pub meta: Vec<(String, String)>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.params.config;
        let mut head = format!("{MAGIC}\n");
        for (k, v) in [
            ("source_vocab", c.source_vocab.to_string()),
            ("target_vocab", c.target_vocab.to_string()),
            ("embed_dim", c.embed_dim.to_string()),
            ("hidden_dim", c.hidden_dim.to_string()),
            ("layers", c.layers.to_string()),
            ("init_scale", c.init_scale.to_string()),
            ("wait_bias", c.wait_bias.to_string()),
        ] {
            head.push_str(&format!("hyper {k} {v}\n"));
        }
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        head.push_str(&format!("epoch {}\nval_loss {}\n", self.epoch, self.val_loss));
        for p in &self.params.params {
            let dims: Vec<String> = p.shape.iter().map(ToString::to_string).collect();
            head.push_str(&format!("param {} {}\n", p.name, dims.join(" ")));
        }
        head.push_str("data\n");
        let mut bytes = head.into_bytes();
        for p in &self.params.params {
            for &v in p.value.iter() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("manifest is not terminated by a `data` line"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("manifest is not UTF-8"))?;
            pos += end + 1;
            if line == "data" {
                break;
            }
            lines.push(line);
        }
        if lines.first() != Some(&MAGIC) {
            return Err(bad("missing header"));
        }
        let mut hyper = std::collections::HashMap::new();
        let mut meta = Vec::new();
        let mut epoch = None;
        let mut val_loss = None;
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        for line in &lines[1..] {
            let mut parts = line.split(' ');
            let tag = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad number in {line:?}")));
            match (tag, rest.as_slice()) {
                ("hyper", [k, v]) => {
                    hyper.insert(k.to_string(), v.to_string());
                }
                ("meta", [k, v @ ..]) => meta.push((k.to_string(), v.join(" "))),
                ("epoch", [v]) => epoch = Some(num(v)?),
                ("val_loss", [v]) => {
                    val_loss = Some(v.parse::<f64>().map_err(|_| bad(format!("bad loss in {line:?}")))?)
                }
                ("param", [name, dims @ ..]) if !dims.is_empty() => {
                    let dims = dims.iter().map(|d| num(d)).collect::<Result<Vec<_>, _>>()?;
                    shapes.push((name.to_string(), dims));
                }
                _ => return Err(bad(format!("unrecognised manifest line {line:?}"))),
            }
        }
        let get = |k: &str| -> Result<usize, ModelError> {
            let v = hyper.get(k).ok_or_else(|| bad(format!("missing hyper {k}")))?;
            v.parse().map_err(|_| bad(format!("bad hyper {k} {v}")))
        };
        let get_real = |k: &str, default: f64| -> Result<f64, ModelError> {
            hyper.get(k).map_or(Ok(default), |v| v.parse().map_err(|_| bad(format!("bad hyper {k} {v}"))))
        };
        let defaults = ModelConfig::new(0, 0);
        let config = ModelConfig {
            source_vocab: get("source_vocab")?,
            target_vocab: get("target_vocab")?,
            embed_dim: get("embed_dim")?,
            hidden_dim: get("hidden_dim")?,
            layers: get("layers")?,
            init_scale: get_real("init_scale", defaults.init_scale)?,
            wait_bias: get_real("wait_bias", defaults.wait_bias)?,
        };
        let expected = ModelParams::shapes(&config);
        if expected != shapes {
            return Err(bad("parameter list does not match the hyperparameters"));
        }
        let body = &bytes[pos..];
        let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if body.len() != total * 4 {
            return Err(bad(format!("expected {} data bytes, found {}", total * 4, body.len())));
        }
        let mut values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        let params = shapes
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                Param {
                    name,
                    shape,
                    value: Arc::new(values.by_ref().take(n).collect()),
                }
            })
            .collect();
        Ok(Self {
            params: ModelParams { config, params },
            epoch: epoch.ok_or_else(|| bad("missing epoch"))?,
            val_loss: val_loss.ok_or_else(|| bad("missing val_loss"))?,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_resolution() {
        let config = ModelConfig {
            embed_dim: 3,
            hidden_dim: 2,
            ..ModelConfig::new(6, 7)
        };
        let ck = Checkpoint {
            params: ModelParams::init(config, 3),
            epoch: 4,
            val_loss: 1.25,
            meta: vec![("mode".into(), "adaptive".into()), ("alpha".into(), "0.05".into())],
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.epoch, 4);
        assert_eq!(back.val_loss, 1.25);
        assert_eq!(back.meta("mode"), Some("adaptive"));
        for (a, b) in ck.params.flatten().iter().zip(back.params.flatten()) {
            assert_eq!(*a as f32 as f64, b);
        }
    }

    #[test]
    fn truncated_data_rejected() {
        let config = ModelConfig {
            embed_dim: 2,
            hidden_dim: 2,
            ..ModelConfig::new(6, 6)
        };
        let ck = Checkpoint {
            params: ModelParams::init(config, 1),
            epoch: 0,
            val_loss: 0.0,
            meta: vec![],
        };
        let mut bytes = ck.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
