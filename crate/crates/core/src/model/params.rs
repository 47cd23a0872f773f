use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::WAIT;
use crate::tensor::{Result, Tensor};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Half-width of the uniform initialisation interval.
    pub init_scale: f64,
    /// Initial output bias of the `<wait>` logit.
    pub wait_bias: f64,
}

impl ModelConfig {
    pub fn new(source_vocab: usize, target_vocab: usize) -> Self {
        Self {
            source_vocab,
            target_vocab,
            embed_dim: 512,
            hidden_dim: 512,
            layers: 2,
            init_scale: 0.1,
            wait_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Arc<Vec<f64>>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Every trainable weight of the translation model, in a fixed order.
///
/// Layout: source and target embeddings, `layers` encoder LSTM cells,
/// `layers` decoder LSTM cells (the first one also receives the previous
/// attentional vector), the attention combine matrix `[2H, H]` and the
/// output projection `[H, V]` with its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: Vec<Param>,
}

/// Indices of named parameters inside [`ModelParams::params`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub layers: usize,
}

impl Layout {
    pub const SRC_EMBED: usize = 0;
    pub const TGT_EMBED: usize = 1;

    pub fn enc_w(&self, l: usize) -> usize {
        2 + 2 * l
    }
    pub fn enc_b(&self, l: usize) -> usize {
        3 + 2 * l
    }
    pub fn dec_w(&self, l: usize) -> usize {
        2 + 2 * self.layers + 2 * l
    }
    pub fn dec_b(&self, l: usize) -> usize {
        3 + 2 * self.layers + 2 * l
    }
    pub fn w_c(&self) -> usize {
        2 + 4 * self.layers
    }
    pub fn w_s(&self) -> usize {
        3 + 4 * self.layers
    }
    pub fn b_s(&self) -> usize {
        4 + 4 * self.layers
    }
}

impl ModelParams {
    /// Shapes in storage order.
    pub fn shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let mut out = vec![
            ("src_embed".to_owned(), vec![config.source_vocab, e]),
            ("tgt_embed".to_owned(), vec![config.target_vocab, e]),
        ];
        for l in 0..config.layers {
            let input = if l == 0 { e } else { h };
            out.push((format!("enc.{l}.w"), vec![input + h, 4 * h]));
            out.push((format!("enc.{l}.b"), vec![4 * h]));
        }
        for l in 0..config.layers {
            let input = if l == 0 { e + h } else { h };
            out.push((format!("dec.{l}.w"), vec![input + h, 4 * h]));
            out.push((format!("dec.{l}.b"), vec![4 * h]));
        }
        out.push(("attn.w_c".to_owned(), vec![2 * h, h]));
        out.push(("out.w_s".to_owned(), vec![h, config.target_vocab]));
        out.push(("out.b_s".to_owned(), vec![config.target_vocab]));
        out
    }

    /// Uniform initialisation in `[-init_scale, init_scale]`; LSTM biases are
    /// zero except the forget gate (1.0), and the output bias is zero except
    /// the `<wait>` entry, which starts at `config.wait_bias`.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_dim;
        let params = Self::shapes(&config)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let value: Vec<f64> = if name.ends_with(".b") {
                    (0..n).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect()
                } else if name == "out.b_s" {
                    (0..n).map(|i| if i == WAIT { config.wait_bias } else { 0.0 }).collect()
                } else {
                    (0..n)
                        .map(|_| rng.gen_range(-config.init_scale..=config.init_scale))
                        .collect()
                };
                Param {
                    name,
                    shape,
                    value: Arc::new(value),
                }
            })
            .collect();
        let mut p = Self { config, params };
        p.round_to_precision();
        p
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout {
            layers: self.config.layers,
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Rounds stored values to the current arithmetic precision.
    pub fn round_to_precision(&mut self) {
        if crate::tensor::precision() == crate::tensor::Precision::F32 {
            for p in &mut self.params {
                let v = Arc::make_mut(&mut p.value);
                v.iter_mut().for_each(|x| *x = *x as f32 as f64);
            }
        }
    }

    /// Graph leaves for one forward pass. With `track` set, every parameter
    /// accumulates a gradient.
    pub fn bind(&self, track: bool) -> std::result::Result<BoundParams, super::ModelError> {
        let tensors = self
            .params
            .iter()
            .map(|p| {
                if track {
                    Tensor::shared_leaf(&p.shape, Arc::clone(&p.value))
                } else {
                    Tensor::shared_const(&p.shape, Arc::clone(&p.value))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundParams {
            tensors,
            layout: self.layout(),
            config: self.config,
        })
    }

    /// All values flattened in storage order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }
}

/// Parameters bound into one computation graph.
pub struct BoundParams {
    pub(crate) tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
    pub config: ModelConfig,
}

impl BoundParams {
    pub(crate) fn at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Accumulated gradients in storage order; untouched parameters get zeros.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }
}
