use std::cell::Cell;

use super::params::{BoundParams, Layout};
use super::ModelError;
use crate::data::WAIT;
use crate::tensor::{DropoutKey, Tensor};

/// Training-time dropout. Each call site draws the next key from a counter
/// seeded per sentence, so masks are reproducible.
#[derive(Debug)]
pub struct Dropout {
    pub p: f64,
    pub seed: u64,
    counter: Cell<u64>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            seed,
            counter: Cell::new(0),
        }
    }

    fn next_key(&self) -> DropoutKey {
        let call = self.counter.get();
        self.counter.set(call + 1);
        DropoutKey {
            seed: self.seed,
            call,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    fn zeros(hidden: usize) -> Self {
        Self {
            h: Tensor::zeros(&[hidden]),
            c: Tensor::zeros(&[hidden]),
        }
    }
}

/// Forward encoder output for a source prefix: top-layer hidden vectors for
/// positions `1..=len()` plus the per-layer carries after the last one.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    pub hidden: Vec<Tensor>,
    pub carries: Vec<LstmState>,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    pub layers: Vec<LstmState>,
    /// Previous attentional vector, fed back as input.
    pub feed: Tensor,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Log-probabilities over the target vocabulary (including `<wait>`).
    pub log_probs: Tensor,
    pub attention: Tensor,
    pub state: DecoderState,
}

/// Dot attention over the first `g` encoder positions. Returns the context
/// vector and the attention weights.
pub fn attention_context(
    query: &Tensor,
    hidden: &[Tensor],
    g: usize,
) -> Result<(Tensor, Tensor), ModelError> {
    if g == 0 || g > hidden.len() {
        return Err(ModelError::PrefixOutOfRange {
            g,
            available: hidden.len(),
        });
    }
    let refs: Vec<&Tensor> = hidden[..g].iter().collect();
    let memory = Tensor::stack(&refs)?;
    let scores = memory.matmul(query)?;
    let weights = scores.softmax();
    let context = weights.matmul(&memory)?;
    Ok((context, weights))
}

/// The encoder-decoder evaluated against one set of bound parameters.
pub struct Network<'a> {
    params: &'a BoundParams,
    dropout: Option<&'a Dropout>,
}

impl<'a> Network<'a> {
    pub fn new(params: &'a BoundParams, dropout: Option<&'a Dropout>) -> Self {
        Self { params, dropout }
    }

    fn layout(&self) -> Layout {
        self.params.layout
    }

    fn hidden_dim(&self) -> usize {
        self.params.config.hidden_dim
    }

    fn drop(&self, x: Tensor) -> Result<Tensor, ModelError> {
        match self.dropout {
            Some(d) => Ok(x.dropout(d.p, Some(d.next_key()))?),
            None => Ok(x),
        }
    }

    fn lstm(&self, w: &Tensor, b: &Tensor, x: &Tensor, s: &LstmState) -> Result<LstmState, ModelError> {
        let h = self.hidden_dim();
        let z = Tensor::concat(&[x, &s.h])?.matmul(w)?.add(b)?;
        let i = z.narrow(0, h)?.sigmoid();
        let f = z.narrow(h, h)?.sigmoid();
        let g = z.narrow(2 * h, h)?.tanh();
        let o = z.narrow(3 * h, h)?.sigmoid();
        let c = f.mul(&s.c)?.add(&i.mul(&g)?)?;
        let h = o.mul(&c.tanh())?;
        Ok(LstmState { h, c })
    }

    /// Runs the stacked cells on one input; returns the new carries.
    fn stack(
        &self,
        weights: impl Fn(usize) -> (usize, usize),
        input: Tensor,
        carries: &[LstmState],
    ) -> Result<Vec<LstmState>, ModelError> {
        let mut x = input;
        let mut out = Vec::with_capacity(carries.len());
        for (l, s) in carries.iter().enumerate() {
            if l > 0 {
                x = self.drop(x)?;
            }
            let (wi, bi) = weights(l);
            let next = self.lstm(self.params.at(wi), self.params.at(bi), &x, s)?;
            x = next.h.clone();
            out.push(next);
        }
        Ok(out)
    }

    pub fn empty_encoder(&self) -> EncoderStates {
        EncoderStates {
            hidden: Vec::new(),
            carries: vec![LstmState::zeros(self.hidden_dim()); self.params.config.layers],
        }
    }

    /// Encodes further source positions until `upto` are available. Earlier
    /// positions are never touched.
    pub fn extend(&self, states: &mut EncoderStates, source: &[usize], upto: usize) -> Result<(), ModelError> {
        if upto == 0 || upto > source.len() {
            return Err(ModelError::PrefixOutOfRange {
                g: upto,
                available: source.len(),
            });
        }
        let lay = self.layout();
        while states.len() < upto {
            let token = source[states.len()];
            let x = self.drop(self.params.at(Layout::SRC_EMBED).embedding_row(token)?)?;
            let carries = self.stack(|l| (lay.enc_w(l), lay.enc_b(l)), x, &states.carries)?;
            states.hidden.push(carries.last().expect("at least one layer").h.clone());
            states.carries = carries;
        }
        Ok(())
    }

    /// Encodes the first `upto` source tokens.
    pub fn encode_prefix(&self, source: &[usize], upto: usize) -> Result<EncoderStates, ModelError> {
        let mut states = self.empty_encoder();
        self.extend(&mut states, source, upto)?;
        Ok(states)
    }

    /// Zero carries and a zero input-feeding vector.
    pub fn initial_decoder(&self) -> DecoderState {
        let h = self.hidden_dim();
        DecoderState {
            layers: vec![LstmState::zeros(h); self.params.config.layers],
            feed: Tensor::zeros(&[h]),
        }
    }

    /// One decoder step with `g` source tokens visible. `<wait>` gets
    /// probability exactly zero when `g == source_len` or when waiting is
    /// not allowed.
    pub fn decode_step(
        &self,
        prev_token: usize,
        state: &DecoderState,
        encoder: &EncoderStates,
        g: usize,
        source_len: usize,
        allow_wait: bool,
    ) -> Result<StepOutput, ModelError> {
        let lay = self.layout();
        let emb = self.drop(self.params.at(Layout::TGT_EMBED).embedding_row(prev_token)?)?;
        let input = Tensor::concat(&[&emb, &state.feed])?;
        let layers = self.stack(|l| (lay.dec_w(l), lay.dec_b(l)), input, &state.layers)?;
        let d = layers.last().expect("at least one layer").h.clone();
        let (context, attention) = attention_context(&d, &encoder.hidden, g)?;
        let feed = Tensor::concat(&[&context, &d])?
            .matmul(self.params.at(lay.w_c()))?
            .tanh();
        let mut logits = self
            .drop(feed.clone())?
            .matmul(self.params.at(lay.w_s()))?
            .add(self.params.at(lay.b_s()))?;
        if !allow_wait || g >= source_len {
            let v = logits.numel();
            let mut mask = vec![0.0; v];
            mask[WAIT] = f64::NEG_INFINITY;
            logits = logits.add(&Tensor::new(&[v], mask)?)?;
        }
        Ok(StepOutput {
            log_probs: logits.log_softmax(),
            attention,
            state: DecoderState { layers, feed },
        })
    }
}
