//! Greedy decoding of whole corpora, first-output latency and corpus BLEU.

mod bleu;

pub use bleu::{bleu, BleuStats};

use thiserror::Error;

use crate::model::{decode, DecodeTrace, ModelError, ModelParams, Network, Policy};
use crate::par;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("line {line}: empty source sentence")]
    EmptySource { line: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Decodes every source sentence greedily under `policy`. `max_len` bounds
/// the output: fixed schedules write at most `2 * max_len` tokens, the
/// adaptive policy at most `I + 2 * max_len` steps including `<wait>`.
pub fn decode_corpus(
    params: &ModelParams,
    sources: &[Vec<usize>],
    policy: Policy,
    max_len: usize,
) -> Result<Vec<DecodeTrace>, EvalError> {
    if let Some(i) = sources.iter().position(Vec::is_empty) {
        return Err(EvalError::EmptySource { line: i + 1 });
    }
    let traces = par::map(sources, |_, src| -> Result<DecodeTrace, EvalError> {
        let bound = params.bind(false)?;
        let net = Network::new(&bound, None);
        let cap = match policy {
            Policy::Adaptive => src.len() + 2 * max_len,
            _ => 2 * max_len,
        };
        Ok(decode(&net, src, policy, cap, false)?.trace)
    });
    traces.into_iter().collect()
}

/// Per-sentence first-output delays with their mean and population
/// standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub delays: Vec<usize>,
    pub mean: f64,
    pub std: f64,
}

impl LatencyReport {
    pub fn from_delays(delays: Vec<usize>) -> Result<Self, EvalError> {
        if delays.is_empty() {
            return Err(EvalError::Invalid("latency of an empty corpus".into()));
        }
        let n = delays.len() as f64;
        let mean = delays.iter().map(|&d| d as f64).sum::<f64>() / n;
        let var = delays.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            delays,
            mean,
            std: var.sqrt(),
        })
    }
}

/// See [`DecodeTrace::first_output_delay`] for the per-sentence definition.
pub fn latency(traces: &[DecodeTrace]) -> Result<LatencyReport, EvalError> {
    LatencyReport::from_delays(traces.iter().map(DecodeTrace::first_output_delay).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub bleu: f64,
    pub latency: LatencyReport,
    pub sentences: usize,
}

impl MetricsReport {
    /// `bleu latency_mean latency_std n_sentences`, tab separated.
    pub fn to_tsv(&self) -> String {
        format!(
            "{:.2}\t{:.2}\t{:.2}\t{}",
            self.bleu, self.latency.mean, self.latency.std, self.sentences
        )
    }
}

/// Decodes, scores against `references` (token ids, EOS optional) and
/// measures latency.
pub fn evaluate(
    params: &ModelParams,
    sources: &[Vec<usize>],
    references: &[Vec<usize>],
    policy: Policy,
    max_len: usize,
) -> Result<(MetricsReport, Vec<DecodeTrace>), EvalError> {
    let traces = decode_corpus(params, sources, policy, max_len)?;
    let hyps: Vec<Vec<usize>> = traces.iter().map(DecodeTrace::output).collect();
    let refs: Vec<Vec<usize>> = references
        .iter()
        .map(|r| r.iter().copied().take_while(|&t| t != crate::data::EOS).collect())
        .collect();
    let report = MetricsReport {
        bleu: bleu(&hyps, &refs)?,
        latency: latency(&traces)?,
        sentences: traces.len(),
    };
    Ok((report, traces))
}
