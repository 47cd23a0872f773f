use std::collections::HashMap;
use std::hash::Hash;

use super::EvalError;

const MAX_ORDER: usize = 4;

/// Corpus-level n-gram statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Hash + Eq + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn add<T: Hash + Eq + Clone>(&mut self, hyp: &[T], reference: &[T]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.matches[n - 1] += h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum::<usize>();
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    /// Geometric mean of the modified precisions times the brevity penalty,
    /// on a 0-100 scale. Any zero precision gives 0 (no smoothing).
    pub fn score(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let log_precision: f64 = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| (m as f64 / t as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        100.0 * bp * log_precision.exp()
    }
}

/// Corpus BLEU-4 with brevity penalty over token sequences.
pub fn bleu<T: Hash + Eq + Clone>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64, EvalError> {
    if hypotheses.is_empty() {
        return Err(EvalError::Invalid("BLEU of an empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(EvalError::Invalid(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(h, r);
    }
    Ok(stats.score())
}
