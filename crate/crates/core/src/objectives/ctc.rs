use std::collections::HashMap;

use super::ObjectiveError;
use crate::data::WAIT;
use crate::tensor::Tensor;

/// Largest number of paths [`ctc_bruteforce`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Merges adjacent repeats, then drops `<wait>`.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    collapse_with_blank(path, WAIT)
}

pub fn collapse_with_blank(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(path.len());
    let mut prev = None;
    for &t in path {
        if prev != Some(t) && t != blank {
            out.push(t);
        }
        prev = Some(t);
    }
    out
}

/// Shortest path length that can collapse to `labels`: one step per label
/// plus a separating blank between equal neighbours.
pub fn min_path_len(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC negative log-likelihood. `value` is `+inf` (and carries no graph)
/// when no path of the given length collapses to the labels; `diagnostic`
/// then says why.
#[derive(Debug, Clone)]
pub struct CtcLoss {
    pub value: Tensor,
    pub diagnostic: Option<String>,
}

/// `-log sum_{paths collapsing to reference} prod_t p_t(path_t)` with
/// `<wait>` as the blank.
pub fn ctc_loss(log_probs: &[Tensor], reference: &[usize]) -> Result<CtcLoss, ObjectiveError> {
    ctc_loss_with_blank(log_probs, reference, WAIT)
}

/// Log-space forward recursion over the blank-extended label sequence,
/// built from differentiable tensor operations so gradients reach the step
/// log-probabilities through the ordinary backward pass.
pub fn ctc_loss_with_blank(
    log_probs: &[Tensor],
    reference: &[usize],
    blank: usize,
) -> Result<CtcLoss, ObjectiveError> {
    let steps = log_probs.len();
    if reference.is_empty() {
        return Err(ObjectiveError::Invalid("empty CTC reference".into()));
    }
    if reference.contains(&blank) {
        return Err(ObjectiveError::Invalid("reference contains the blank token".into()));
    }
    let needed = min_path_len(reference);
    if steps < needed {
        return Ok(CtcLoss {
            value: Tensor::scalar(f64::INFINITY),
            diagnostic: Some(format!(
                "{steps} steps cannot emit {} labels ({needed} steps needed)",
                reference.len()
            )),
        });
    }
    // Extended labels: blank, y1, blank, y2, ..., yJ, blank.
    let ext: Vec<usize> = (0..2 * reference.len() + 1)
        .map(|s| if s % 2 == 0 { blank } else { reference[s / 2] })
        .collect();
    let width = ext.len();
    let emit_index: Vec<Option<usize>> = ext.iter().map(|&l| Some(l)).collect();
    let shift1: Vec<Option<usize>> = (0..width).map(|s| s.checked_sub(1)).collect();
    let shift2: Vec<Option<usize>> = (0..width)
        .map(|s| (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]).then(|| s - 2))
        .collect();
    let first: Vec<Option<usize>> = (0..width).map(|s| (s < 2).then_some(ext[s])).collect();

    let mut alpha = log_probs[0].gather(&first, f64::NEG_INFINITY)?;
    for lp in &log_probs[1..] {
        let stay = alpha.clone();
        let one = alpha.gather(&shift1, f64::NEG_INFINITY)?;
        let two = alpha.gather(&shift2, f64::NEG_INFINITY)?;
        let reach = Tensor::stack(&[&stay, &one, &two])?.logsumexp(0)?;
        alpha = reach.add(&lp.gather(&emit_index, f64::NEG_INFINITY)?)?;
    }
    let total = alpha
        .gather(&[Some(width - 1), Some(width - 2)], f64::NEG_INFINITY)?
        .logsumexp(0)?;
    let diagnostic = (total.item() == f64::NEG_INFINITY)
        .then(|| "every path has zero probability".to_owned());
    Ok(CtcLoss {
        value: total.scale(-1.0),
        diagnostic,
    })
}

fn path_count(probs: &[Vec<f64>]) -> Result<usize, ObjectiveError> {
    let size = probs.first().map_or(1, Vec::len);
    let paths = (size as f64).powi(probs.len() as i32);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(ObjectiveError::TooLarge {
            paths,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if probs.iter().any(|p| p.len() != size) {
        return Err(ObjectiveError::Invalid("step distributions differ in size".into()));
    }
    Ok(paths as usize)
}

/// Visits every path with its probability.
fn for_each_path(probs: &[Vec<f64>], mut visit: impl FnMut(&[usize], f64)) -> Result<(), ObjectiveError> {
    let total = path_count(probs)?;
    let size = probs.first().map_or(1, Vec::len);
    let mut path = vec![0usize; probs.len()];
    for n in 0..total {
        let mut rest = n;
        let mut p = 1.0;
        for (t, slot) in path.iter_mut().enumerate() {
            *slot = rest % size;
            rest /= size;
            p *= probs[t][*slot];
        }
        visit(&path, p);
    }
    Ok(())
}

/// Enumerates every length-T path and returns `-ln` of the mass of those
/// collapsing to `reference` (`+inf` when none does).
pub fn ctc_bruteforce(probs: &[Vec<f64>], reference: &[usize], blank: usize) -> Result<f64, ObjectiveError> {
    let mut mass = 0.0;
    for_each_path(probs, |path, p| {
        if collapse_with_blank(path, blank) == reference {
            mass += p;
        }
    })?;
    Ok(-mass.ln())
}

/// Path mass grouped by collapsed outcome.
pub fn outcome_masses(probs: &[Vec<f64>], blank: usize) -> Result<HashMap<Vec<usize>, f64>, ObjectiveError> {
    let mut out: HashMap<Vec<usize>, f64> = HashMap::new();
    for_each_path(probs, |path, p| {
        *out.entry(collapse_with_blank(path, blank)).or_default() += p;
    })?;
    Ok(out)
}
