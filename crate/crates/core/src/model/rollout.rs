//! Decoding loops: teacher-forced and free-running, for fixed schedules and
//! for the adaptive `<wait>` policy.

use super::network::Network;
use super::schedule::{waitk_g, DecodeTrace, Policy};
use super::ModelError;
use crate::data::{BOS, EOS, WAIT};
use crate::tensor::Tensor;

/// A decoding run together with the per-WRITE-step log-probabilities, still
/// attached to the computation graph when parameters were bound for training.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub trace: DecodeTrace,
    pub log_probs: Vec<Tensor>,
}

/// What drives the emitted tokens of an adaptive rollout.
#[derive(Debug, Clone, Copy)]
pub enum RolloutMode<'r> {
    /// Reference tokens are written whenever the model does not wait.
    Train { reference: &'r [usize] },
    /// The argmax token is written; stops at EOS or after `max_t` writes.
    Free { max_t: usize },
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn probs_of(log_probs: &Tensor, keep: bool) -> Option<Vec<f64>> {
    keep.then(|| log_probs.data().iter().map(|v| v.exp()).collect())
}

/// Default cap on writes for a training rollout.
pub fn default_train_max_t(source_len: usize, target_len: usize) -> usize {
    source_len + target_len + 1
}

/// Adaptive rollout. One source token is read up front; whenever the argmax
/// is `<wait>` (and unread source remains) the step records a `<wait>`
/// emission, one more token is read and `<wait>` becomes the next decoder
/// input. Otherwise the reference token (training) or the argmax token
/// (free decoding) is written and fed back.
pub fn rollout_adaptive(
    net: &Network<'_>,
    source: &[usize],
    mode: RolloutMode<'_>,
    keep_probs: bool,
) -> Result<Rollout, ModelError> {
    let source_len = source.len();
    if source_len == 0 {
        return Err(ModelError::EmptySource);
    }
    let max_t = match mode {
        RolloutMode::Train { reference } => {
            if reference.is_empty() {
                return Err(ModelError::EmptyReference);
            }
            default_train_max_t(source_len, reference.len())
        }
        RolloutMode::Free { max_t } => max_t.max(1),
    };
    let mut trace = DecodeTrace::new(Policy::Adaptive, source_len);
    let mut log_probs = Vec::new();
    let mut g = 1;
    let mut encoder = net.encode_prefix(source, g)?;
    trace.read(g);
    let mut state = net.initial_decoder();
    let mut prev = BOS;
    let mut consumed = 0;
    loop {
        if log_probs.len() == max_t {
            match mode {
                RolloutMode::Train { .. } => return Err(ModelError::MaxStepsExceeded { max_t }),
                RolloutMode::Free { .. } => break,
            }
        }
        let out = net.decode_step(prev, &state, &encoder, g, source_len, true)?;
        let best = argmax(out.log_probs.data());
        let probs = probs_of(&out.log_probs, keep_probs);
        log_probs.push(out.log_probs);
        state = out.state;
        if best == WAIT && g < source_len {
            trace.write(WAIT, g, probs);
            g += 1;
            net.extend(&mut encoder, source, g)?;
            trace.read(g);
            prev = WAIT;
            continue;
        }
        match mode {
            RolloutMode::Train { reference } => {
                let token = reference[consumed];
                consumed += 1;
                trace.write(token, g, probs);
                prev = token;
                if consumed == reference.len() {
                    break;
                }
            }
            RolloutMode::Free { .. } => {
                trace.write(best, g, probs);
                prev = best;
                if best == EOS {
                    break;
                }
            }
        }
    }
    Ok(Rollout { trace, log_probs })
}

fn schedule_g(policy: Policy, j: usize, source_len: usize) -> Result<usize, ModelError> {
    match policy {
        Policy::FullSentence => Ok(source_len),
        Policy::WaitK(k) if k >= 1 => Ok(waitk_g(j, k, source_len)),
        Policy::WaitK(k) => Err(ModelError::InvalidPolicy(format!("wait-k needs k >= 1, got {k}"))),
        Policy::Adaptive => Err(ModelError::InvalidPolicy(
            "adaptive decoding uses rollout_adaptive".into(),
        )),
    }
}

/// Fixed-schedule decoding. With a reference, the reference is fed back
/// (teacher forcing) and every reference token is written; otherwise the
/// argmax token is written until EOS or `max_len` writes. `<wait>` is
/// masked out at every step.
pub fn decode_fixed(
    net: &Network<'_>,
    source: &[usize],
    policy: Policy,
    reference: Option<&[usize]>,
    max_len: usize,
    keep_probs: bool,
) -> Result<Rollout, ModelError> {
    let source_len = source.len();
    if source_len == 0 {
        return Err(ModelError::EmptySource);
    }
    let steps = match reference {
        Some([]) => return Err(ModelError::EmptyReference),
        Some(r) => r.len(),
        None => max_len.max(1),
    };
    let mut trace = DecodeTrace::new(policy, source_len);
    let mut log_probs = Vec::with_capacity(steps);
    let mut encoder = net.empty_encoder();
    let mut state = net.initial_decoder();
    let mut prev = BOS;
    for j in 1..=steps {
        let g = schedule_g(policy, j, source_len)?;
        while encoder.len() < g {
            let next = encoder.len() + 1;
            net.extend(&mut encoder, source, next)?;
            trace.read(encoder.len());
        }
        let out = net.decode_step(prev, &state, &encoder, g, source_len, false)?;
        let best = argmax(out.log_probs.data());
        let token = reference.map_or(best, |r| r[j - 1]);
        trace.write(token, g, probs_of(&out.log_probs, keep_probs));
        log_probs.push(out.log_probs);
        state = out.state;
        prev = token;
        if reference.is_none() && token == EOS {
            break;
        }
    }
    Ok(Rollout { trace, log_probs })
}

/// Free decoding under any policy.
pub fn decode(
    net: &Network<'_>,
    source: &[usize],
    policy: Policy,
    max_len: usize,
    keep_probs: bool,
) -> Result<Rollout, ModelError> {
    match policy {
        Policy::Adaptive => rollout_adaptive(net, source, RolloutMode::Free { max_t: max_len }, keep_probs),
        _ => decode_fixed(net, source, policy, None, max_len, keep_probs),
    }
}
