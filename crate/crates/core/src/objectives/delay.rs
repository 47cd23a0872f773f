use super::ObjectiveError;
use crate::data::WAIT;
use crate::model::Rollout;
use crate::tensor::Tensor;

/// Lower bound on `1 - w_t`, keeping the penalty finite.
pub const DELAY_FLOOR: f64 = 1e-7;

/// `-sum_t log(1 - w_t)` over delaying steps: `w_t` is the probability of
/// `<wait>` at a step that emitted it, or the probability of the previous
/// token at a step that repeated it. Other steps contribute nothing.
pub fn delay_penalty(rollout: &Rollout) -> Result<Tensor, ObjectiveError> {
    let emissions = rollout.trace.emissions();
    if emissions.len() != rollout.log_probs.len() {
        return Err(ObjectiveError::Misaligned(format!(
            "{} writes but {} distributions",
            emissions.len(),
            rollout.log_probs.len()
        )));
    }
    let mut terms = Vec::new();
    for (t, (&token, lp)) in emissions.iter().zip(&rollout.log_probs).enumerate() {
        let delayed = if token == WAIT {
            Some(WAIT)
        } else if t > 0 && emissions[t - 1] == token {
            Some(token)
        } else {
            None
        };
        if let Some(id) = delayed {
            let w = lp.gather(&[Some(id)], f64::NEG_INFINITY)?.exp();
            terms.push(w.affine(-1.0, 1.0).clamp_min(DELAY_FLOOR).log());
        }
    }
    if terms.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let refs: Vec<&Tensor> = terms.iter().collect();
    Ok(Tensor::concat(&refs)?.sum().scale(-1.0))
}
