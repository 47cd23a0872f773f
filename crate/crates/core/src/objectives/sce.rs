use super::ObjectiveError;
use crate::data::WAIT;
use crate::model::Rollout;
use crate::tensor::Tensor;

/// Cross-entropy of the written reference tokens. Steps that emitted
/// `<wait>` contribute nothing; every other WRITE must carry the next
/// reference token.
pub fn sce_masked(rollout: &Rollout, reference: &[usize]) -> Result<Tensor, ObjectiveError> {
    let emissions = rollout.trace.emissions();
    if emissions.len() != rollout.log_probs.len() {
        return Err(ObjectiveError::Misaligned(format!(
            "{} writes but {} distributions",
            emissions.len(),
            rollout.log_probs.len()
        )));
    }
    let mut terms = Vec::with_capacity(reference.len());
    let mut next = 0;
    for (&token, lp) in emissions.iter().zip(&rollout.log_probs) {
        if token == WAIT {
            continue;
        }
        if reference.get(next) != Some(&token) {
            return Err(ObjectiveError::Misaligned(format!(
                "write {token} at reference position {next}"
            )));
        }
        next += 1;
        terms.push(lp.gather(&[Some(token)], 0.0)?);
    }
    if next != reference.len() {
        return Err(ObjectiveError::Misaligned(format!(
            "{next} of {} reference tokens written",
            reference.len()
        )));
    }
    let refs: Vec<&Tensor> = terms.iter().collect();
    Ok(Tensor::concat(&refs)?.sum().scale(-1.0))
}
