//! Training objectives: masked cross-entropy, wait-token CTC, the delay
//! penalty and their weighted sum.

mod ctc;
mod delay;
mod sce;

pub use ctc::{
    collapse, collapse_with_blank, ctc_bruteforce, ctc_loss, ctc_loss_with_blank, min_path_len,
    outcome_masses, CtcLoss, BRUTE_FORCE_LIMIT,
};
pub use delay::{delay_penalty, DELAY_FLOOR};
pub use sce::sce_masked;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("trace and reference disagree: {0}")]
    Misaligned(String),
    #[error("brute-force enumeration of {paths:e} paths exceeds the limit of {limit:e}")]
    TooLarge { paths: f64, limit: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// The three loss terms and their combination.
#[derive(Debug, Clone)]
pub struct LossBundle {
    pub ent: Tensor,
    pub ctc: Tensor,
    pub del: Tensor,
    pub alpha: f64,
    pub total: Tensor,
}

impl LossBundle {
    pub fn new(ent: Tensor, ctc: Tensor, del: Tensor, alpha: f64) -> Result<Self, ObjectiveError> {
        let total = combined_loss(&ent, &ctc, &del, alpha)?;
        Ok(Self {
            ent,
            ctc,
            del,
            alpha,
            total,
        })
    }

    /// Cross-entropy only (fixed schedules).
    pub fn sce_only(ent: Tensor) -> Result<Self, ObjectiveError> {
        Self::new(ent, Tensor::scalar(0.0), Tensor::scalar(0.0), 0.0)
    }

    pub fn values(&self) -> [f64; 4] {
        [self.ent.item(), self.ctc.item(), self.del.item(), self.total.item()]
    }
}

/// `ent + ctc + alpha * del`.
pub fn combined_loss(ent: &Tensor, ctc: &Tensor, del: &Tensor, alpha: f64) -> Result<Tensor, ObjectiveError> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(ObjectiveError::Invalid(format!("delay weight must be >= 0, got {alpha}")));
    }
    Ok(ent.add(ctc)?.add(&del.scale(alpha))?)
}
