//! Randomised self-check of the CTC loss: dynamic programme against path
//! enumeration, backprop against finite differences, and total path mass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simulmt::gradcheck::{central_differences, max_relative_error};
use simulmt::objectives::{ctc_bruteforce, ctc_loss_with_blank, outcome_masses};
use simulmt::tensor::{set_precision, Precision};
use simulmt::Tensor;

pub const VALUE_TOL: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;
const BLANK: usize = 0;

/// One random instance: step logits `[T, V]` and a reference over labels
/// `1..V` (0 is the blank).
#[derive(Debug, Clone)]
pub struct Instance {
    pub steps: usize,
    pub size: usize,
    pub logits: Vec<f64>,
    pub reference: Vec<usize>,
}

impl Instance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let steps = rng.gen_range(2..=6);
        let size = 1 + rng.gen_range(2..=3);
        let j = rng.gen_range(1..=3);
        Self {
            steps,
            size,
            logits: (0..steps * size).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            reference: (0..j).map(|_| rng.gen_range(1..size)).collect(),
        }
    }

    fn step_log_probs(&self, logits: &Tensor) -> Vec<Tensor> {
        let lp = logits.log_softmax();
        (0..self.steps)
            .map(|t| lp.narrow(t, 1).and_then(|r| r.reshape(&[self.size])).expect("row of [T, V]"))
            .collect()
    }

    fn loss(&self, logits: &Tensor) -> Tensor {
        ctc_loss_with_blank(&self.step_log_probs(logits), &self.reference, BLANK)
            .expect("valid instance")
            .value
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        let t = Tensor::new(&[self.steps, self.size], self.logits.clone()).expect("shape");
        self.step_log_probs(&t)
            .iter()
            .map(|lp| lp.data().iter().map(|v| v.exp()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub passed: usize,
    pub trials: usize,
    pub first_failure: Option<String>,
}

/// Checks one instance; `Err` describes the first violated property.
pub fn check(inst: &Instance) -> Result<(), String> {
    let probs = inst.probs();
    let brute = ctc_bruteforce(&probs, &inst.reference, BLANK).map_err(|e| e.to_string())?;
    let leaf = Tensor::leaf(&[inst.steps, inst.size], inst.logits.clone()).map_err(|e| e.to_string())?;
    let loss = inst.loss(&leaf);
    let dp = loss.item();
    let agree = if brute.is_infinite() {
        dp == f64::INFINITY
    } else {
        (dp - brute).abs() < VALUE_TOL
    };
    if !agree {
        return Err(format!("value dp={dp} brute={brute}"));
    }
    let mass: f64 = outcome_masses(&probs, BLANK).map_err(|e| e.to_string())?.values().sum();
    if (mass - 1.0).abs() >= VALUE_TOL {
        return Err(format!("mass {mass}"));
    }
    if dp.is_finite() {
        loss.backward().map_err(|e| e.to_string())?;
        let analytic = leaf.grad().unwrap_or_default();
        let numeric = central_differences(
            |x| inst.loss(&Tensor::new(&[inst.steps, inst.size], x.to_vec()).expect("shape")).item(),
            &inst.logits,
            FD_STEP,
        );
        let err = max_relative_error(&analytic, &numeric);
        if err >= GRAD_TOL {
            return Err(format!("gradient relative error {err:e}"));
        }
    }
    Ok(())
}

pub fn run(trials: usize, seed: u64) -> Report {
    set_precision(Precision::F64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report {
        trials,
        ..Report::default()
    };
    for i in 0..trials {
        let inst = Instance::random(&mut rng);
        match check(&inst) {
            Ok(()) => report.passed += 1,
            Err(e) => {
                report.first_failure.get_or_insert_with(|| format!("trial {i}: {e}"));
            }
        }
    }
    report
}
