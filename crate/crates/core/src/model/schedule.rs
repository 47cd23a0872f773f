use std::fmt;

use crate::data::{Vocabulary, EOS, WAIT};

/// Source tokens read before the `j`-th output under Wait-k (1-based `j`).
pub fn waitk_g(j: usize, k: usize, source_len: usize) -> usize {
    (k + j).saturating_sub(1).min(source_len)
}

/// How reading and writing are interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Read the whole source, then write.
    FullSentence,
    /// Fixed Wait-k schedule.
    WaitK(usize),
    /// Read whenever the model emits `<wait>`.
    Adaptive,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::FullSentence => write!(f, "full-sentence"),
            Policy::WaitK(k) => write!(f, "waitk(k={k})"),
            Policy::Adaptive => write!(f, "adaptive"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Read,
    /// Emitted token id; may be `<wait>` under the adaptive policy.
    Write(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub action: Action,
    /// Source tokens read once this step completes.
    pub g: usize,
    /// Output distribution of a WRITE step, when retained.
    pub probs: Option<Vec<f64>>,
}

/// Ordered READ/WRITE actions of one decoding run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub policy: Policy,
    pub source_len: usize,
    pub steps: Vec<TraceStep>,
}

impl DecodeTrace {
    pub fn new(policy: Policy, source_len: usize) -> Self {
        Self {
            policy,
            source_len,
            steps: Vec::new(),
        }
    }

    pub(crate) fn read(&mut self, g: usize) {
        self.steps.push(TraceStep {
            action: Action::Read,
            g,
            probs: None,
        });
    }

    pub(crate) fn write(&mut self, token: usize, g: usize, probs: Option<Vec<f64>>) {
        self.steps.push(TraceStep {
            action: Action::Write(token),
            g,
            probs,
        });
    }

    pub fn reads(&self) -> usize {
        self.steps.iter().filter(|s| s.action == Action::Read).count()
    }

    /// Emitted tokens in order, including `<wait>`.
    pub fn emissions(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter_map(|s| match s.action {
                Action::Write(t) => Some(t),
                Action::Read => None,
            })
            .collect()
    }

    /// Source tokens visible at each WRITE step.
    pub fn write_g(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| matches!(s.action, Action::Write(_)))
            .map(|s| s.g)
            .collect()
    }

    /// The translation, up to (not including) EOS. Adaptive traces are
    /// collapsed like CTC paths: adjacent repeats merge, then `<wait>` is
    /// dropped, so a genuine repeat needs a `<wait>` in between.
    pub fn output(&self) -> Vec<usize> {
        let mut emitted = self.emissions();
        if let Some(end) = emitted.iter().position(|&t| t == EOS) {
            emitted.truncate(end);
        }
        if self.policy == Policy::Adaptive {
            emitted.dedup();
        }
        emitted.retain(|&t| t != WAIT);
        emitted
    }

    pub fn waits(&self) -> usize {
        self.emissions().iter().filter(|&&t| t == WAIT).count()
    }

    /// Delaying steps before the first real output token.
    ///
    /// Adaptive traces count `<wait>` emissions before the first other
    /// token. Fixed schedules count the source tokens read before the first
    /// WRITE, so Wait-k reports `min(k, I)` and full-sentence reports `I`.
    pub fn first_output_delay(&self) -> usize {
        match self.policy {
            Policy::Adaptive => self
                .emissions()
                .iter()
                .take_while(|&&t| t == WAIT)
                .count(),
            Policy::WaitK(_) | Policy::FullSentence => self
                .steps
                .iter()
                .take_while(|s| s.action == Action::Read)
                .count(),
        }
    }

    /// Checks the structural invariants: reads within the source, `g` equal
    /// to the running read count, at least one read before any write, and
    /// no `<wait>` once the whole source is visible.
    pub fn validate(&self) -> Result<(), String> {
        let mut reads = 0;
        for (i, s) in self.steps.iter().enumerate() {
            match s.action {
                Action::Read => reads += 1,
                Action::Write(t) => {
                    if reads == 0 {
                        return Err(format!("step {i}: write before any read"));
                    }
                    if t == WAIT && reads >= self.source_len {
                        return Err(format!("step {i}: <wait> with the whole source read"));
                    }
                }
            }
            if s.g != reads {
                return Err(format!("step {i}: g={} but {reads} reads so far", s.g));
            }
        }
        if reads > self.source_len {
            return Err(format!("{reads} reads exceed source length {}", self.source_len));
        }
        Schedule::from_trace(self).validate(self.source_len)
    }

    /// `R` for reads and `W:<token>` for writes, space separated.
    pub fn to_line(&self, vocab: &Vocabulary) -> String {
        self.steps
            .iter()
            .map(|s| match s.action {
                Action::Read => "R".to_owned(),
                Action::Write(t) => format!("W:{}", vocab.id_to_token(t).unwrap_or("<unk>")),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Per-output-step source read counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub policy: Policy,
    pub g_table: Vec<usize>,
}

impl Schedule {
    pub fn wait_k(k: usize, source_len: usize, steps: usize) -> Self {
        Self {
            policy: Policy::WaitK(k),
            g_table: (1..=steps).map(|j| waitk_g(j, k, source_len)).collect(),
        }
    }

    pub fn from_trace(trace: &DecodeTrace) -> Self {
        Self {
            policy: trace.policy,
            g_table: trace.write_g(),
        }
    }

    /// Nondecreasing, steps of 0 or 1, within `1..=source_len`.
    pub fn validate(&self, source_len: usize) -> Result<(), String> {
        for (t, &g) in self.g_table.iter().enumerate() {
            if g == 0 || g > source_len {
                return Err(format!("g({})={g} outside 1..={source_len}", t + 1));
            }
            if t > 0 {
                let prev = self.g_table[t - 1];
                if g < prev || g - prev > 1 {
                    return Err(format!("g jumps from {prev} to {g} at step {}", t + 1));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn waitk_examples() {
        assert_eq!(waitk_g(1, 3, 10), 3);
        assert_eq!(waitk_g(9, 3, 10), 10);
        assert_eq!(waitk_g(1, 5, 4), 4);
    }

    #[test]
    fn adaptive_delay_counts_leading_waits() {
        let mut t = DecodeTrace::new(Policy::Adaptive, 4);
        t.read(1);
        t.write(WAIT, 1, None);
        t.read(2);
        t.write(WAIT, 2, None);
        t.read(3);
        t.write(7, 3, None);
        t.write(WAIT, 3, None);
        t.read(4);
        t.write(EOS, 4, None);
        assert_eq!(t.first_output_delay(), 2);
        assert_eq!(t.output(), vec![7]);
        assert!(t.validate().is_ok());
    }

    #[test]
    fn adaptive_output_merges_repeats_unless_separated() {
        let mut t = DecodeTrace::new(Policy::Adaptive, 3);
        t.read(1);
        for tok in [7, 7, 8] {
            t.write(tok, 1, None);
        }
        t.write(WAIT, 1, None);
        t.read(2);
        for tok in [8, EOS, 9] {
            t.write(tok, 2, None);
        }
        assert_eq!(t.output(), vec![7, 8, 8]);

        let mut f = DecodeTrace::new(Policy::WaitK(1), 3);
        f.read(1);
        for tok in [7, 7, EOS] {
            f.write(tok, 1, None);
        }
        assert_eq!(f.output(), vec![7, 7]);
    }

    #[test]
    fn wait_at_full_source_is_invalid() {
        let mut t = DecodeTrace::new(Policy::Adaptive, 1);
        t.read(1);
        t.write(WAIT, 1, None);
        assert!(t.validate().is_err());
    }

    proptest! {
        #[test]
        fn waitk_schedule_is_valid(k in 1usize..8, len in 1usize..20, steps in 1usize..30) {
            let s = Schedule::wait_k(k, len, steps);
            prop_assert!(s.validate(len).is_ok());
            prop_assert_eq!(s.g_table[0], k.min(len));
        }
    }
}
