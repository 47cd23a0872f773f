use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simulmt::data::{EOS, WAIT};
use simulmt::gradcheck::{central_differences, max_relative_error};
use simulmt::model::{Action, DecodeTrace, Policy, Rollout, TraceStep};
use simulmt::objectives::*;
use simulmt::Tensor;

fn random_dist(rng: &mut ChaCha8Rng, v: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..v).map(|_| rng.gen_range(0.05..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

fn log_tensors(probs: &[Vec<f64>]) -> Vec<Tensor> {
    probs
        .iter()
        .map(|p| Tensor::new(&[p.len()], p.iter().map(|x| x.ln()).collect()).unwrap())
        .collect()
}

/// Random CTC instance over blank 0 and labels 1..=labels.
fn instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let t = rng.gen_range(2..=6);
    let labels = rng.gen_range(2..=3);
    let j = rng.gen_range(1..=3);
    let probs = (0..t).map(|_| random_dist(rng, labels + 1)).collect();
    let y = (0..j).map(|_| rng.gen_range(1..=labels)).collect();
    (probs, y)
}

#[test]
fn dp_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (probs, y) = instance(&mut rng);
        let dp = ctc_loss_with_blank(&log_tensors(&probs), &y, 0).unwrap().value.item();
        let brute = ctc_bruteforce(&probs, &y, 0).unwrap();
        if brute.is_infinite() {
            assert_eq!(dp, f64::INFINITY);
        } else {
            assert!((dp - brute).abs() < 1e-9, "{probs:?} {y:?}: {dp} vs {brute}");
        }
    }
}

#[test]
fn two_step_hand_enumeration() {
    // Paths for y = [a] over two steps: aa, a<w>, <w>a.
    let p: Vec<Vec<f64>> = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.3, 0.1]];
    let (a, w) = (1, 0);
    let want = -(p[0][a] * p[1][a] + p[0][a] * p[1][w] + p[0][w] * p[1][a]).ln();
    let got = ctc_loss_with_blank(&log_tensors(&p), &[a], 0).unwrap();
    assert!((got.value.item() - want).abs() < 1e-12);
    assert!(got.diagnostic.is_none());
}

#[test]
fn wait_is_the_default_blank() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let probs: Vec<Vec<f64>> = (0..4).map(|_| random_dist(&mut rng, 6)).collect();
    let y = [5, EOS];
    let a = ctc_loss(&log_tensors(&probs), &y).unwrap().value.item();
    let b = ctc_bruteforce(&probs, &y, WAIT).unwrap();
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn probability_is_conserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let (probs, _) = instance(&mut rng);
        let total: f64 = outcome_masses(&probs, 0).unwrap().values().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

/// Loss as a function of unnormalised step logits `[T, V]`.
fn ctc_of_logits(logits: &Tensor, t: usize, v: usize, y: &[usize]) -> Tensor {
    let lp = logits.log_softmax();
    let steps: Vec<Tensor> = (0..t)
        .map(|i| lp.narrow(i, 1).unwrap().reshape(&[v]).unwrap())
        .collect();
    ctc_loss_with_blank(&steps, y, 0).unwrap().value
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 50 {
        let (probs, y) = instance(&mut rng);
        if ctc_bruteforce(&probs, &y, 0).unwrap().is_infinite() {
            continue;
        }
        let (t, v) = (probs.len(), probs[0].len());
        let x: Vec<f64> = (0..t * v).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let leaf = Tensor::leaf(&[t, v], x.clone()).unwrap();
        ctc_of_logits(&leaf, t, v, &y).backward().unwrap();
        let numeric = central_differences(
            |z| ctc_of_logits(&Tensor::new(&[t, v], z.to_vec()).unwrap(), t, v, &y).item(),
            &x,
            1e-6,
        );
        let err = max_relative_error(&leaf.grad().unwrap(), &numeric);
        assert!(err < 1e-4, "relative error {err}");
        checked += 1;
    }
}

#[test]
fn infeasible_reference_is_infinite() {
    let p = vec![vec![0.5, 0.5]];
    let l = ctc_loss_with_blank(&log_tensors(&p), &[1, 1], 0).unwrap();
    assert_eq!(l.value.item(), f64::INFINITY);
    assert!(l.diagnostic.is_some());
    assert_eq!(ctc_bruteforce(&p, &[1, 1], 0).unwrap(), f64::INFINITY);
    // Enough steps, but the blank between the repeats has zero probability.
    let masked = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    let l = ctc_loss_with_blank(&log_tensors(&masked), &[1, 1], 0).unwrap();
    assert_eq!(l.value.item(), f64::INFINITY);
}

#[test]
fn brute_force_refuses_large_instances() {
    let probs = vec![vec![0.25; 4]; 12];
    assert!(matches!(ctc_bruteforce(&probs, &[1], 0), Err(ObjectiveError::TooLarge { .. })));
}

#[test]
fn reversing_the_reference_changes_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let probs: Vec<Vec<f64>> = (0..5).map(|_| random_dist(&mut rng, 4)).collect();
    let y = [1, 2, 3];
    let fwd = ctc_bruteforce(&probs, &y, 0).unwrap();
    let rev = ctc_bruteforce(&probs, &[3, 2, 1], 0).unwrap();
    assert!((fwd - rev).abs() > 1e-9);
}

#[test]
fn collapse_examples() {
    let (a, b) = (5, 6);
    assert_eq!(collapse(&[WAIT, a, a, WAIT, b]), vec![a, b]);
    assert_eq!(collapse(&[a, WAIT, a]), vec![a, a]);
    assert!(collapse(&[]).is_empty());
}

fn rollout(emissions: &[usize], probs: Vec<Vec<f64>>) -> Rollout {
    let mut trace = DecodeTrace::new(Policy::Adaptive, 20);
    let mut g = 1;
    trace.steps.push(TraceStep { action: Action::Read, g, probs: None });
    for &e in emissions {
        trace.steps.push(TraceStep { action: Action::Write(e), g, probs: None });
        if e == WAIT {
            g += 1;
            trace.steps.push(TraceStep { action: Action::Read, g, probs: None });
        }
    }
    Rollout {
        trace,
        log_probs: log_tensors(&probs),
    }
}

#[test]
fn sce_examples() {
    let v = 8;
    let uniform = vec![vec![1.0 / v as f64; v]; 5];
    let r = rollout(&[WAIT, WAIT, 5, 6, EOS], uniform.clone());
    let ent = sce_masked(&r, &[5, 6, EOS]).unwrap().item();
    assert!((ent - 3.0 * (v as f64).ln()).abs() < 1e-12, "wait steps contribute nothing");

    let mut perfect = vec![vec![0.0; v]; 3];
    for (row, tok) in perfect.iter_mut().zip([5, 6, EOS]) {
        row[tok] = 1.0;
    }
    let r = rollout(&[5, 6, EOS], perfect);
    assert_eq!(sce_masked(&r, &[5, 6, EOS]).unwrap().item(), 0.0);

    let r = rollout(&[5, 6, EOS], uniform[..3].to_vec());
    assert!(matches!(sce_masked(&r, &[5, 7, EOS]), Err(ObjectiveError::Misaligned(_))));
}

#[test]
fn delay_examples() {
    let v = 8;
    let mut p = vec![vec![0.5 / (v - 1) as f64; v]; 3];
    p[0][WAIT] = 0.5;
    let r = rollout(&[WAIT, 5, EOS], p.clone());
    let del = delay_penalty(&r).unwrap().item();
    assert!((del + 0.5f64.ln()).abs() < 1e-12);

    let r = rollout(&[5, 6, EOS], p.clone());
    assert_eq!(delay_penalty(&r).unwrap().item(), 0.0);

    // A repeated token is delaying, weighted by the probability of repeating.
    let r = rollout(&[5, 5, EOS], p.clone());
    let w = p[1][5];
    assert!((delay_penalty(&r).unwrap().item() + (1.0 - w).ln()).abs() < 1e-12);

    // Certain waiting is clamped rather than infinite.
    let mut sure = vec![vec![0.0; v]; 2];
    sure[0][WAIT] = 1.0;
    sure[1][EOS] = 1.0;
    let r = rollout(&[WAIT, EOS], sure);
    let del = delay_penalty(&r).unwrap().item();
    assert!((del + DELAY_FLOOR.ln()).abs() < 1e-9);
}

#[test]
fn combined_loss_examples() {
    let (e, c, d) = (Tensor::scalar(1.5), Tensor::scalar(2.0), Tensor::scalar(2.0));
    assert!((combined_loss(&e, &c, &d, 0.03).unwrap().item() - 3.56).abs() < 1e-12);
    assert_eq!(combined_loss(&e, &c, &d, 0.0).unwrap().item(), 3.5);
    let zero = Tensor::scalar(0.0);
    assert_eq!(
        combined_loss(&e, &c, &zero, 0.0).unwrap().item(),
        combined_loss(&e, &c, &zero, 7.0).unwrap().item()
    );
    let b = LossBundle::new(e, c, d, 0.5).unwrap();
    assert_eq!(b.values(), [1.5, 2.0, 2.0, 4.5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delay_is_monotone_in_wait_probability(a in 0.0f64..0.99, b in 0.0f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let dist = |w: f64| {
            let mut p = vec![(1.0 - w) / 7.0; 8];
            p[WAIT] = w;
            p
        };
        let r_lo = rollout(&[WAIT, EOS], vec![dist(lo), dist(0.0)]);
        let r_hi = rollout(&[WAIT, EOS], vec![dist(hi), dist(0.0)]);
        prop_assert!(delay_penalty(&r_lo).unwrap().item() <= delay_penalty(&r_hi).unwrap().item());
    }

    #[test]
    fn losses_are_nonnegative(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (probs, y) = instance(&mut rng);
        let l = ctc_loss_with_blank(&log_tensors(&probs), &y, 0).unwrap().value.item();
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn collapse_drops_waits_and_never_grows(path in prop::collection::vec(3usize..7, 0..10)) {
        let once = collapse(&path);
        prop_assert!(!once.contains(&WAIT));
        prop_assert!(once.len() <= path.len());
    }
}
