//! Every differentiable primitive checked against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simulmt::gradcheck::{central_differences, max_relative_error};
use simulmt::Tensor;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights so every
/// output element reaches the gradient.
fn weighted_sum(t: &Tensor) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(t.numel() as u64);
    let w = Tensor::new(t.shape(), random(&mut rng, t.numel(), 0.5, 1.5)).unwrap();
    t.mul(&w).unwrap().sum()
}

/// Compares backprop against finite differences for a function of several
/// inputs with the given shapes.
fn check(shapes: &[&[usize]], inputs: Vec<Vec<f64>>, f: impl Fn(&[Tensor]) -> Tensor) {
    let split = |flat: &[f64]| -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut at = 0;
        for s in shapes {
            let n: usize = s.iter().product();
            out.push(flat[at..at + n].to_vec());
            at += n;
        }
        out
    };
    let leaves: Vec<Tensor> = shapes
        .iter()
        .zip(&inputs)
        .map(|(s, v)| Tensor::leaf(s, v.clone()).unwrap())
        .collect();
    let loss = weighted_sum(&f(&leaves));
    loss.backward().unwrap();
    let analytic: Vec<f64> = leaves.iter().flat_map(|l| l.grad().unwrap()).collect();
    let flat: Vec<f64> = inputs.concat();
    let numeric = central_differences(
        |x| {
            let ts: Vec<Tensor> = shapes
                .iter()
                .zip(split(x))
                .map(|(s, v)| Tensor::new(s, v).unwrap())
                .collect();
            weighted_sum(&f(&ts)).item()
        },
        &flat,
        H,
    );
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < TOL, "relative error {err}: {analytic:?} vs {numeric:?}");
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(42)
}

#[test]
fn matmul_all_shapes() {
    let mut r = rng();
    let (a, b) = (random(&mut r, 6, -1.0, 1.0), random(&mut r, 12, -1.0, 1.0));
    check(&[&[2, 3], &[3, 4]], vec![a, b], |t| t[0].matmul(&t[1]).unwrap());
    let (v, m) = (random(&mut r, 3, -1.0, 1.0), random(&mut r, 6, -1.0, 1.0));
    check(&[&[3], &[3, 2]], vec![v, m], |t| t[0].matmul(&t[1]).unwrap());
    let (m, v) = (random(&mut r, 6, -1.0, 1.0), random(&mut r, 3, -1.0, 1.0));
    check(&[&[2, 3], &[3]], vec![m, v], |t| t[0].matmul(&t[1]).unwrap());
}

#[test]
fn elementwise_binary() {
    let mut r = rng();
    let (a, b) = (random(&mut r, 5, -2.0, 2.0), random(&mut r, 5, -2.0, 2.0));
    check(&[&[5], &[5]], vec![a.clone(), b.clone()], |t| t[0].add(&t[1]).unwrap());
    check(&[&[5], &[5]], vec![a.clone(), b.clone()], |t| t[0].sub(&t[1]).unwrap());
    check(&[&[5], &[5]], vec![a, b], |t| t[0].mul(&t[1]).unwrap());
}

#[test]
fn elementwise_unary() {
    let mut r = rng();
    let x = random(&mut r, 6, -2.0, 2.0);
    check(&[&[6]], vec![x.clone()], |t| t[0].tanh());
    check(&[&[6]], vec![x.clone()], |t| t[0].sigmoid());
    check(&[&[6]], vec![x.clone()], |t| t[0].exp());
    check(&[&[6]], vec![x.clone()], |t| t[0].affine(-1.5, 0.25));
    check(&[&[6]], vec![x.clone()], |t| t[0].scale(3.0));
    let pos = random(&mut r, 6, 0.1, 3.0);
    check(&[&[6]], vec![pos], |t| t[0].log());
    // Inputs kept away from the kink.
    let away: Vec<f64> = x.iter().map(|v| if v.abs() < 0.1 { v + 0.5 } else { *v }).collect();
    check(&[&[6]], vec![away], |t| t[0].clamp_min(0.0));
}

#[test]
fn reductions_and_normalisers() {
    let mut r = rng();
    let x = random(&mut r, 12, -3.0, 3.0);
    check(&[&[12]], vec![x.clone()], |t| t[0].sum());
    check(&[&[3, 4]], vec![x.clone()], |t| t[0].logsumexp(0).unwrap());
    check(&[&[3, 4]], vec![x.clone()], |t| t[0].logsumexp(1).unwrap());
    check(&[&[3, 4]], vec![x.clone()], |t| t[0].softmax());
    check(&[&[3, 4]], vec![x.clone()], |t| t[0].log_softmax());
    check(&[&[12]], vec![x], |t| t[0].log_softmax());
}

#[test]
fn structural_ops() {
    let mut r = rng();
    let (a, b) = (random(&mut r, 6, -1.0, 1.0), random(&mut r, 4, -1.0, 1.0));
    check(&[&[3, 2], &[2, 2]], vec![a.clone(), b.clone()], |t| {
        let row = t[0].reshape(&[2, 3]).unwrap().narrow(1, 1).unwrap().reshape(&[3]).unwrap();
        row.add(&t[1].reshape(&[4]).unwrap().narrow(1, 3).unwrap()).unwrap()
    });
    check(&[&[6], &[4]], vec![a.clone(), b.clone()], |t| Tensor::concat(&[&t[0], &t[1]]).unwrap());
    let c = random(&mut r, 6, -1.0, 1.0);
    check(&[&[6], &[6]], vec![a.clone(), c], |t| Tensor::stack(&[&t[0], &t[1], &t[0]]).unwrap());
    check(&[&[6]], vec![a.clone()], |t| {
        t[0].gather(&[Some(2), None, Some(2), Some(5), Some(0)], -7.0).unwrap()
    });
    check(&[&[3, 2]], vec![a.clone()], |t| t[0].embedding(&[2, 0, 2]).unwrap());
    check(&[&[3, 2]], vec![a], |t| t[0].embedding_row(1).unwrap());
}

#[test]
fn dropout_with_fixed_mask() {
    let mut r = rng();
    let x = random(&mut r, 20, -1.0, 1.0);
    let key = Some(simulmt::tensor::DropoutKey { seed: 9, call: 3 });
    check(&[&[20]], vec![x], |t| t[0].dropout(0.3, key).unwrap());
}

#[test]
fn random_five_parameter_graph() {
    // A small network mixing most primitives: two layers, a softmax
    // readout and a log-sum-exp penalty.
    let mut r = rng();
    for _ in 0..5 {
        let shapes: [&[usize]; 5] = [&[3], &[3, 4], &[4], &[4, 2], &[2]];
        let inputs: Vec<Vec<f64>> = shapes
            .iter()
            .map(|s| random(&mut r, s.iter().product(), -1.0, 1.0))
            .collect();
        check(&shapes, inputs, |t| {
            let h = t[0].matmul(&t[1]).unwrap().add(&t[2]).unwrap().tanh();
            let o = h.matmul(&t[3]).unwrap().add(&t[4]).unwrap();
            let p = o.log_softmax().mul(&o.sigmoid()).unwrap();
            Tensor::stack(&[&p, &o.exp()]).unwrap().logsumexp(0).unwrap()
        });
    }
}

#[test]
fn gradients_accumulate_until_reset() {
    let x = Tensor::leaf(&[2], vec![1.0, -2.0]).unwrap();
    x.mul(&x).unwrap().sum().backward().unwrap();
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, -8.0]);
    x.zero_grad();
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut r = rng();
        let a = Tensor::new(&[4, 5], random(&mut r, 20, -1.0, 1.0)).unwrap();
        let b = Tensor::new(&[5], random(&mut r, 5, -1.0, 1.0)).unwrap();
        a.matmul(&b).unwrap().softmax().to_vec()
    };
    assert_eq!(run(), run());
}
