/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// Moment buffers shaped like `sizes`, with the usual defaults
    /// (0.9, 0.999, 1e-8).
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moment_sizes(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }

    /// Applies one update in place.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_decreases_monotonically() {
        // f(x) = sum (x_i - c_i)^2
        let target = [3.0, -2.0, 0.5];
        let mut x = vec![0.0; 3];
        let mut adam = Adam::new(&[3]);
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut last = f(&x);
        for _ in 0..100 {
            let g: Vec<f64> = x.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            adam.update(&mut [&mut x[..]], &[g], 0.01);
            let now = f(&x);
            assert!(now < last, "{now} !< {last}");
            last = now;
        }
    }

    #[test]
    fn norm_fifty_becomes_five() {
        let mut g = vec![vec![30.0], vec![40.0]];
        let before = clip_global_norm(&mut g, 5.0);
        assert_eq!(before, 50.0);
        assert!((global_norm(&g) - 5.0).abs() < 1e-12);
        assert!((g[0][0] - 3.0).abs() < 1e-12 && (g[1][0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn small_gradients_untouched() {
        let mut g = vec![vec![0.3, 0.4]];
        clip_global_norm(&mut g, 5.0);
        assert_eq!(g, vec![vec![0.3, 0.4]]);
    }
}
