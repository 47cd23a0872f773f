use super::{numel, Result, Tensor, TensorError};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

/// Identifies one dropout call: masks are a pure function of `(seed, call)`
/// and the element index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub call: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DropoutKey {
    fn uniform(&self, index: usize) -> f64 {
        let h = splitmix64(splitmix64(self.seed ^ splitmix64(self.call)) ^ index as u64);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn unary(
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(x.shape().to_vec(), out, &[x], move |g, p, y| {
        let xs = p[0].data();
        vec![Some(
            g.iter()
                .zip(xs.iter().zip(y))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect(),
        )]
    })
}

impl Tensor {
    /// Matrix product. Accepts `[m,k]x[k,n]`, `[k]x[k,n]` (row vector) and
    /// `[m,k]x[k]` (matrix-vector).
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k, n, out_shape) = match (self.shape(), rhs.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n, vec![*m, *n]),
            ([k], [k2, n]) if k == k2 => (1, *k, *n, vec![*n]),
            ([m, k], [k2]) if k == k2 => (*m, *k, 1, vec![*m]),
            _ => return Err(mismatch("matmul", self, rhs)),
        };
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        Ok(Tensor::from_op(out_shape, out, &[self, rhs], move |g, p, _| {
            let (a, b) = (p[0].data(), p[1].data());
            let ga = p[0].requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let brow = &b[kk * n..(kk + 1) * n];
                        ga[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                ga
            });
            let gb = p[1].requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let aik = a[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        for (o, &gv) in gb[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                            *o += aik * gv;
                        }
                    }
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    fn zip_same(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        if self.shape() != rhs.shape() {
            return Err(mismatch(op, self, rhs));
        }
        Ok(self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(&a, &b)| f(a, b))
            .collect())
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let out = self.zip_same(rhs, "add", |a, b| a + b)?;
        Ok(Tensor::from_op(self.shape().to_vec(), out, &[self, rhs], |g, p, _| {
            vec![
                p[0].requires_grad().then(|| g.to_vec()),
                p[1].requires_grad().then(|| g.to_vec()),
            ]
        }))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let out = self.zip_same(rhs, "sub", |a, b| a - b)?;
        Ok(Tensor::from_op(self.shape().to_vec(), out, &[self, rhs], |g, p, _| {
            vec![
                p[0].requires_grad().then(|| g.to_vec()),
                p[1].requires_grad().then(|| g.iter().map(|v| -v).collect()),
            ]
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let out = self.zip_same(rhs, "mul", |a, b| a * b)?;
        Ok(Tensor::from_op(self.shape().to_vec(), out, &[self, rhs], |g, p, _| {
            let (a, b) = (p[0].data(), p[1].data());
            vec![
                p[0].requires_grad()
                    .then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                p[1].requires_grad()
                    .then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
            ]
        }))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        unary(self, |x| scale * x + shift, move |_, _| scale)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.affine(c, 0.0)
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(
            self,
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn exp(&self) -> Tensor {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    /// `max(x, lo)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&self, lo: f64) -> Tensor {
        unary(self, move |x| x.max(lo), move |x, _| if x > lo { 1.0 } else { 0.0 })
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![s], &[self], move |g, _, _| vec![Some(vec![g[0]; n])])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), &[self], |g, _, _| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Concatenation along the last axis; all leading extents must agree.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let rank = first.shape().len();
        let lead = &first.shape()[..rank - 1];
        for p in parts {
            if p.shape().len() != rank || &p.shape()[..rank - 1] != lead {
                return Err(mismatch("concat", first, p));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[rank - 1]).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Tensor::from_op(shape, out, parts, move |g, p, _| {
            let mut grads: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
            for r in 0..rows {
                let mut off = r * total;
                for (gi, &w) in grads.iter_mut().zip(&widths) {
                    gi.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            grads
                .into_iter()
                .zip(p)
                .map(|(gi, t)| t.requires_grad().then_some(gi))
                .collect()
        }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| invalid("stack", "no inputs"))?;
        for p in parts {
            if p.shape() != first.shape() {
                return Err(mismatch("stack", first, p));
            }
        }
        let each = first.numel();
        let mut out = Vec::with_capacity(each * parts.len());
        for p in parts {
            out.extend_from_slice(p.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(first.shape());
        Ok(Tensor::from_op(shape, out, parts, move |g, p, _| {
            p.iter()
                .enumerate()
                .map(|(i, t)| t.requires_grad().then(|| g[i * each..(i + 1) * each].to_vec()))
                .collect()
        }))
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Tensor> {
        let rows = self.shape()[0];
        if len == 0 || start + len > rows {
            return Err(invalid(
                "narrow",
                format!("range {start}..{} outside leading extent {rows}", start + len),
            ));
        }
        let each = self.numel() / rows;
        let out = self.data()[start * each..(start + len) * each].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        let total = self.numel();
        Ok(Tensor::from_op(shape, out, &[self], move |g, _, _| {
            let mut full = vec![0.0; total];
            full[start * each..(start + len) * each].copy_from_slice(g);
            vec![Some(full)]
        }))
    }

    /// Picks flat elements by index; `None` yields `fill` and receives no gradient.
    pub fn gather(&self, index: &[Option<usize>], fill: f64) -> Result<Tensor> {
        if index.is_empty() {
            return Err(invalid("gather", "empty index"));
        }
        let n = self.numel();
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= n) {
            return Err(invalid("gather", format!("index {bad} out of range for {n} elements")));
        }
        let data = self.data();
        let out = index.iter().map(|i| i.map_or(fill, |i| data[i])).collect();
        let index = index.to_vec();
        Ok(Tensor::from_op(vec![index.len()], out, &[self], move |g, _, _| {
            let mut full = vec![0.0; n];
            for (gv, i) in g.iter().zip(&index) {
                if let Some(i) = i {
                    full[*i] += gv;
                }
            }
            vec![Some(full)]
        }))
    }

    /// Rows of an embedding table `[vocab, dim]`, giving `[ids.len(), dim]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor> {
        let [vocab, dim] = *self.shape() else {
            return Err(invalid("embedding", format!("table must be 2-D, got {:?}", self.shape())));
        };
        if ids.is_empty() {
            return Err(invalid("embedding", "no ids"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(invalid("embedding", format!("id {bad} outside vocabulary of {vocab}")));
        }
        let table = self.data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&table[i * dim..(i + 1) * dim]);
        }
        let ids = ids.to_vec();
        Ok(Tensor::from_op(vec![ids.len(), dim], out, &[self], move |g, _, _| {
            let mut full = vec![0.0; vocab * dim];
            for (r, &i) in ids.iter().enumerate() {
                for (o, &gv) in full[i * dim..(i + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                    *o += gv;
                }
            }
            vec![Some(full)]
        }))
    }

    /// Single embedding row as a `[dim]` vector.
    pub fn embedding_row(&self, id: usize) -> Result<Tensor> {
        let rows = self.embedding(&[id])?;
        let dim = rows.shape()[1];
        rows.reshape(&[dim])
    }

    /// Inverted dropout. `None` (evaluation) or `p == 0` is the identity.
    pub fn dropout(&self, p: f64, key: Option<DropoutKey>) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("probability {p} outside [0, 1)")));
        }
        let Some(key) = key.filter(|_| p > 0.0) else {
            return Ok(self.clone());
        };
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|i| if key.uniform(i) >= p { keep } else { 0.0 })
            .collect();
        let out = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), out, &[self], move |g, _, _| {
            vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]
        }))
    }

    /// Log-sum-exp reducing `axis`. A slice of all `-inf` reduces to `-inf`
    /// and passes back a zero gradient.
    pub fn logsumexp(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape().len() {
            return Err(invalid("logsumexp", format!("axis {axis} out of range for {:?}", self.shape())));
        }
        let (outer, n, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| x[(o * n + j) * inner + i];
                let m = (0..n).map(at).fold(f64::NEG_INFINITY, f64::max);
                out[o * inner + i] = if m == f64::NEG_INFINITY {
                    m
                } else {
                    m + (0..n).map(|j| (at(j) - m).exp()).sum::<f64>().ln()
                };
            }
        }
        let mut shape: Vec<usize> = self.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor::from_op(shape, out, &[self], move |g, p, y| {
            let x = p[0].data();
            let mut gx = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let lse = y[o * inner + i];
                    if lse == f64::NEG_INFINITY {
                        continue;
                    }
                    let gv = g[o * inner + i];
                    for j in 0..n {
                        let at = (o * n + j) * inner + i;
                        gx[at] = gv * (x[at] - lse).exp();
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    fn last_axis_rows(&self) -> (usize, usize) {
        let w = *self.shape().last().unwrap();
        (self.numel() / w, w)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let (rows, w) = self.last_axis_rows();
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * w..(r + 1) * w];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                continue;
            }
            let dst = &mut out[r * w..(r + 1) * w];
            let mut z = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - m).exp();
                z += *d;
            }
            dst.iter_mut().for_each(|d| *d /= z);
        }
        Tensor::from_op(self.shape().to_vec(), out, &[self], move |g, _, y| {
            let mut gx = vec![0.0; y.len()];
            for r in 0..rows {
                let s = r * w..(r + 1) * w;
                let dot: f64 = g[s.clone()].iter().zip(&y[s.clone()]).map(|(a, b)| a * b).sum();
                for j in s {
                    gx[j] = y[j] * (g[j] - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Log-softmax over the last axis; `-inf` logits stay `-inf`.
    pub fn log_softmax(&self) -> Tensor {
        let (rows, w) = self.last_axis_rows();
        let x = self.data();
        let mut out = vec![f64::NEG_INFINITY; x.len()];
        for r in 0..rows {
            let row = &x[r * w..(r + 1) * w];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                continue;
            }
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (d, &v) in out[r * w..(r + 1) * w].iter_mut().zip(row) {
                *d = v - lse;
            }
        }
        Tensor::from_op(self.shape().to_vec(), out, &[self], move |g, _, y| {
            let mut gx = vec![0.0; y.len()];
            for r in 0..rows {
                let s = r * w..(r + 1) * w;
                let total: f64 = g[s.clone()].iter().sum();
                for j in s {
                    gx[j] = g[j] - y[j].exp() * total;
                }
            }
            vec![Some(gx)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_by_hand() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_vector_forms() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let v = t(&[2], &[1.0, 1.0]);
        assert_eq!(v.matmul(&a).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.matmul(&v).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 3], &[0.0; 6]);
        let err = a.matmul(&b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch { op: "matmul", lhs: vec![2, 3], rhs: vec![2, 3] }
        );
        assert!(err.to_string().contains("matmul"));
        let c = t(&[3], &[0.0; 3]);
        assert!(matches!(a.add(&c), Err(TensorError::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let s = t(&[3], &[0.0, 0.0, 0.0]).softmax();
        for v in s.data() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn logsumexp_identity() {
        let x = t(&[2], &[0.2f64.ln(), 0.3f64.ln()]);
        assert_abs_diff_eq!(x.logsumexp(0).unwrap().item(), 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn logsumexp_of_neg_inf_is_neg_inf_with_zero_grad() {
        let x = Tensor::leaf(&[2], vec![f64::NEG_INFINITY; 2]).unwrap();
        let y = x.logsumexp(0).unwrap();
        assert_eq!(y.item(), f64::NEG_INFINITY);
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn logsumexp_over_middle_axis() {
        let x = t(&[2, 2, 1], &[0.0, 0.0, 1.0, 1.0]);
        let y = x.logsumexp(1).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_abs_diff_eq!(y.data()[0], 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(y.data()[1], 1.0 + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn masked_log_softmax_gives_exact_zero_probability() {
        let x = t(&[3], &[0.5, f64::NEG_INFINITY, -0.2]);
        let p = x.log_softmax().exp();
        assert_eq!(p.data()[1], 0.0);
        assert_abs_diff_eq!(p.data().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dropout_is_identity_without_key() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.dropout(0.3, None).unwrap().data(), x.data());
        assert!(x.dropout(1.0, None).is_err());
    }

    #[test]
    fn dropout_reproducible_per_key() {
        let x = t(&[64], &[1.0; 64]);
        let k = DropoutKey { seed: 9, call: 4 };
        let a = x.dropout(0.5, Some(k)).unwrap();
        let b = x.dropout(0.5, Some(k)).unwrap();
        assert_eq!(a.data(), b.data());
        let c = x.dropout(0.5, Some(DropoutKey { seed: 9, call: 5 })).unwrap();
        assert_ne!(a.data(), c.data());
        assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn concat_and_narrow() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[1], &[3.0]);
        let c = Tensor::concat(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0]);
        assert_eq!(c.narrow(1, 2).unwrap().data(), &[2.0, 3.0]);
        assert!(c.narrow(2, 2).is_err());
    }

    #[test]
    fn gather_with_fill() {
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        let g = a.gather(&[Some(2), None, Some(0)], f64::NEG_INFINITY).unwrap();
        assert_eq!(g.data(), &[3.0, f64::NEG_INFINITY, 1.0]);
    }
}
