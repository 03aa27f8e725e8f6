//! Differentiable operations. Matrix operations take 2-D tensors laid out
//! as `[rows × features]`; element-wise operations accept any shape.

use crate::error::{shape_err, NeuralError, Result};
use crate::kernels;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn t2(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(&[rows, cols], data).expect("consistent shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("consistent shape")
}

fn matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(NeuralError::Shape {
            op,
            left: s.to_vec(),
            right: vec![],
        }),
    }
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.custom(&[a, b], value, |g, _, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.custom(&[a, b], value, |g, _, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.custom(&[a, b], value, |g, ins, _| {
            vec![
                Some(zip_map(g, ins[1], |g, y| g * y)),
                Some(zip_map(g, ins[0], |g, x| g * x)),
            ]
        }))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.custom(&[a], value, move |g, _, _| vec![Some(g.map(|v| v * s))])
    }

    /// Adds a `[C]` bias to every row of an `[R×C]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = matrix("add_bias", self.value(a))?;
        if self.shape(bias) != [c] {
            return Err(shape_err("add_bias", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(self.custom(&[a, bias], t2(r, c, data), move |g, _, _| {
            let gb = Tensor::new(&[c], kernels::col_sums(g.data(), c)).expect("bias shape");
            vec![Some(g.clone()), Some(gb)]
        }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.custom(&[a], value, |g, ins, _| {
            vec![Some(zip_map(g, ins[0], |g, x| if x > 0.0 { g } else { 0.0 }))]
        })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.custom(&[a], value, |g, _, out| vec![Some(zip_map(g, out, |g, y| g * (1.0 - y * y)))])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.custom(&[a], value, |g, _, out| vec![Some(zip_map(g, out, |g, y| g * y * (1.0 - y)))])
    }

    /// `[M×K] · [K×N]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix("matmul", self.value(a))?;
        let (k2, n) = matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let data = kernels::matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.custom(&[a, b], t2(m, n, data), move |g, ins, _| {
            // dA = G·Bᵀ, dB = Aᵀ·G
            let ga = kernels::matmul_nt(g.data(), ins[1].data(), m, n, k);
            let gb = kernels::matmul_tn(ins[0].data(), g.data(), m, k, n);
            vec![Some(t2(m, k, ga)), Some(t2(k, n, gb))]
        }))
    }

    /// `[M×K] · [N×K]ᵀ`, the layout of a weight matrix stored `[out×in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix("matmul_nt", self.value(a))?;
        let (n, k2) = matrix("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let data = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.custom(&[a, b], t2(m, n, data), move |g, ins, _| {
            // dA = G·B, dB = Gᵀ·A
            let ga = kernels::matmul_nn(g.data(), ins[1].data(), m, n, k);
            let gb = kernels::matmul_tn(g.data(), ins[0].data(), m, n, k);
            vec![Some(t2(m, k, ga)), Some(t2(n, k, gb))]
        }))
    }

    /// `x · wᵀ + b` for `w: [out×in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        self.add_bias(y, b)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.custom(&[a], value, |g, ins, _| vec![Some(Tensor::filled(ins[0].shape(), g.item()))])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Element-wise mean of equally shaped tensors.
    pub fn mean_over(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| NeuralError::Invalid("mean_over needs at least one input".into()))?;
        for &x in &xs[1..] {
            self.same_shape("mean_over", first, x)?;
        }
        let k = xs.len() as f64;
        // running mean: exact when every input is the same
        let mut data = self.value(first).data().to_vec();
        for (n, &x) in xs.iter().enumerate().skip(1) {
            let w = 1.0 / (n + 1) as f64;
            for (d, v) in data.iter_mut().zip(self.value(x).data()) {
                *d += (v - *d) * w;
            }
        }
        let value = Tensor::new(self.shape(first), data)?;
        let n = xs.len();
        Ok(self.custom(xs, value, move |g, _, _| {
            let gi = g.map(|v| v / k);
            vec![Some(gi); n]
        }))
    }

    /// Concatenates 2-D tensors along rows (`axis = 0`) or features
    /// (`axis = 1`).
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| NeuralError::Invalid("concat needs at least one input".into()))?;
        let (r0, c0) = matrix("concat", self.value(first))?;
        let mut dims = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = matrix("concat", self.value(x))?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                _ => return Err(NeuralError::Invalid(format!("concat axis {axis} out of range for 2-D tensors"))),
            };
            if !ok {
                return Err(shape_err("concat", self.shape(first), self.shape(x)));
            }
            dims.push((r, c));
        }
        let value = if axis == 0 {
            let rows = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &x in xs {
                data.extend_from_slice(self.value(x).data());
            }
            t2(rows, c0, data)
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (&x, &(_, c)) in xs.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(x).data()[i * c..(i + 1) * c]);
                }
            }
            t2(r0, cols, data)
        };
        Ok(self.custom(xs, value, move |g, _, _| {
            let mut out = Vec::with_capacity(dims.len());
            if axis == 0 {
                let mut off = 0;
                for &(r, c) in &dims {
                    out.push(Some(t2(r, c, g.data()[off..off + r * c].to_vec())));
                    off += r * c;
                }
            } else {
                let cols = g.shape()[1];
                let mut off = 0;
                for &(r, c) in &dims {
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        data.extend_from_slice(&g.data()[i * cols + off..i * cols + off + c]);
                    }
                    out.push(Some(t2(r, c, data)));
                    off += c;
                }
            }
            out
        }))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = matrix("slice_cols", self.value(a))?;
        if start >= end || end > c {
            return Err(NeuralError::Invalid(format!("column range {start}..{end} invalid for {:?}", self.shape(a))));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        Ok(self.custom(&[a], t2(r, w, data), move |g, _, _| {
            let mut full = vec![0.0; r * c];
            for i in 0..r {
                full[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            vec![Some(t2(r, c, full))]
        }))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = matrix("slice_rows", self.value(a))?;
        if start >= end || end > r {
            return Err(NeuralError::Invalid(format!("row range {start}..{end} invalid for {:?}", self.shape(a))));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        Ok(self.custom(&[a], t2(end - start, c, data), move |g, _, _| {
            let mut full = vec![0.0; r * c];
            full[start * c..end * c].copy_from_slice(g.data());
            vec![Some(t2(r, c, full))]
        }))
    }

    /// Batch normalization with statistics of the current batch, taken over
    /// rows per feature. Returns the output together with the batch mean and
    /// the biased batch variance.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (r, c) = matrix("batch_norm", self.value(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("batch_norm", self.shape(x), self.shape(gamma)));
        }
        let xs = self.value(x).data();
        let n = r as f64;
        let mean: Vec<f64> = kernels::col_sums(xs, c).into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; c];
        for row in xs.chunks(c) {
            for j in 0..c {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; r * c];
        for (i, row) in xs.chunks(c).enumerate() {
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = xhat.clone();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = row[j] * g[j] + b[j];
            }
        }
        let y = self.custom(&[x, gamma, beta], t2(r, c, out), move |gy, ins, _| {
            let gamma = ins[1].data();
            let gyd = gy.data();
            let dbeta = kernels::col_sums(gyd, c);
            let mut dgamma = vec![0.0; c];
            for (gr, xr) in gyd.chunks(c).zip(xhat.chunks(c)) {
                for j in 0..c {
                    dgamma[j] += gr[j] * xr[j];
                }
            }
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    let k = i * c + j;
                    dx[k] = gamma[j] * inv_std[j] / n * (n * gyd[k] - dbeta[j] - xhat[k] * dgamma[j]);
                }
            }
            vec![
                Some(t2(r, c, dx)),
                Some(Tensor::new(&[c], dgamma).expect("shape")),
                Some(Tensor::new(&[c], dbeta).expect("shape")),
            ]
        });
        Ok((y, mean, var))
    }

    /// Batch normalization with fixed statistics: an affine map per feature.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (r, c) = matrix("batch_norm", self.value(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || mean.len() != c || var.len() != c {
            return Err(shape_err("batch_norm", self.shape(x), self.shape(gamma)));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j] * g[j] + b[j];
            }
        }
        Ok(self.custom(&[x, gamma, beta], t2(r, c, out), move |gy, ins, _| {
            let gamma = ins[1].data();
            let gyd = gy.data();
            let mut dx = gyd.to_vec();
            let mut dgamma = vec![0.0; c];
            for (i, row) in dx.chunks_mut(c).enumerate() {
                let xr = &ins[0].data()[i * c..(i + 1) * c];
                for j in 0..c {
                    dgamma[j] += row[j] * (xr[j] - mean[j]) * inv_std[j];
                    row[j] *= gamma[j] * inv_std[j];
                }
            }
            vec![
                Some(t2(r, c, dx)),
                Some(Tensor::new(&[c], dgamma).expect("shape")),
                Some(Tensor::new(&[c], kernels::col_sums(gyd, c)).expect("shape")),
            ]
        }))
    }

    /// One LSTM step with gates ordered (i, f, g, o). Returns `[B×2H]`
    /// holding the new hidden state followed by the new cell state.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var) -> Result<Var> {
        let hidden = self.shape(h).get(1).copied().unwrap_or(0);
        if self.shape(c) != self.shape(h) || self.shape(w_hh) != [4 * hidden, hidden] {
            return Err(shape_err("lstm_cell", self.shape(h), self.shape(w_hh)));
        }
        let xi = self.linear(x, w_ih, b_ih)?;
        let hh = self.linear(h, w_hh, b_hh)?;
        let gates = self.add(xi, hh)?;
        let i = self.slice_cols(gates, 0, hidden)?;
        let i = self.sigmoid(i);
        let f = self.slice_cols(gates, hidden, 2 * hidden)?;
        let f = self.sigmoid(f);
        let g = self.slice_cols(gates, 2 * hidden, 3 * hidden)?;
        let g = self.tanh(g);
        let o = self.slice_cols(gates, 3 * hidden, 4 * hidden)?;
        let o = self.sigmoid(o);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_new = self.add(fc, ig)?;
        let tc = self.tanh(c_new);
        let h_new = self.mul(o, tc)?;
        self.concat(&[h_new, c_new], 1)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
