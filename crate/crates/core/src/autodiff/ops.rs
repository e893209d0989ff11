//! Standard differentiable primitives: arithmetic, activations, linear
//! algebra, normalization, reductions, and shape surgery.
//!
//! Broadcasting is deliberately narrow: scalar-with-array (the `*_scalar`
//! methods) and equal shapes only. Row-wise patterns (bias add, per-row
//! scaling) are explicit ops with their own gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, softmax_row_inplace, Tensor};

pub(crate) const LN_EPS: f64 = 1e-5;
const BN_EPS: f64 = 1e-5;

impl Tape {
    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Equal-shape binary op. `df(a_i, b_i, g_i) -> (da_i, db_i)`.
    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        df: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Var> {
        self.check_same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .as_slice()
            .iter()
            .zip(tb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        Ok(self.push(
            value,
            vec![a, b],
            Some(Box::new(move |g, _out, parents| {
                let (pa, pb) = (parents[0].as_slice(), parents[1].as_slice());
                let mut da = Tensor::zeros(parents[0].shape());
                let mut db = Tensor::zeros(parents[1].shape());
                for i in 0..g.numel() {
                    let (x, y) = df(pa[i], pb[i], g.as_slice()[i]);
                    da.as_mut_slice()[i] = x;
                    db.as_mut_slice()[i] = y;
                }
                vec![da, db]
            })),
        ))
    }

    /// Elementwise unary op. `df(x_i, y_i, g_i) -> dx_i`.
    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Var {
        let ta = self.value(a);
        let data = ta.as_slice().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data).unwrap();
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g, out, parents| {
                let x = parents[0].as_slice();
                let y = out.as_slice();
                let mut dx = Tensor::zeros(parents[0].shape());
                for i in 0..g.numel() {
                    dx.as_mut_slice()[i] = df(x[i], y[i], g.as_slice()[i]);
                }
                vec![dx]
            })),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    /// Elementwise division; zero divisors are a domain error (consumers are
    /// expected to clamp first).
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).as_slice().iter().any(|&y| y == 0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        self.binary(
            "div",
            a,
            b,
            |x, y| x / y,
            |x, y, g| (g / y, -g * x / (y * y)),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| x + c, |_, _, g| g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| c * x, move |_, _, g| c * g)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y, g| g * y)
    }

    /// Natural log; inputs must be strictly positive (clamp first otherwise).
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).as_slice().iter().any(|&x| x <= 0.0) {
            return Err(Error::domain("log", "non-positive input"));
        }
        Ok(self.unary(a, f64::ln, |x, _, g| g / x))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y, g| g * y * (1.0 - y))
    }

    /// softplus(x) = ln(1 + e^x), evaluated stably; derivative is sigmoid.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.max(0.0) + (-x.abs()).exp().ln_1p(),
            |x, _, g| g * sigmoid(x),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y, g| g * (1.0 - y * y))
    }

    /// Leaky rectifier; `slope = 0` gives plain relu.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _, g| if x >= 0.0 { g } else { slope * g },
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    /// max(x, c); the subgradient is zero on the clamped side.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        self.unary(
            a,
            move |x| x.max(c),
            move |x, _, g| if x > c { g } else { 0.0 },
        )
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_into(ta.as_slice(), tb.as_slice(), out.as_mut_slice(), m, k, n);
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, _out, parents| {
                let mut da = Tensor::zeros(&[m, k]);
                let mut db = Tensor::zeros(&[k, n]);
                // dA = G @ B^T, dB = A^T @ G
                matmul_nt_into(
                    g.as_slice(),
                    parents[1].as_slice(),
                    da.as_mut_slice(),
                    m,
                    n,
                    k,
                );
                matmul_tn_into(
                    parents[0].as_slice(),
                    g.as_slice(),
                    db.as_mut_slice(),
                    m,
                    k,
                    n,
                );
                vec![da, db]
            })),
        ))
    }

    /// Fused affine map `x @ w + bias` with the bias broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(bias));
        if tx.rank() != 2 || tw.rank() != 2 || tx.shape()[1] != tw.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        if tb.numel() != tw.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "linear-bias",
                lhs: tw.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        matmul_into(tx.as_slice(), tw.as_slice(), out.as_mut_slice(), m, k, n);
        for row in out.as_mut_slice().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(tb.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(
            out,
            vec![x, w, bias],
            Some(Box::new(move |g, _out, parents| {
                let mut dx = Tensor::zeros(&[m, k]);
                let mut dw = Tensor::zeros(&[k, n]);
                let mut db = Tensor::zeros(parents[2].shape());
                matmul_nt_into(
                    g.as_slice(),
                    parents[1].as_slice(),
                    dx.as_mut_slice(),
                    m,
                    n,
                    k,
                );
                matmul_tn_into(
                    parents[0].as_slice(),
                    g.as_slice(),
                    dw.as_mut_slice(),
                    m,
                    k,
                    n,
                );
                for row in g.as_slice().chunks(n) {
                    for (d, &gv) in db.as_mut_slice().iter_mut().zip(row) {
                        *d += gv;
                    }
                }
                vec![dx, dw, db]
            })),
        ))
    }

    /// Repeat a vector `[d]` as `times` identical rows -> `[times, d]`.
    pub fn tile_rows(&mut self, v: Var, times: usize) -> Result<Var> {
        let tv = self.value(v);
        if tv.rank() != 1 {
            return Err(Error::BadShape {
                op: "tile_rows",
                shape: tv.shape().to_vec(),
                detail: "expected rank-1".into(),
            });
        }
        let d = tv.numel();
        let mut data = Vec::with_capacity(times * d);
        for _ in 0..times {
            data.extend_from_slice(tv.as_slice());
        }
        let value = Tensor::new(vec![times, d], data).unwrap();
        Ok(self.push(
            value,
            vec![v],
            Some(Box::new(move |g, _out, parents| {
                let mut dv = Tensor::zeros(parents[0].shape());
                for row in g.as_slice().chunks(d) {
                    for (s, &gv) in dv.as_mut_slice().iter_mut().zip(row) {
                        *s += gv;
                    }
                }
                vec![dv]
            })),
        ))
    }

    /// Scale each row i of `x: [r,c]` by `s[i]` (`s` rank-1 `[r]` or `[r,1]`).
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        let r = tx.rows();
        if tx.rank() != 2 || ts.numel() != r {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: tx.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let c = tx.cols();
        let mut out = tx.clone();
        for (i, row) in out.as_mut_slice().chunks_mut(c).enumerate() {
            let sv = ts.as_slice()[i];
            for v in row.iter_mut() {
                *v *= sv;
            }
        }
        Ok(self.push(
            out,
            vec![x, s],
            Some(Box::new(move |g, _out, parents| {
                let (px, ps) = (parents[0].as_slice(), parents[1].as_slice());
                let mut dx = Tensor::zeros(parents[0].shape());
                let mut ds = Tensor::zeros(parents[1].shape());
                for i in 0..r {
                    let grow = &g.as_slice()[i * c..(i + 1) * c];
                    let xrow = &px[i * c..(i + 1) * c];
                    let dxrow = &mut dx.as_mut_slice()[i * c..(i + 1) * c];
                    let mut acc = 0.0;
                    for j in 0..c {
                        dxrow[j] = grow[j] * ps[i];
                        acc += grow[j] * xrow[j];
                    }
                    ds.as_mut_slice()[i] = acc;
                }
                vec![dx, ds]
            })),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::BadShape {
                op: "transpose",
                shape: ta.shape().to_vec(),
                detail: "expected rank-2".into(),
            });
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = ta.as_slice()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], data).unwrap();
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(move |g, _out, _parents| {
                let mut dx = Tensor::zeros(&[r, c]);
                for i in 0..c {
                    for j in 0..r {
                        dx.as_mut_slice()[j * c + i] = g.as_slice()[i * r + j];
                    }
                }
                vec![dx]
            })),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.value(a).as_slice().iter().sum();
        Ok(self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(|g, _out, parents| {
                vec![Tensor::full(parents[0].shape(), g.item())]
            })),
        ))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Row-wise softmax of a rank-2 tensor; each row sums to 1.
    /// Max subtraction makes `-1e9` mask surrogates come out as exact zeros.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::BadShape {
                op: "softmax",
                shape: ta.shape().to_vec(),
                detail: "expected rank-2".into(),
            });
        }
        if !ta.all_finite() {
            return Err(Error::domain("softmax", "non-finite input"));
        }
        let c = ta.cols();
        let mut out = ta.clone();
        for row in out.as_mut_slice().chunks_mut(c) {
            softmax_row_inplace(row);
        }
        Ok(self.push(
            out,
            vec![a],
            Some(Box::new(move |g, out, parents| {
                let mut dx = Tensor::zeros(parents[0].shape());
                for ((drow, yrow), grow) in dx
                    .as_mut_slice()
                    .chunks_mut(c)
                    .zip(out.as_slice().chunks(c))
                    .zip(g.as_slice().chunks(c))
                {
                    let inner: f64 = yrow.iter().zip(grow).map(|(y, gv)| y * gv).sum();
                    for j in 0..c {
                        drow[j] = yrow[j] * (grow[j] - inner);
                    }
                }
                vec![dx]
            })),
        ))
    }

    /// Column-concatenate rank-2 tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for i in 0..r {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&t.as_slice()[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(vec![r, total], data).unwrap();
        Ok(self.push(
            value,
            parts.to_vec(),
            Some(Box::new(move |g, _out, parents| {
                let mut grads = Vec::with_capacity(parents.len());
                let mut offset = 0;
                for (&w, parent) in widths.iter().zip(parents) {
                    let mut dp = Tensor::zeros(parent.shape());
                    for i in 0..r {
                        dp.as_mut_slice()[i * w..(i + 1) * w]
                            .copy_from_slice(&g.as_slice()[i * total + offset..i * total + offset + w]);
                    }
                    grads.push(dp);
                    offset += w;
                }
                grads
            })),
        ))
    }

    /// Columns `[start, start+len)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 || start + len > ta.cols() {
            return Err(Error::BadShape {
                op: "slice_cols",
                shape: ta.shape().to_vec(),
                detail: format!("slice [{start}, {})", start + len),
            });
        }
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; r * len];
        for i in 0..r {
            data[i * len..(i + 1) * len]
                .copy_from_slice(&ta.as_slice()[i * c + start..i * c + start + len]);
        }
        let value = Tensor::new(vec![r, len], data).unwrap();
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(move |g, _out, parents| {
                let mut dx = Tensor::zeros(parents[0].shape());
                for i in 0..r {
                    dx.as_mut_slice()[i * c + start..i * c + start + len]
                        .copy_from_slice(&g.as_slice()[i * len..(i + 1) * len]);
                }
                vec![dx]
            })),
        ))
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(Error::BadShape {
                op: "reshape",
                shape: ta.shape().to_vec(),
                detail: format!("cannot reshape to {shape:?}"),
            });
        }
        let value = Tensor::new(shape.to_vec(), ta.as_slice().to_vec()).unwrap();
        Ok(self.push(
            value,
            vec![a],
            Some(Box::new(|g, _out, parents| {
                vec![Tensor::new(parents[0].shape().to_vec(), g.as_slice().to_vec()).unwrap()]
            })),
        ))
    }

    /// Per-row layer normalization with affine gain/bias (both `[d]`).
    /// Epsilon 1e-5 inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        if tx.rank() != 2 {
            return Err(Error::BadShape {
                op: "layer_norm",
                shape: tx.shape().to_vec(),
                detail: "expected rank-2".into(),
            });
        }
        let (r, d) = (tx.rows(), tx.cols());
        if tg.numel() != d || tb.numel() != d {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(&[r, d]);
        for i in 0..r {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            let orow = &mut out.as_mut_slice()[i * d..(i + 1) * d];
            for j in 0..d {
                orow[j] = (row[j] - mean) * inv * tg.as_slice()[j] + tb.as_slice()[j];
            }
        }
        Ok(self.push(
            out,
            vec![x, gain, bias],
            Some(Box::new(move |g, _out, parents| {
                let px = parents[0];
                let pg = parents[1].as_slice();
                let mut dx = Tensor::zeros(px.shape());
                let mut dgain = Tensor::zeros(parents[1].shape());
                let mut dbias = Tensor::zeros(parents[2].shape());
                for i in 0..r {
                    let row = px.row(i);
                    let grow = &g.as_slice()[i * d..(i + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    // dxhat, then the two coupled mean/variance corrections.
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = grow[j] * pg[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgain.as_mut_slice()[j] += grow[j] * xhat;
                        dbias.as_mut_slice()[j] += grow[j];
                    }
                    let dxrow = &mut dx.as_mut_slice()[i * d..(i + 1) * d];
                    for j in 0..d {
                        let xhat = (row[j] - mean) * inv;
                        let dxhat = grow[j] * pg[j];
                        dxrow[j] = inv / d as f64
                            * (d as f64 * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
                vec![dx, dgain, dbias]
            })),
        ))
    }

    /// Batch normalization over the row axis using batch statistics.
    /// Returns the normalized output plus the biased batch mean/variance so
    /// the caller can fold them into running moments. Requires >= 2 rows.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
    ) -> Result<(Var, Tensor, Tensor)> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::BadShape {
                op: "batch_norm",
                shape: tx.shape().to_vec(),
                detail: "expected rank-2".into(),
            });
        }
        let (r, d) = (tx.rows(), tx.cols());
        if r < 2 {
            return Err(Error::domain(
                "batch_norm",
                "train mode requires a batch of at least 2",
            ));
        }
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: tx.shape().to_vec(),
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for i in 0..r {
            for j in 0..d {
                mean[j] += tx.as_slice()[i * d + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= r as f64;
        }
        for i in 0..r {
            for j in 0..d {
                let c = tx.as_slice()[i * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        for v in var.iter_mut() {
            *v /= r as f64;
        }
        let tg = self.value(gain).as_slice().to_vec();
        let tb = self.value(bias).as_slice().to_vec();
        let mut out = Tensor::zeros(&[r, d]);
        for i in 0..r {
            for j in 0..d {
                let xhat = (self.value(x).as_slice()[i * d + j] - mean[j])
                    / (var[j] + BN_EPS).sqrt();
                out.as_mut_slice()[i * d + j] = xhat * tg[j] + tb[j];
            }
        }
        let mean_t = Tensor::from_vec(mean.clone());
        let var_t = Tensor::from_vec(var.clone());
        let v = self.push(
            out,
            vec![x, gain, bias],
            Some(Box::new(move |g, _out, parents| {
                let px = parents[0].as_slice();
                let pg = parents[1].as_slice();
                let mut dx = Tensor::zeros(parents[0].shape());
                let mut dgain = Tensor::zeros(parents[1].shape());
                let mut dbias = Tensor::zeros(parents[2].shape());
                let rn = r as f64;
                for j in 0..d {
                    let inv = 1.0 / (var[j] + BN_EPS).sqrt();
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for i in 0..r {
                        let xhat = (px[i * d + j] - mean[j]) * inv;
                        let dxhat = g.as_slice()[i * d + j] * pg[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgain.as_mut_slice()[j] += g.as_slice()[i * d + j] * xhat;
                        dbias.as_mut_slice()[j] += g.as_slice()[i * d + j];
                    }
                    for i in 0..r {
                        let xhat = (px[i * d + j] - mean[j]) * inv;
                        let dxhat = g.as_slice()[i * d + j] * pg[j];
                        dx.as_mut_slice()[i * d + j] =
                            inv / rn * (rn * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
                vec![dx, dgain, dbias]
            })),
        );
        Ok((v, mean_t, var_t))
    }

    /// Batch normalization with frozen running moments (inference mode);
    /// purely elementwise per row.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
    ) -> Result<Var> {
        let tx = self.value(x);
        let (r, d) = (tx.rows(), tx.cols());
        if running_mean.numel() != d || running_var.numel() != d {
            return Err(Error::ShapeMismatch {
                op: "batch_norm_eval",
                lhs: tx.shape().to_vec(),
                rhs: running_mean.shape().to_vec(),
            });
        }
        let rm = running_mean.as_slice().to_vec();
        let inv: Vec<f64> = running_var
            .as_slice()
            .iter()
            .map(|&v| 1.0 / (v + BN_EPS).sqrt())
            .collect();
        let tg = self.value(gain).as_slice().to_vec();
        let tb = self.value(bias).as_slice().to_vec();
        let mut out = Tensor::zeros(&[r, d]);
        for i in 0..r {
            for j in 0..d {
                out.as_mut_slice()[i * d + j] =
                    (tx.as_slice()[i * d + j] - rm[j]) * inv[j] * tg[j] + tb[j];
            }
        }
        let rm2 = rm.clone();
        let inv2 = inv.clone();
        Ok(self.push(
            out,
            vec![x, gain, bias],
            Some(Box::new(move |g, _out, parents| {
                let px = parents[0].as_slice();
                let pg = parents[1].as_slice();
                let mut dx = Tensor::zeros(parents[0].shape());
                let mut dgain = Tensor::zeros(parents[1].shape());
                let mut dbias = Tensor::zeros(parents[2].shape());
                for i in 0..r {
                    for j in 0..d {
                        let gv = g.as_slice()[i * d + j];
                        let xhat = (px[i * d + j] - rm2[j]) * inv2[j];
                        dx.as_mut_slice()[i * d + j] = gv * pg[j] * inv2[j];
                        dgain.as_mut_slice()[j] += gv * xhat;
                        dbias.as_mut_slice()[j] += gv;
                    }
                }
                vec![dx, dgain, dbias]
            })),
        ))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn exp_log_inverse_pair() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![0.5, 1.0, 3.25]));
        let l = tape.log(x).unwrap();
        let y = tape.exp(l);
        for (a, b) in tape.value(y).as_slice().iter().zip([0.5, 1.0, 3.25]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 0.0]));
        assert!(tape.log(x).is_err());
    }

    #[test]
    fn div_by_zero_is_domain_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1.0));
        let b = tape.leaf(Tensor::scalar(0.0));
        assert!(matches!(tape.div(a, b), Err(Error::Domain { .. })));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn softmax_closed_form_quarter_three_quarters() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![0.0, 3.0_f64.ln()]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        let out = tape.value(y).as_slice();
        assert!((out[0] - 0.25).abs() < 1e-12);
        assert!((out[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_mask_surrogate_gets_zero_weight() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, 2.0, -1e9]).unwrap());
        let y = tape.softmax_rows(x).unwrap();
        let out = tape.value(y).as_slice();
        assert_eq!(out[2], 0.0);
        assert!((out[0] + out[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 4], vec![7.0; 4]).unwrap());
        let g = tape.leaf(Tensor::ones(&[4]));
        let b = tape.leaf(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for v in tape.value(y).as_slice() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        // mean 2, std 1 -> [-1, 1] up to the epsilon inside the sqrt.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
        let g = tape.leaf(Tensor::ones(&[2]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let y = tape.layer_norm(x, g, b).unwrap();
        let out = tape.value(y).as_slice();
        assert!((out[0] + 1.0).abs() < 1e-3);
        assert!((out[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn batch_norm_train_rejects_single_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3]));
        let g = tape.leaf(Tensor::ones(&[3]));
        let b = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.batch_norm_train(x, g, b).is_err());
    }

    #[test]
    fn batch_norm_eval_subtracts_running_mean() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let g = tape.leaf(Tensor::ones(&[2]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let rm = Tensor::from_vec(vec![1.0, 1.0]);
        let rv = Tensor::from_vec(vec![1.0, 1.0]);
        let y = tape.batch_norm_eval(x, g, b, &rm, &rv).unwrap();
        let out = tape.value(y).as_slice();
        let scale = 1.0 / (1.0 + 1e-5_f64).sqrt();
        for (o, e) in out.iter().zip([0.0, 1.0, 2.0, 3.0]) {
            assert!((o - e * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_train_identity_on_standardized_batch() {
        // Columns already zero-mean unit-variance stay put (up to epsilon).
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap());
        let g = tape.leaf(Tensor::ones(&[2]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let (y, mean, var) = tape.batch_norm_train(x, g, b).unwrap();
        assert_eq!(mean.as_slice(), &[0.0, 0.0]);
        assert_eq!(var.as_slice(), &[1.0, 1.0]);
        for (o, e) in tape.value(y).as_slice().iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((o - e).abs() < 1e-4);
        }
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.softplus(x);
        assert!((tape.value(y).item() - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let cat = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).as_slice(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let back = tape.slice_cols(cat, 1, 2).unwrap();
        assert_eq!(tape.value(back).as_slice(), &[3.0, 4.0, 5.0, 6.0]);
    }
}
