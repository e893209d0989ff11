//! Gather/segment primitives for message passing on graphs.
//!
//! Edges are flattened into row lists: an op like [`Tape::segment_softmax`]
//! normalizes per segment (per destination node), which is how attention over
//! variable-size neighborhoods stays a handful of tape nodes regardless of
//! graph size. Segment ids need not be sorted.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Tape {
    /// `out[e] = x[idx[e]]` row gather; backward scatter-adds.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::BadShape {
                op: "gather_rows",
                shape: tx.shape().to_vec(),
                detail: "expected rank-2".into(),
            });
        }
        let (r, d) = (tx.rows(), tx.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::domain(
                "gather_rows",
                format!("index {bad} out of range for {r} rows"),
            ));
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(tx.row(i));
        }
        let value = Tensor::new(vec![idx.len(), d], data).unwrap();
        let idx_owned = idx.to_vec();
        Ok(self.push(
            value,
            vec![x],
            Some(Box::new(move |g, _out, parents| {
                let mut dx = Tensor::zeros(parents[0].shape());
                for (e, &i) in idx_owned.iter().enumerate() {
                    let grow = &g.as_slice()[e * d..(e + 1) * d];
                    let drow = &mut dx.as_mut_slice()[i * d..(i + 1) * d];
                    for (dv, &gv) in drow.iter_mut().zip(grow) {
                        *dv += gv;
                    }
                }
                vec![dx]
            })),
        ))
    }

    /// Per-head row dot products: `out[e,h] = a[e, hs..he] . b[e, hs..he]`
    /// where the columns are split into `heads` equal blocks.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) || ta.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "head_dot",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (r, d) = (ta.rows(), ta.cols());
        if heads == 0 || d % heads != 0 {
            return Err(Error::BadShape {
                op: "head_dot",
                shape: ta.shape().to_vec(),
                detail: format!("{d} columns not divisible into {heads} heads"),
            });
        }
        let dh = d / heads;
        let mut out = Tensor::zeros(&[r, heads]);
        for e in 0..r {
            for h in 0..heads {
                let s = e * d + h * dh;
                out.as_mut_slice()[e * heads + h] =
                    crate::tensor::dot(&ta.as_slice()[s..s + dh], &tb.as_slice()[s..s + dh]);
            }
        }
        Ok(self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g, _out, parents| {
                let (pa, pb) = (parents[0].as_slice(), parents[1].as_slice());
                let mut da = Tensor::zeros(parents[0].shape());
                let mut db = Tensor::zeros(parents[1].shape());
                for e in 0..r {
                    for h in 0..heads {
                        let gv = g.as_slice()[e * heads + h];
                        let s = e * d + h * dh;
                        for t in 0..dh {
                            da.as_mut_slice()[s + t] += gv * pb[s + t];
                            db.as_mut_slice()[s + t] += gv * pa[s + t];
                        }
                    }
                }
                vec![da, db]
            })),
        ))
    }

    /// Softmax within each segment, per column: rows of `scores: [E,H]` are
    /// grouped by `seg[e]` and each (segment, column) group is normalized to
    /// sum 1. Max subtraction per group, same stability story as softmax.
    pub fn segment_softmax(&mut self, scores: Var, seg: &[usize], n_segments: usize) -> Result<Var> {
        let ts = self.value(scores);
        let (r, h) = (ts.rows(), ts.cols());
        if seg.len() != r {
            return Err(Error::BadShape {
                op: "segment_softmax",
                shape: ts.shape().to_vec(),
                detail: format!("{} segment ids for {} rows", seg.len(), r),
            });
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= n_segments) {
            return Err(Error::domain(
                "segment_softmax",
                format!("segment id {bad} out of range {n_segments}"),
            ));
        }
        if !ts.all_finite() {
            return Err(Error::domain("segment_softmax", "non-finite input"));
        }
        let mut maxes = vec![f64::NEG_INFINITY; n_segments * h];
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..h {
                let m = &mut maxes[s * h + c];
                *m = m.max(ts.as_slice()[e * h + c]);
            }
        }
        let mut out = ts.clone();
        let mut sums = vec![0.0; n_segments * h];
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..h {
                let v = (out.as_slice()[e * h + c] - maxes[s * h + c]).exp();
                out.as_mut_slice()[e * h + c] = v;
                sums[s * h + c] += v;
            }
        }
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..h {
                out.as_mut_slice()[e * h + c] /= sums[s * h + c];
            }
        }
        let seg_owned = seg.to_vec();
        Ok(self.push(
            out,
            vec![scores],
            Some(Box::new(move |g, out, parents| {
                // d_score = alpha * (g - sum_over_segment(g * alpha))
                let alpha = out.as_slice();
                let mut inner = vec![0.0; n_segments * h];
                for (e, &s) in seg_owned.iter().enumerate() {
                    for c in 0..h {
                        inner[s * h + c] += g.as_slice()[e * h + c] * alpha[e * h + c];
                    }
                }
                let mut dx = Tensor::zeros(parents[0].shape());
                for (e, &s) in seg_owned.iter().enumerate() {
                    for c in 0..h {
                        dx.as_mut_slice()[e * h + c] = alpha[e * h + c]
                            * (g.as_slice()[e * h + c] - inner[s * h + c]);
                    }
                }
                vec![dx]
            })),
        ))
    }

    /// Attention-weighted segment reduction:
    /// `out[s, hs..he] = sum_{e: seg[e]=s} alpha[e,h] * vals[e, hs..he]`.
    pub fn segment_weighted_rows(
        &mut self,
        alpha: Var,
        vals: Var,
        seg: &[usize],
        n_segments: usize,
    ) -> Result<Var> {
        let (ta, tv) = (self.value(alpha), self.value(vals));
        let (r, h) = (ta.rows(), ta.cols());
        let d = tv.cols();
        if tv.rows() != r || d % h != 0 {
            return Err(Error::ShapeMismatch {
                op: "segment_weighted_rows",
                lhs: ta.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        if seg.len() != r {
            return Err(Error::BadShape {
                op: "segment_weighted_rows",
                shape: ta.shape().to_vec(),
                detail: format!("{} segment ids for {} rows", seg.len(), r),
            });
        }
        let dh = d / h;
        let mut out = Tensor::zeros(&[n_segments, d]);
        for (e, &s) in seg.iter().enumerate() {
            for hh in 0..h {
                let w = ta.as_slice()[e * h + hh];
                let vs = &tv.as_slice()[e * d + hh * dh..e * d + (hh + 1) * dh];
                let os = &mut out.as_mut_slice()[s * d + hh * dh..s * d + (hh + 1) * dh];
                for (o, &v) in os.iter_mut().zip(vs) {
                    *o += w * v;
                }
            }
        }
        let seg_owned = seg.to_vec();
        Ok(self.push(
            out,
            vec![alpha, vals],
            Some(Box::new(move |g, _out, parents| {
                let (pa, pv) = (parents[0].as_slice(), parents[1].as_slice());
                let mut da = Tensor::zeros(parents[0].shape());
                let mut dv = Tensor::zeros(parents[1].shape());
                for (e, &s) in seg_owned.iter().enumerate() {
                    for hh in 0..h {
                        let grow = &g.as_slice()[s * d + hh * dh..s * d + (hh + 1) * dh];
                        let vrow = &pv[e * d + hh * dh..e * d + (hh + 1) * dh];
                        let mut acc = 0.0;
                        let dvrow = &mut dv.as_mut_slice()[e * d + hh * dh..e * d + (hh + 1) * dh];
                        let w = pa[e * h + hh];
                        for t in 0..dh {
                            acc += grow[t] * vrow[t];
                            dvrow[t] = w * grow[t];
                        }
                        da.as_mut_slice()[e * h + hh] = acc;
                    }
                }
                vec![da, dv]
            })),
        ))
    }

    /// Plain segment sum: `out[s] += x[e]` for `seg[e] = s`.
    pub fn segment_sum_rows(&mut self, x: Var, seg: &[usize], n_segments: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, d) = (tx.rows(), tx.cols());
        if seg.len() != r {
            return Err(Error::BadShape {
                op: "segment_sum_rows",
                shape: tx.shape().to_vec(),
                detail: format!("{} segment ids for {} rows", seg.len(), r),
            });
        }
        let mut out = Tensor::zeros(&[n_segments, d]);
        for (e, &s) in seg.iter().enumerate() {
            let xr = tx.row(e);
            let os = &mut out.as_mut_slice()[s * d..(s + 1) * d];
            for (o, &v) in os.iter_mut().zip(xr) {
                *o += v;
            }
        }
        let seg_owned = seg.to_vec();
        Ok(self.push(
            out,
            vec![x],
            Some(Box::new(move |g, _out, parents| {
                let mut dx = Tensor::zeros(parents[0].shape());
                for (e, &s) in seg_owned.iter().enumerate() {
                    dx.as_mut_slice()[e * d..(e + 1) * d]
                        .copy_from_slice(&g.as_slice()[s * d..(s + 1) * d]);
                }
                vec![dx]
            })),
        ))
    }

    /// Arithmetic mean of each segment's rows (pooling node embeddings into
    /// per-graph vectors). Empty segments yield zero rows.
    pub fn segment_mean_rows(&mut self, x: Var, seg: &[usize], n_segments: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, d) = (tx.rows(), tx.cols());
        if seg.len() != r {
            return Err(Error::BadShape {
                op: "segment_mean_rows",
                shape: tx.shape().to_vec(),
                detail: format!("{} segment ids for {} rows", seg.len(), r),
            });
        }
        let mut counts = vec![0usize; n_segments];
        for &s in seg {
            counts[s] += 1;
        }
        let mut out = Tensor::zeros(&[n_segments, d]);
        for (e, &s) in seg.iter().enumerate() {
            let xr = tx.row(e);
            let os = &mut out.as_mut_slice()[s * d..(s + 1) * d];
            for (o, &v) in os.iter_mut().zip(xr) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0 {
                let os = &mut out.as_mut_slice()[s * d..(s + 1) * d];
                for o in os.iter_mut() {
                    *o /= c as f64;
                }
            }
        }
        let seg_owned = seg.to_vec();
        Ok(self.push(
            out,
            vec![x],
            Some(Box::new(move |g, _out, parents| {
                let mut dx = Tensor::zeros(parents[0].shape());
                for (e, &s) in seg_owned.iter().enumerate() {
                    let grow = &g.as_slice()[s * d..(s + 1) * d];
                    let drow = &mut dx.as_mut_slice()[e * d..(e + 1) * d];
                    let c = counts[s] as f64;
                    for (dv, &gv) in drow.iter_mut().zip(grow) {
                        *dv = gv / c;
                    }
                }
                vec![dx]
            })),
        ))
    }
}
