//! Batched multi-head attention kernels.
//!
//! Sequences are stacked sample-major: row `b*seq_len + t` is position `t` of
//! sample `b`. Attention never crosses sample blocks, and the whole
//! score/softmax/apply pipeline is a single tape node per call, so a full
//! batch decodes with no per-position tape growth. Masking adds `-1e9` to the
//! disallowed logits before the shared softmax kernel; after max subtraction
//! those weights underflow to exactly zero, which is what makes the causality
//! tests exact.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{softmax_row_inplace, Tensor};
use rayon::prelude::*;

const MASK_NEG: f64 = -1e9;

impl Tape {
    /// Multi-head self-attention within each `seq_len`-row block of
    /// `q/k/v: [batch*seq_len, d]`. With `causal`, position `t` attends only
    /// to positions `<= t` of its own block.
    pub fn self_attention_blocks(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if !tq.same_shape(tk) || !tq.same_shape(tv) {
            return Err(Error::ShapeMismatch {
                op: "self_attention",
                lhs: tq.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let (rows, d) = (tq.rows(), tq.cols());
        if seq_len == 0 || rows % seq_len != 0 || heads == 0 || d % heads != 0 {
            return Err(Error::BadShape {
                op: "self_attention",
                shape: tq.shape().to_vec(),
                detail: format!("rows {rows} / seq {seq_len}, d {d} / heads {heads}"),
            });
        }
        let batch = rows / seq_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut out = Tensor::zeros(&[rows, d]);
        let mut alpha = vec![0.0; batch * heads * seq_len * seq_len];
        let (qs, ks, vs) = (tq.as_slice(), tk.as_slice(), tv.as_slice());
        out.as_mut_slice()
            .par_chunks_mut(seq_len * d)
            .zip(alpha.par_chunks_mut(heads * seq_len * seq_len))
            .enumerate()
            .for_each(|(b, (oblk, ablk))| {
                let base = b * seq_len * d;
                for h in 0..heads {
                    let hoff = h * dh;
                    let amat = &mut ablk[h * seq_len * seq_len..(h + 1) * seq_len * seq_len];
                    for t in 0..seq_len {
                        let qrow = &qs[base + t * d + hoff..base + t * d + hoff + dh];
                        let arow = &mut amat[t * seq_len..(t + 1) * seq_len];
                        for (u, a) in arow.iter_mut().enumerate() {
                            let krow = &ks[base + u * d + hoff..base + u * d + hoff + dh];
                            *a = crate::tensor::dot(qrow, krow) * scale;
                            if causal && u > t {
                                *a += MASK_NEG;
                            }
                        }
                        softmax_row_inplace(arow);
                        let orow = &mut oblk[t * d + hoff..t * d + hoff + dh];
                        for (u, &w) in arow.iter().enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let vrow = &vs[base + u * d + hoff..base + u * d + hoff + dh];
                            for (o, &vv) in orow.iter_mut().zip(vrow) {
                                *o += w * vv;
                            }
                        }
                    }
                }
            });

        Ok(self.push(
            out,
            vec![q, k, v],
            Some(Box::new(move |g, _out, parents| {
                let (pq, pk, pv) = (
                    parents[0].as_slice(),
                    parents[1].as_slice(),
                    parents[2].as_slice(),
                );
                let mut dq = Tensor::zeros(parents[0].shape());
                let mut dk = Tensor::zeros(parents[1].shape());
                let mut dv = Tensor::zeros(parents[2].shape());
                dq.as_mut_slice()
                    .par_chunks_mut(seq_len * d)
                    .zip(dk.as_mut_slice().par_chunks_mut(seq_len * d))
                    .zip(dv.as_mut_slice().par_chunks_mut(seq_len * d))
                    .enumerate()
                    .for_each(|(b, ((dqb, dkb), dvb))| {
                        let base = b * seq_len * d;
                        let ablk = &alpha[b * heads * seq_len * seq_len
                            ..(b + 1) * heads * seq_len * seq_len];
                        let mut dalpha = vec![0.0; seq_len];
                        for h in 0..heads {
                            let hoff = h * dh;
                            let amat =
                                &ablk[h * seq_len * seq_len..(h + 1) * seq_len * seq_len];
                            for t in 0..seq_len {
                                let grow = &g.as_slice()[base + t * d + hoff
                                    ..base + t * d + hoff + dh];
                                let arow = &amat[t * seq_len..(t + 1) * seq_len];
                                // dv[u] += alpha[t,u] * g[t]; dalpha[u] = g[t].v[u]
                                let mut inner = 0.0;
                                for u in 0..seq_len {
                                    let w = arow[u];
                                    if w == 0.0 {
                                        dalpha[u] = 0.0;
                                        continue;
                                    }
                                    let vrow =
                                        &pv[base + u * d + hoff..base + u * d + hoff + dh];
                                    let da = crate::tensor::dot(grow, vrow);
                                    dalpha[u] = da;
                                    inner += da * w;
                                    let dvrow =
                                        &mut dvb[u * d + hoff..u * d + hoff + dh];
                                    for (dvv, &gv) in dvrow.iter_mut().zip(grow) {
                                        *dvv += w * gv;
                                    }
                                }
                                // ds = alpha*(dalpha - inner); dq/dk via ds
                                let qrow =
                                    &pq[base + t * d + hoff..base + t * d + hoff + dh];
                                let dqrow = &mut dqb[t * d + hoff..t * d + hoff + dh];
                                for u in 0..seq_len {
                                    let w = arow[u];
                                    if w == 0.0 {
                                        continue;
                                    }
                                    let ds = w * (dalpha[u] - inner) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let krow =
                                        &pk[base + u * d + hoff..base + u * d + hoff + dh];
                                    let dkrow =
                                        &mut dkb[u * d + hoff..u * d + hoff + dh];
                                    for x in 0..dh {
                                        dqrow[x] += ds * krow[x];
                                        dkrow[x] += ds * qrow[x];
                                    }
                                }
                            }
                        }
                    });
                vec![dq, dk, dv]
            })),
        ))
    }

    /// Multi-head cross-attention: each query row of block `b` attends over
    /// that sample's key/value rows, given as `[start, start+len)` ranges into
    /// `k/v: [n_total, d]`. Weights per query sum to 1 over the sample's rows.
    pub fn cross_attention_blocks(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        ranges: &[(usize, usize)],
        heads: usize,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if !tk.same_shape(tv) || tq.cols() != tk.cols() {
            return Err(Error::ShapeMismatch {
                op: "cross_attention",
                lhs: tq.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let (rows, d) = (tq.rows(), tq.cols());
        let n_total = tk.rows();
        if seq_len == 0 || rows != ranges.len() * seq_len || heads == 0 || d % heads != 0 {
            return Err(Error::BadShape {
                op: "cross_attention",
                shape: tq.shape().to_vec(),
                detail: format!(
                    "rows {rows}, seq {seq_len}, {} ranges, d {d} / heads {heads}",
                    ranges.len()
                ),
            });
        }
        for &(s, l) in ranges {
            if l == 0 || s + l > n_total {
                return Err(Error::domain(
                    "cross_attention",
                    format!("range ({s},{l}) invalid for {n_total} source rows"),
                ));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let batch = ranges.len();

        let mut out = Tensor::zeros(&[rows, d]);
        // Ragged alpha: per sample, heads*seq_len*len weights.
        let mut alpha_off = vec![0usize; batch + 1];
        for (b, &(_, l)) in ranges.iter().enumerate() {
            alpha_off[b + 1] = alpha_off[b] + heads * seq_len * l;
        }
        let mut alpha = vec![0.0; alpha_off[batch]];
        let (qs, ks, vs) = (tq.as_slice(), tk.as_slice(), tv.as_slice());
        for (b, &(start, len)) in ranges.iter().enumerate() {
            let qbase = b * seq_len * d;
            let ablk = &mut alpha[alpha_off[b]..alpha_off[b + 1]];
            for h in 0..heads {
                let hoff = h * dh;
                for t in 0..seq_len {
                    let qrow = &qs[qbase + t * d + hoff..qbase + t * d + hoff + dh];
                    let arow = &mut ablk[(h * seq_len + t) * len..(h * seq_len + t + 1) * len];
                    for (u, a) in arow.iter_mut().enumerate() {
                        let krow =
                            &ks[(start + u) * d + hoff..(start + u) * d + hoff + dh];
                        *a = crate::tensor::dot(qrow, krow) * scale;
                    }
                    softmax_row_inplace(arow);
                    let orow =
                        &mut out.as_mut_slice()[qbase + t * d + hoff..qbase + t * d + hoff + dh];
                    for (u, &w) in arow.iter().enumerate() {
                        let vrow =
                            &vs[(start + u) * d + hoff..(start + u) * d + hoff + dh];
                        for (o, &vv) in orow.iter_mut().zip(vrow) {
                            *o += w * vv;
                        }
                    }
                }
            }
        }

        let ranges_owned = ranges.to_vec();
        Ok(self.push(
            out,
            vec![q, k, v],
            Some(Box::new(move |g, _out, parents| {
                let (pq, pk, pv) = (
                    parents[0].as_slice(),
                    parents[1].as_slice(),
                    parents[2].as_slice(),
                );
                let mut dq = Tensor::zeros(parents[0].shape());
                let mut dk = Tensor::zeros(parents[1].shape());
                let mut dv = Tensor::zeros(parents[2].shape());
                for (b, &(start, len)) in ranges_owned.iter().enumerate() {
                    let qbase = b * seq_len * d;
                    let ablk = &alpha[alpha_off[b]..alpha_off[b + 1]];
                    let mut dalpha = vec![0.0; len];
                    for h in 0..heads {
                        let hoff = h * dh;
                        for t in 0..seq_len {
                            let grow =
                                &g.as_slice()[qbase + t * d + hoff..qbase + t * d + hoff + dh];
                            let arow =
                                &ablk[(h * seq_len + t) * len..(h * seq_len + t + 1) * len];
                            let mut inner = 0.0;
                            for u in 0..len {
                                let vrow = &pv
                                    [(start + u) * d + hoff..(start + u) * d + hoff + dh];
                                let da = crate::tensor::dot(grow, vrow);
                                dalpha[u] = da;
                                inner += da * arow[u];
                                let dvrow = &mut dv.as_mut_slice()
                                    [(start + u) * d + hoff..(start + u) * d + hoff + dh];
                                for (dvv, &gv) in dvrow.iter_mut().zip(grow) {
                                    *dvv += arow[u] * gv;
                                }
                            }
                            let qrow =
                                &pq[qbase + t * d + hoff..qbase + t * d + hoff + dh];
                            let dqrow = &mut dq.as_mut_slice()
                                [qbase + t * d + hoff..qbase + t * d + hoff + dh];
                            for u in 0..len {
                                let ds = arow[u] * (dalpha[u] - inner) * scale;
                                let krow = &pk
                                    [(start + u) * d + hoff..(start + u) * d + hoff + dh];
                                let dkrow = &mut dk.as_mut_slice()
                                    [(start + u) * d + hoff..(start + u) * d + hoff + dh];
                                for x in 0..dh {
                                    dqrow[x] += ds * krow[x];
                                    dkrow[x] += ds * qrow[x];
                                }
                            }
                        }
                    }
                }
                vec![dq, dk, dv]
            })),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::uniform(shape, 1.0, rng)
    }

    #[test]
    fn single_source_row_passes_value_through() {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::from_rows(&[vec![0.1, 0.2], vec![3.0, -1.0]]).unwrap());
        let k = tape.leaf(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap());
        let v = tape.leaf(Tensor::from_rows(&[vec![7.0, -3.0]]).unwrap());
        let out = tape
            .cross_attention_blocks(q, k, v, 2, &[(0, 1)], 1)
            .unwrap();
        assert_eq!(tape.value(out).as_slice(), &[7.0, -3.0, 7.0, -3.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let k = tape.leaf(Tensor::from_rows(&[vec![0.3, 0.3], vec![0.3, 0.3]]).unwrap());
        let v = tape.leaf(Tensor::from_rows(&[vec![2.0, 0.0], vec![4.0, 6.0]]).unwrap());
        let out = tape
            .cross_attention_blocks(q, k, v, 1, &[(0, 2)], 1)
            .unwrap();
        let got = tape.value(out).as_slice();
        assert!((got[0] - 3.0).abs() < 1e-12);
        assert!((got[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn causal_mask_blocks_future_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seq = 5;
        let d = 4;
        let base_q = random_tensor(&[seq, d], &mut rng);
        let k0 = random_tensor(&[seq, d], &mut rng);
        let v0 = random_tensor(&[seq, d], &mut rng);

        let run = |kmod: &Tensor, vmod: &Tensor| {
            let mut tape = Tape::new();
            let q = tape.leaf(base_q.clone());
            let k = tape.leaf(kmod.clone());
            let v = tape.leaf(vmod.clone());
            let out = tape
                .self_attention_blocks(q, k, v, seq, 2, true)
                .unwrap();
            tape.value(out).clone()
        };

        let baseline = run(&k0, &v0);
        // Perturb the last position's key/value; outputs at earlier positions
        // must not move at all.
        let mut k1 = k0.clone();
        let mut v1 = v0.clone();
        for j in 0..d {
            k1.as_mut_slice()[(seq - 1) * d + j] += 13.0;
            v1.as_mut_slice()[(seq - 1) * d + j] -= 5.0;
        }
        let perturbed = run(&k1, &v1);
        for t in 0..seq - 1 {
            for j in 0..d {
                assert_eq!(
                    baseline.as_slice()[t * d + j],
                    perturbed.as_slice()[t * d + j],
                    "leak at position {t}"
                );
            }
        }
    }

    #[test]
    fn attention_matches_unbatched_oracle() {
        // One sample, one head: compare against a direct softmax(QK^T/sqrt d)V.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (seq, d) = (3, 4);
        let tq = random_tensor(&[seq, d], &mut rng);
        let tk = random_tensor(&[seq, d], &mut rng);
        let tv = random_tensor(&[seq, d], &mut rng);

        let mut tape = Tape::new();
        let q = tape.leaf(tq.clone());
        let k = tape.leaf(tk.clone());
        let v = tape.leaf(tv.clone());
        let out = tape.self_attention_blocks(q, k, v, seq, 1, false).unwrap();

        let scale = 1.0 / (d as f64).sqrt();
        for t in 0..seq {
            let mut scores: Vec<f64> = (0..seq)
                .map(|u| crate::tensor::dot(tq.row(t), tk.row(u)) * scale)
                .collect();
            softmax_row_inplace(&mut scores);
            for j in 0..d {
                let want: f64 = (0..seq).map(|u| scores[u] * tv.at2(u, j)).sum();
                assert!((tape.value(out).at2(t, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blocks_do_not_mix_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (seq, d) = (3, 4);
        let a = random_tensor(&[seq, d], &mut rng);
        let b = random_tensor(&[seq, d], &mut rng);

        let solo = |t: &Tensor| {
            let mut tape = Tape::new();
            let q = tape.leaf(t.clone());
            let out = tape.self_attention_blocks(q, q, q, seq, 2, true).unwrap();
            tape.value(out).clone()
        };
        let sa = solo(&a);
        let sb = solo(&b);

        let mut stacked = Vec::new();
        stacked.extend_from_slice(a.as_slice());
        stacked.extend_from_slice(b.as_slice());
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::new(vec![2 * seq, d], stacked).unwrap());
        let out = tape.self_attention_blocks(q, q, q, seq, 2, true).unwrap();
        let got = tape.value(out).as_slice();
        assert_eq!(&got[..seq * d], sa.as_slice());
        assert_eq!(&got[seq * d..], sb.as_slice());
    }
}
