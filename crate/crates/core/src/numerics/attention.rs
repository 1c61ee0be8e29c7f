//! Fused multi-head scaled dot-product self-attention over packed `[q | k | v]`
//! projections, with key padding mask and optional dropout on the attention
//! probabilities. Each (sequence, head) pair runs as small strided products.

use rayon::prelude::*;

use super::scalar::Scalar;

pub(crate) struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub hidden: usize,
}

impl AttnShape {
    fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
    fn prob_block(&self) -> usize {
        self.heads * self.seq * self.seq
    }
}

/// Row-wise masked softmax of `scale * scores` in place. Rows with no valid
/// key become all zero.
fn masked_softmax<T: Scalar>(scores: &mut [T], mask: &[bool], t: usize, scale: T) {
    for row in scores.chunks_mut(t) {
        let mut max = T::neg_infinity();
        for (s, &m) in row.iter_mut().zip(mask) {
            if m {
                *s *= scale;
                max = max.max(*s);
            }
        }
        let mut denom = T::zero();
        for (s, &m) in row.iter_mut().zip(mask) {
            *s = if m { (*s - max).exp() } else { T::zero() };
            denom += *s;
        }
        if denom > T::zero() {
            let inv = T::one() / denom;
            row.iter_mut().for_each(|s| *s *= inv);
        }
    }
}

/// Returns `(output [B*T, H], probs [B, A, T, T])`. `drop` holds per-probability
/// multipliers (0 or 1/(1-p)) when dropout is active.
pub(crate) fn forward<T: Scalar>(
    qkv: &[T],
    key_mask: &[bool],
    drop: Option<&[T]>,
    s: &AttnShape,
) -> (Vec<T>, Vec<T>) {
    let (t, h, h3, d) = (s.seq, s.hidden, 3 * s.hidden, s.head_dim());
    let scale = T::of(1.0 / (d as f64).sqrt());
    let mut out = vec![T::zero(); s.batch * t * h];
    let mut probs = vec![T::zero(); s.batch * s.prob_block()];
    out.par_chunks_mut(t * h)
        .zip(probs.par_chunks_mut(s.prob_block()))
        .enumerate()
        .for_each(|(b, (out_b, probs_b))| {
            let x = &qkv[b * t * h3..(b + 1) * t * h3];
            let mask = &key_mask[b * t..(b + 1) * t];
            let mut pd = vec![T::zero(); t * t];
            let mut oh = vec![T::zero(); t * d];
            for head in 0..s.heads {
                let (qo, ko, vo) = (head * d, h + head * d, 2 * h + head * d);
                let p = &mut probs_b[head * t * t..(head + 1) * t * t];
                T::gemm_view(t, d, t, &x[qo..], (h3, 1), &x[ko..], (1, h3), p);
                masked_softmax(p, mask, t, scale);
                let pv: &[T] = match drop {
                    Some(dm) => {
                        let dm = &dm[b * s.prob_block() + head * t * t..][..t * t];
                        pd.iter_mut().zip(p.iter().zip(dm)).for_each(|(o, (&a, &m))| *o = a * m);
                        &pd
                    }
                    None => p,
                };
                T::gemm_view(t, t, d, pv, (t, 1), &x[vo..], (h3, 1), &mut oh);
                for (i, row) in oh.chunks(d).enumerate() {
                    out_b[i * h + head * d..i * h + head * d + d].copy_from_slice(row);
                }
            }
        });
    (out, probs)
}

pub(crate) fn backward<T: Scalar>(
    qkv: &[T],
    probs: &[T],
    drop: Option<&[T]>,
    dout: &[T],
    s: &AttnShape,
) -> Vec<T> {
    let (t, h, h3, d) = (s.seq, s.hidden, 3 * s.hidden, s.head_dim());
    let scale = T::of(1.0 / (d as f64).sqrt());
    let mut dqkv = vec![T::zero(); qkv.len()];
    dqkv.par_chunks_mut(t * h3).enumerate().for_each(|(b, dx)| {
        let x = &qkv[b * t * h3..(b + 1) * t * h3];
        let go = &dout[b * t * h..(b + 1) * t * h];
        let mut pd = vec![T::zero(); t * t];
        let mut dp = vec![T::zero(); t * t];
        let mut tmp = vec![T::zero(); t * d];
        for head in 0..s.heads {
            let (qo, ko, vo) = (head * d, h + head * d, 2 * h + head * d);
            let p = &probs[b * s.prob_block() + head * t * t..][..t * t];
            let dm = drop.map(|dm| &dm[b * s.prob_block() + head * t * t..][..t * t]);
            let g = &go[head * d..];
            // dV = Pdᵀ · G
            let pv: &[T] = match dm {
                Some(dm) => {
                    pd.iter_mut().zip(p.iter().zip(dm)).for_each(|(o, (&a, &m))| *o = a * m);
                    &pd
                }
                None => p,
            };
            T::gemm_view(t, t, d, pv, (1, t), g, (h, 1), &mut tmp);
            scatter_add(dx, &tmp, vo, h3, d);
            // dP = (G · Vᵀ) ∘ mask
            T::gemm_view(t, d, t, g, (h, 1), &x[vo..], (1, h3), &mut dp);
            if let Some(dm) = dm {
                dp.iter_mut().zip(dm).for_each(|(a, &m)| *a *= m);
            }
            // dS = P ∘ (dP − rowsum(P ∘ dP)) · scale
            for (dprow, prow) in dp.chunks_mut(t).zip(p.chunks(t)) {
                let dot: T = dprow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                for (a, &pp) in dprow.iter_mut().zip(prow) {
                    *a = pp * (*a - dot) * scale;
                }
            }
            T::gemm_view(t, t, d, &dp, (t, 1), &x[ko..], (h3, 1), &mut tmp);
            scatter_add(dx, &tmp, qo, h3, d);
            T::gemm_view(t, t, d, &dp, (1, t), &x[qo..], (h3, 1), &mut tmp);
            scatter_add(dx, &tmp, ko, h3, d);
        }
    });
    dqkv
}

fn scatter_add<T: Scalar>(dx: &mut [T], src: &[T], offset: usize, stride: usize, d: usize) {
    for (i, row) in src.chunks(d).enumerate() {
        let dst = &mut dx[i * stride + offset..i * stride + offset + d];
        dst.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
}
