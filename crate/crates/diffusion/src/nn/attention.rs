//! Multi-head linear attention with a residual connection.
//!
//! Queries are softmax-normalized over the feature axis and keys over the
//! spatial axis, so the per-head context is a small `d×d` matrix and the cost
//! is linear in the number of positions.

use super::ops::{gemm, Conv2d, ConvCache, GroupNorm, NormCache, ParamAlloc};

#[derive(Clone, Debug)]
pub struct LinearAttention {
    pub c: usize,
    pub heads: usize,
    norm: GroupNorm,
    qkv: Conv2d,
    out: Conv2d,
}

pub(crate) struct AttnCache {
    norm: NormCache,
    qkv: ConvCache,
    v: Vec<f32>,
    qs: Vec<f32>,
    ks: Vec<f32>,
    ctx: Vec<f32>,
    out: ConvCache,
}

impl LinearAttention {
    pub(crate) fn new(alloc: &mut ParamAlloc, c: usize, heads: usize) -> Self {
        assert!(
            heads >= 1 && c.is_multiple_of(heads),
            "channels must split evenly across heads"
        );
        let norm = GroupNorm::new(alloc, c);
        let qkv = Conv2d::new(alloc, c, 3 * c, 1, 1);
        let out = Conv2d::new(alloc, c, c, 1, 1);
        LinearAttention {
            c,
            heads,
            norm,
            qkv,
            out,
        }
    }

    fn dh(&self) -> usize {
        self.c / self.heads
    }

    pub(crate) fn forward(
        &self,
        p: &[f32],
        x: &[f32],
        h: usize,
        w: usize,
    ) -> (Vec<f32>, AttnCache) {
        let n = h * w;
        let (c, dh) = (self.c, self.dh());
        let scale = 1.0 / (dh as f32).sqrt();
        let (xn, norm) = self.norm.forward(p, x, n);
        let (qkv_out, qkv) = self.qkv.forward(p, &xn, h, w);
        let (q, rest) = qkv_out.split_at(c * n);
        let (k, v) = rest.split_at(c * n);

        let mut qs = vec![0.0f32; c * n];
        let mut ks = vec![0.0f32; c * n];
        let mut ctx = vec![0.0f32; self.heads * dh * dh];
        let mut o = vec![0.0f32; c * n];
        for hd in 0..self.heads {
            let rows = hd * dh..(hd + 1) * dh;
            // query softmax over features, per position
            for pos in 0..n {
                let mx = rows
                    .clone()
                    .map(|d| q[d * n + pos])
                    .fold(f32::NEG_INFINITY, f32::max);
                let z: f32 = rows.clone().map(|d| (q[d * n + pos] - mx).exp()).sum();
                for d in rows.clone() {
                    qs[d * n + pos] = scale * (q[d * n + pos] - mx).exp() / z;
                }
            }
            // key softmax over positions, per feature
            for d in rows.clone() {
                let kr = &k[d * n..(d + 1) * n];
                let mx = kr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let z: f32 = kr.iter().map(|&x| (x - mx).exp()).sum();
                for pos in 0..n {
                    ks[d * n + pos] = (kr[pos] - mx).exp() / z;
                }
            }
            let span = hd * dh * n..(hd + 1) * dh * n;
            let cx = &mut ctx[hd * dh * dh..(hd + 1) * dh * dh];
            // ctx = ks · vᵀ
            gemm(
                dh,
                n,
                dh,
                &ks[span.clone()],
                false,
                &v[span.clone()],
                true,
                cx,
                false,
            );
            // o = ctxᵀ · qs
            gemm(
                dh,
                dh,
                n,
                cx,
                true,
                &qs[span.clone()],
                false,
                &mut o[span.clone()],
                false,
            );
        }
        let (proj, out) = self.out.forward(p, &o, h, w);
        let y = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        (
            y,
            AttnCache {
                norm,
                qkv,
                v: v.to_vec(),
                qs,
                ks,
                ctx,
                out,
            },
        )
    }

    pub(crate) fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        cache: &AttnCache,
        dy: &[f32],
        h: usize,
        w: usize,
    ) -> Vec<f32> {
        let n = h * w;
        let (c, dh) = (self.c, self.dh());
        let scale = 1.0 / (dh as f32).sqrt();
        let d_o = self.out.backward(p, g, &cache.out, dy);

        let mut dqkv = vec![0.0f32; 3 * c * n];
        let (dq, rest) = dqkv.split_at_mut(c * n);
        let (dk, dv) = rest.split_at_mut(c * n);
        let mut dctx = vec![0.0f32; dh * dh];
        let mut dqs = vec![0.0f32; dh * n];
        let mut dks = vec![0.0f32; dh * n];
        for hd in 0..self.heads {
            let span = hd * dh * n..(hd + 1) * dh * n;
            let cx = &cache.ctx[hd * dh * dh..(hd + 1) * dh * dh];
            let (qs, ks, v, dob) = (
                &cache.qs[span.clone()],
                &cache.ks[span.clone()],
                &cache.v[span.clone()],
                &d_o[span.clone()],
            );
            // o = ctxᵀ qs
            gemm(dh, n, dh, qs, false, dob, true, &mut dctx, false);
            gemm(dh, dh, n, cx, false, dob, false, &mut dqs, false);
            // ctx = ks vᵀ
            gemm(dh, dh, n, &dctx, false, v, false, &mut dks, false);
            gemm(
                dh,
                dh,
                n,
                &dctx,
                true,
                ks,
                false,
                &mut dv[span.clone()],
                false,
            );

            for pos in 0..n {
                let dot: f32 = (0..dh)
                    .map(|d| qs[d * n + pos] / scale * dqs[d * n + pos])
                    .sum();
                for d in 0..dh {
                    dq[span.start + d * n + pos] = qs[d * n + pos] * (dqs[d * n + pos] - dot);
                }
            }
            for d in 0..dh {
                let row = d * n..(d + 1) * n;
                let dot: f32 = row.clone().map(|i| ks[i] * dks[i]).sum();
                for i in row {
                    dk[span.start + i] = ks[i] * (dks[i] - dot);
                }
            }
        }
        let dxn = self.qkv.backward(p, g, &cache.qkv, &dqkv);
        let mut dx = self.norm.backward(p, g, &cache.norm, &dxn, n);
        for (a, b) in dx.iter_mut().zip(dy) {
            *a += b;
        }
        dx
    }
}
