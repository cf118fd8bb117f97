//! Mask-conditioned U-Net: residual blocks with additive timestep
//! conditioning, stride-2 downsampling, nearest upsampling with skip
//! concatenation, and an optional linear-attention bottleneck.

use super::attention::{AttnCache, LinearAttention};
use super::ops::{
    silu_backward, silu_vec, timestep_embedding, upsample2, upsample2_backward, Conv2d, ConvCache,
    GroupNorm, Linear, NormCache, ParamAlloc,
};
use crate::model::ArchDescriptor;

#[derive(Clone, Debug)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    temb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

pub(crate) struct ResCache {
    n1: NormCache,
    a1: Vec<f32>,
    c1: ConvCache,
    n2: NormCache,
    a2: Vec<f32>,
    c2: ConvCache,
    skip: Option<ConvCache>,
}

impl ResBlock {
    fn new(alloc: &mut ParamAlloc, cin: usize, cout: usize, temb_dim: usize) -> Self {
        let norm1 = GroupNorm::new(alloc, cin);
        let conv1 = Conv2d::new(alloc, cin, cout, 3, 1);
        let temb = Linear::new(alloc, temb_dim, cout);
        let norm2 = GroupNorm::new(alloc, cout);
        let conv2 = Conv2d::new(alloc, cout, cout, 3, 1);
        let skip = (cin != cout).then(|| Conv2d::new(alloc, cin, cout, 1, 1));
        ResBlock {
            norm1,
            conv1,
            temb,
            norm2,
            conv2,
            skip,
        }
    }

    fn forward(
        &self,
        p: &[f32],
        x: &[f32],
        h: usize,
        w: usize,
        temb: &[f32],
    ) -> (Vec<f32>, ResCache) {
        let n = h * w;
        let (a1, n1) = self.norm1.forward(p, x, n);
        let (mut h1, c1) = self.conv1.forward(p, &silu_vec(&a1), h, w);
        let shift = self.temb.forward(p, temb);
        for (ch, s) in shift.iter().enumerate() {
            h1[ch * n..(ch + 1) * n].iter_mut().for_each(|v| *v += s);
        }
        let (a2, n2) = self.norm2.forward(p, &h1, n);
        let (mut out, c2) = self.conv2.forward(p, &silu_vec(&a2), h, w);
        let skip = match &self.skip {
            Some(conv) => {
                let (s, cache) = conv.forward(p, x, h, w);
                out.iter_mut().zip(&s).for_each(|(o, v)| *o += v);
                Some(cache)
            }
            None => {
                out.iter_mut().zip(x).for_each(|(o, v)| *o += v);
                None
            }
        };
        (
            out,
            ResCache {
                n1,
                a1,
                c1,
                n2,
                a2,
                c2,
                skip,
            },
        )
    }

    fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        cache: &ResCache,
        dout: &[f32],
        hw: usize,
        temb: &[f32],
        dtemb: &mut [f32],
    ) -> Vec<f32> {
        let ds2 = self.conv2.backward(p, g, &cache.c2, dout);
        let da2 = silu_backward(&cache.a2, &ds2);
        let dh1 = self.norm2.backward(p, g, &cache.n2, &da2, hw);
        let dshift: Vec<f32> = dh1.chunks(hw).map(|c| c.iter().sum()).collect();
        let dt = self.temb.backward(p, g, temb, &dshift);
        dtemb.iter_mut().zip(&dt).for_each(|(a, b)| *a += b);
        let ds1 = self.conv1.backward(p, g, &cache.c1, &dh1);
        let da1 = silu_backward(&cache.a1, &ds1);
        let mut dx = self.norm1.backward(p, g, &cache.n1, &da1, hw);
        match (&self.skip, &cache.skip) {
            (Some(conv), Some(sc)) => {
                let ds = conv.backward(p, g, sc, dout);
                dx.iter_mut().zip(&ds).for_each(|(a, b)| *a += b);
            }
            _ => dx.iter_mut().zip(dout).for_each(|(a, b)| *a += b),
        }
        dx
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    arch: ArchDescriptor,
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    down: Vec<ResBlock>,
    downsample: Vec<Conv2d>,
    mid: ResBlock,
    attn: Option<LinearAttention>,
    up_conv: Vec<Conv2d>,
    up: Vec<ResBlock>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
}

/// Everything the backward pass needs from one forward evaluation.
pub(crate) struct UNetCache {
    h: usize,
    w: usize,
    emb: Vec<f32>,
    t1: Vec<f32>,
    t2: Vec<f32>,
    temb: Vec<f32>,
    conv_in: ConvCache,
    down: Vec<ResCache>,
    downsample: Vec<ConvCache>,
    mid: ResCache,
    attn: Option<AttnCache>,
    up_conv: Vec<Option<ConvCache>>,
    up: Vec<Option<ResCache>>,
    out_norm: NormCache,
    out_a: Vec<f32>,
    out_conv: ConvCache,
}

impl UNet {
    /// Lays out all parameters in `alloc`, in a fixed order.
    pub(crate) fn new(alloc: &mut ParamAlloc, arch: &ArchDescriptor) -> Self {
        let td = arch.time_embed_dim;
        let ch: Vec<usize> = arch
            .level_multipliers
            .iter()
            .map(|m| m * arch.base_channels)
            .collect();
        let levels = ch.len();
        let time1 = Linear::new(alloc, td, td);
        let time2 = Linear::new(alloc, td, td);
        let conv_in = Conv2d::new(alloc, 2, ch[0], 3, 1);
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut prev = ch[0];
        for (l, &c) in ch.iter().enumerate() {
            down.push(ResBlock::new(alloc, prev, c, td));
            if l + 1 < levels {
                downsample.push(Conv2d::new(alloc, c, c, 3, 2));
            }
            prev = c;
        }
        let mid = ResBlock::new(alloc, prev, prev, td);
        let attn = (arch.attention_heads > 0)
            .then(|| LinearAttention::new(alloc, prev, arch.attention_heads));
        let mut up_conv = Vec::new();
        let mut up = Vec::new();
        for l in (0..levels).rev() {
            if l + 1 < levels {
                up_conv.push(Conv2d::new(alloc, ch[l + 1], ch[l], 3, 1));
            }
            up.push(ResBlock::new(alloc, 2 * ch[l], ch[l], td));
        }
        up_conv.reverse();
        up.reverse();
        let out_norm = GroupNorm::new(alloc, ch[0]);
        let out_conv = Conv2d::zeros(alloc, ch[0], 1);
        UNet {
            arch: arch.clone(),
            time1,
            time2,
            conv_in,
            down,
            downsample,
            mid,
            attn,
            up_conv,
            up,
            out_norm,
            out_conv,
        }
    }

    fn channels(&self) -> Vec<usize> {
        self.arch
            .level_multipliers
            .iter()
            .map(|m| m * self.arch.base_channels)
            .collect()
    }

    /// `input` is `[2, h, w]` (noisy field, mask); returns the `[h, w]`
    /// prediction and the activation cache.
    pub(crate) fn forward(
        &self,
        p: &[f32],
        input: &[f32],
        h: usize,
        w: usize,
        t: f32,
    ) -> (Vec<f32>, UNetCache) {
        let ch = self.channels();
        let levels = ch.len();
        let emb = timestep_embedding(t, self.arch.time_embed_dim);
        let t1 = self.time1.forward(p, &emb);
        let t2 = self.time2.forward(p, &silu_vec(&t1));
        let temb = silu_vec(&t2);

        let (mut x, conv_in) = self.conv_in.forward(p, input, h, w);
        let mut skips = Vec::with_capacity(levels);
        let mut down = Vec::with_capacity(levels);
        let mut downsample = Vec::with_capacity(levels);
        let (mut hh, mut ww) = (h, w);
        for l in 0..levels {
            let (y, c) = self.down[l].forward(p, &x, hh, ww, &temb);
            down.push(c);
            if l + 1 < levels {
                let (z, c) = self.downsample[l].forward(p, &y, hh, ww);
                downsample.push(c);
                skips.push(y);
                x = z;
                (hh, ww) = self.downsample[l].out_dims(hh, ww);
            } else {
                skips.push(y.clone());
                x = y;
            }
        }
        let (y, mid) = self.mid.forward(p, &x, hh, ww, &temb);
        x = y;
        let attn = self.attn.as_ref().map(|a| {
            let (y, c) = a.forward(p, &x, hh, ww);
            x = y;
            c
        });

        let mut up_conv: Vec<Option<ConvCache>> = (0..levels).map(|_| None).collect();
        let mut up: Vec<Option<ResCache>> = (0..levels).map(|_| None).collect();
        for l in (0..levels).rev() {
            if l + 1 < levels {
                let u = upsample2(&x, ch[l + 1], hh, ww);
                (hh, ww) = (2 * hh, 2 * ww);
                let (y, c) = self.up_conv[l].forward(p, &u, hh, ww);
                up_conv[l] = Some(c);
                x = y;
            }
            x.extend_from_slice(&skips[l]);
            let (y, c) = self.up[l].forward(p, &x, hh, ww, &temb);
            up[l] = Some(c);
            x = y;
        }
        let (out_a, out_norm) = self.out_norm.forward(p, &x, h * w);
        let (out, out_conv) = self.out_conv.forward(p, &silu_vec(&out_a), h, w);
        let cache = UNetCache {
            h,
            w,
            emb,
            t1,
            t2,
            temb,
            conv_in,
            down,
            downsample,
            mid,
            attn,
            up_conv,
            up,
            out_norm,
            out_a,
            out_conv,
        };
        (out, cache)
    }

    /// Accumulates `∂L/∂θ` into `g` given `dout = ∂L/∂output`.
    pub(crate) fn backward(&self, p: &[f32], g: &mut [f32], cache: &UNetCache, dout: &[f32]) {
        let ch = self.channels();
        let levels = ch.len();
        let dims: Vec<(usize, usize)> = (0..levels).map(|l| (cache.h >> l, cache.w >> l)).collect();
        let mut dtemb = vec![0.0f32; self.arch.time_embed_dim];

        let ds = self.out_conv.backward(p, g, &cache.out_conv, dout);
        let da = silu_backward(&cache.out_a, &ds);
        let mut dx = self
            .out_norm
            .backward(p, g, &cache.out_norm, &da, cache.h * cache.w);

        let mut dskips: Vec<Vec<f32>> = Vec::with_capacity(levels);
        for l in 0..levels {
            let (hh, ww) = dims[l];
            let n = hh * ww;
            let rc = cache.up[l].as_ref().expect("forward filled every level");
            let dcat = self.up[l].backward(p, g, rc, &dx, n, &cache.temb, &mut dtemb);
            dskips.push(dcat[ch[l] * n..].to_vec());
            dx = dcat[..ch[l] * n].to_vec();
            if l + 1 < levels {
                let cc = cache.up_conv[l]
                    .as_ref()
                    .expect("forward filled every level");
                let du = self.up_conv[l].backward(p, g, cc, &dx);
                let (h2, w2) = dims[l + 1];
                dx = upsample2_backward(&du, ch[l + 1], h2, w2);
            }
        }

        let (hb, wb) = dims[levels - 1];
        if let (Some(a), Some(c)) = (&self.attn, &cache.attn) {
            dx = a.backward(p, g, c, &dx, hb, wb);
        }
        dx = self
            .mid
            .backward(p, g, &cache.mid, &dx, hb * wb, &cache.temb, &mut dtemb);

        for l in (0..levels).rev() {
            let (hh, ww) = dims[l];
            if l + 1 < levels {
                dx = self.downsample[l].backward(p, g, &cache.downsample[l], &dx);
            }
            dx.iter_mut().zip(&dskips[l]).for_each(|(a, b)| *a += b);
            dx = self.down[l].backward(p, g, &cache.down[l], &dx, hh * ww, &cache.temb, &mut dtemb);
        }
        self.conv_in.backward(p, g, &cache.conv_in, &dx);

        let dt2 = silu_backward(&cache.t2, &dtemb);
        let ds1 = self.time2.backward(p, g, &silu_vec(&cache.t1), &dt2);
        let dt1 = silu_backward(&cache.t1, &ds1);
        self.time1.backward(p, g, &cache.emb, &dt1);
    }
}
