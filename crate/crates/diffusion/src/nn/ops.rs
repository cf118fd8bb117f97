//! Layer primitives with hand-written backward passes.
//!
//! Activations are single-sample `[channels, height, width]` buffers in
//! row-major order. Every layer owns offsets into one flat parameter vector;
//! `forward` reads parameters from it and `backward` accumulates into a
//! gradient vector of the same length.

use rand::Rng;

use wavefill_core::rng::WaveRng;

/// `c = a · b` (or `c += a · b`), with `a` logically `m×k` and `b` logically
/// `k×n`. A transposed operand is stored as its transpose in row-major order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above describe in-bounds row-major views of the
    // slices, whose lengths were checked against m, k and n.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Builds the flat parameter vector while layers are constructed.
pub struct ParamAlloc<'a> {
    pub(crate) data: Vec<f32>,
    rng: Option<&'a mut WaveRng>,
}

impl<'a> ParamAlloc<'a> {
    /// With `rng = None` every tensor is zero (used to size a model before
    /// loading parameters).
    pub fn new(rng: Option<&'a mut WaveRng>) -> Self {
        ParamAlloc {
            data: Vec::new(),
            rng,
        }
    }

    fn take(&mut self, n: usize, fill: impl FnMut(&mut Option<&'a mut WaveRng>) -> f32) -> usize {
        let off = self.data.len();
        let mut fill = fill;
        for _ in 0..n {
            let v = fill(&mut self.rng);
            self.data.push(v);
        }
        off
    }

    pub(crate) fn uniform(&mut self, n: usize, bound: f32) -> usize {
        self.take(n, |rng| match rng {
            Some(r) => r.random_range(-bound..=bound),
            None => 0.0,
        })
    }

    pub(crate) fn constant(&mut self, n: usize, v: f32) -> usize {
        self.take(n, |_| v)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub(crate) fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f32) -> f32 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub(crate) fn silu_vec(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| silu(v)).collect()
}

/// `dx = dy ⊙ silu'(x)`.
pub(crate) fn silu_backward(x: &[f32], dy: &[f32]) -> Vec<f32> {
    x.iter().zip(dy).map(|(&x, &d)| d * silu_grad(x)).collect()
}

/// Dense layer on a single vector.
#[derive(Clone, Debug)]
pub struct Linear {
    pub din: usize,
    pub dout: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub(crate) fn new(alloc: &mut ParamAlloc, din: usize, dout: usize) -> Self {
        let bound = 1.0 / (din as f32).sqrt();
        let w = alloc.uniform(din * dout, bound);
        let b = alloc.uniform(dout, bound);
        Linear { din, dout, w, b }
    }

    pub(crate) fn forward(&self, p: &[f32], x: &[f32]) -> Vec<f32> {
        let w = &p[self.w..self.w + self.din * self.dout];
        let mut y = p[self.b..self.b + self.dout].to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &w[o * self.din..(o + 1) * self.din];
            *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>();
        }
        y
    }

    pub(crate) fn backward(&self, p: &[f32], g: &mut [f32], x: &[f32], dy: &[f32]) -> Vec<f32> {
        let mut dx = vec![0.0; self.din];
        for (o, &d) in dy.iter().enumerate() {
            g[self.b + o] += d;
            let base = self.w + o * self.din;
            for i in 0..self.din {
                g[base + i] += d * x[i];
                dx[i] += d * p[base + i];
            }
        }
        dx
    }
}

/// 2-D convolution with zero padding; 3×3 (padding 1) or 1×1 kernels,
/// stride 1 or 2.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    w: usize,
    b: usize,
}

pub(crate) struct ConvCache {
    col: Vec<f32>,
    h: usize,
    w: usize,
}

impl Conv2d {
    pub(crate) fn new(
        alloc: &mut ParamAlloc,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        assert!(k == 1 || k == 3, "only 1x1 and 3x3 kernels");
        let bound = 1.0 / ((cin * k * k) as f32).sqrt();
        let w = alloc.uniform(cout * cin * k * k, bound);
        let b = alloc.uniform(cout, bound);
        Conv2d {
            cin,
            cout,
            k,
            stride,
            w,
            b,
        }
    }

    /// A 1×1 convolution whose weights and bias start at zero.
    pub(crate) fn zeros(alloc: &mut ParamAlloc, cin: usize, cout: usize) -> Self {
        let w = alloc.constant(cout * cin, 0.0);
        let b = alloc.constant(cout, 0.0);
        Conv2d {
            cin,
            cout,
            k: 1,
            stride: 1,
            w,
            b,
        }
    }

    pub(crate) fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.k == 1 {
            ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
        } else {
            ((h + 2 - 3) / self.stride + 1, (w + 2 - 3) / self.stride + 1)
        }
    }

    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Output columns `ox` whose input column `ox·stride + kx − pad` lies
    /// inside `0..w`.
    fn valid_cols(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let pad = self.pad();
        let lo = if kx < pad {
            (pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = ow.min((w + pad - kx).div_ceil(self.stride));
        (lo, hi.max(lo))
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    /// Input row feeding output row `oy` at kernel row `ky`, if any.
    fn source_row(&self, oy: usize, ky: usize, h: usize) -> Option<usize> {
        (oy * self.stride + ky)
            .checked_sub(self.pad())
            .filter(|&iy| iy < h)
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize) -> Vec<f32> {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        if self.k == 1 && self.stride == 1 {
            return x[..self.cin * h * w].to_vec();
        }
        let mut col = vec![0.0f32; self.kdim() * n];
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    let (lo, hi) = self.valid_cols(kx, w, ow);
                    for oy in 0..oh {
                        let Some(iy) = self.source_row(oy, ky, h) else {
                            continue;
                        };
                        let src = &plane[iy * w..(iy + 1) * w];
                        let out = &mut dst[oy * ow..(oy + 1) * ow];
                        if self.stride == 1 {
                            let off = lo + kx - self.pad();
                            out[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        } else {
                            for ox in lo..hi {
                                out[ox] = src[ox * self.stride + kx - self.pad()];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize) -> Vec<f32> {
        if self.k == 1 && self.stride == 1 {
            return col.to_vec();
        }
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let mut x = vec![0.0f32; self.cin * h * w];
        for ci in 0..self.cin {
            let plane = &mut x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &col[row * n..(row + 1) * n];
                    let (lo, hi) = self.valid_cols(kx, w, ow);
                    for oy in 0..oh {
                        let Some(iy) = self.source_row(oy, ky, h) else {
                            continue;
                        };
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        let inp = &src[oy * ow..(oy + 1) * ow];
                        if self.stride == 1 {
                            let off = lo + kx - self.pad();
                            for (d, s) in dst[off..off + hi - lo].iter_mut().zip(&inp[lo..hi]) {
                                *d += s;
                            }
                        } else {
                            for ox in lo..hi {
                                dst[ox * self.stride + kx - self.pad()] += inp[ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub(crate) fn forward(
        &self,
        p: &[f32],
        x: &[f32],
        h: usize,
        w: usize,
    ) -> (Vec<f32>, ConvCache) {
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let col = self.im2col(x, h, w);
        let mut out = vec![0.0f32; self.cout * n];
        for (o, bias) in p[self.b..self.b + self.cout].iter().enumerate() {
            out[o * n..(o + 1) * n].fill(*bias);
        }
        let wts = &p[self.w..self.w + self.cout * self.kdim()];
        gemm(
            self.cout,
            self.kdim(),
            n,
            wts,
            false,
            &col,
            false,
            &mut out,
            true,
        );
        (out, ConvCache { col, h, w })
    }

    pub(crate) fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        cache: &ConvCache,
        dout: &[f32],
    ) -> Vec<f32> {
        let (oh, ow) = self.out_dims(cache.h, cache.w);
        let n = oh * ow;
        let kd = self.kdim();
        for o in 0..self.cout {
            g[self.b + o] += dout[o * n..(o + 1) * n].iter().sum::<f32>();
        }
        // dW += dout · colᵀ
        gemm(
            self.cout,
            n,
            kd,
            dout,
            false,
            &cache.col,
            true,
            &mut g[self.w..self.w + self.cout * kd],
            true,
        );
        // dcol = Wᵀ · dout
        let mut dcol = vec![0.0f32; kd * n];
        gemm(
            kd,
            self.cout,
            n,
            &p[self.w..self.w + self.cout * kd],
            true,
            dout,
            false,
            &mut dcol,
            false,
        );
        self.col2im(&dcol, cache.h, cache.w)
    }
}

/// Group normalization with a per-channel affine transform.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub c: usize,
    pub groups: usize,
    gamma: usize,
    beta: usize,
}

pub(crate) struct NormCache {
    xhat: Vec<f32>,
    rstd: Vec<f32>,
}

const GN_EPS: f32 = 1e-5;

/// Largest group count ≤ 8 that divides `c`.
pub(crate) fn group_count(c: usize) -> usize {
    (1..=8.min(c)).rev().find(|g| c.is_multiple_of(*g)).unwrap_or(1)
}

impl GroupNorm {
    pub(crate) fn new(alloc: &mut ParamAlloc, c: usize) -> Self {
        let gamma = alloc.constant(c, 1.0);
        let beta = alloc.constant(c, 0.0);
        GroupNorm {
            c,
            groups: group_count(c),
            gamma,
            beta,
        }
    }

    pub(crate) fn forward(&self, p: &[f32], x: &[f32], hw: usize) -> (Vec<f32>, NormCache) {
        let cpg = self.c / self.groups;
        let len = cpg * hw;
        let mut xhat = vec![0.0f32; self.c * hw];
        let mut y = vec![0.0f32; self.c * hw];
        let mut rstd = Vec::with_capacity(self.groups);
        for gi in 0..self.groups {
            let span = gi * len..(gi + 1) * len;
            let xs = &x[span.clone()];
            let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / len as f64;
            let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / len as f64;
            let r = (1.0 / (var + GN_EPS as f64).sqrt()) as f32;
            let mean = mean as f32;
            rstd.push(r);
            for ch in gi * cpg..(gi + 1) * cpg {
                let (gm, bt) = (p[self.gamma + ch], p[self.beta + ch]);
                let span = ch * hw..(ch + 1) * hw;
                for ((xh, yv), &v) in xhat[span.clone()]
                    .iter_mut()
                    .zip(&mut y[span.clone()])
                    .zip(&x[span])
                {
                    *xh = (v - mean) * r;
                    *yv = *xh * gm + bt;
                }
            }
        }
        (y, NormCache { xhat, rstd })
    }

    pub(crate) fn backward(
        &self,
        p: &[f32],
        g: &mut [f32],
        cache: &NormCache,
        dy: &[f32],
        hw: usize,
    ) -> Vec<f32> {
        let cpg = self.c / self.groups;
        let len = cpg * hw;
        let mut dx = vec![0.0f32; self.c * hw];
        for ch in 0..self.c {
            let span = ch * hw..(ch + 1) * hw;
            let (mut dg, mut db) = (0.0f32, 0.0f32);
            for i in span {
                dg += dy[i] * cache.xhat[i];
                db += dy[i];
            }
            g[self.gamma + ch] += dg;
            g[self.beta + ch] += db;
        }
        for gi in 0..self.groups {
            let (mut sum_d, mut sum_dx) = (0.0f32, 0.0f32);
            for ch in gi * cpg..(gi + 1) * cpg {
                let gm = p[self.gamma + ch];
                for i in ch * hw..(ch + 1) * hw {
                    let d = dy[i] * gm;
                    sum_d += d;
                    sum_dx += d * cache.xhat[i];
                }
            }
            let r = cache.rstd[gi];
            let inv_n = 1.0 / len as f32;
            for ch in gi * cpg..(gi + 1) * cpg {
                let gm = p[self.gamma + ch];
                for i in ch * hw..(ch + 1) * hw {
                    dx[i] = r * (dy[i] * gm - inv_n * sum_d - cache.xhat[i] * inv_n * sum_dx);
                }
            }
        }
        dx
    }
}

/// Nearest-neighbour 2× upsampling of a `[c, h, w]` buffer.
pub(crate) fn upsample2(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(ch * oh + y) * ow + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block.
pub(crate) fn upsample2_backward(dy: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                dx[(ch * h + y / 2) * w + xx / 2] += dy[(ch * oh + y) * ow + xx];
            }
        }
    }
    dx
}

/// Sinusoidal embedding of a (possibly fractional) timestep.
pub(crate) fn timestep_embedding(t: f32, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin() as f32;
        out[half + i] = arg.cos() as f32;
    }
    out
}
