//! Adaptive anisotropic smoothing (AAS): a mask-invariant projector that
//! pulls unobserved cells toward a regime-gated blend of two
//! characteristic-aligned Gaussian smoothings, followed by an optional
//! first-order transport-residual correction.
//!
//! Observed cells are never touched, so the projector commutes with the
//! observation projection of the sampler.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridSpec, ObservationMask, SpeedField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsParams {
    /// normalized speed separating free flow from congestion
    pub v_thr: f32,
    /// width of the tanh regime gate, normalized speed
    pub gate_beta: f32,
    /// free-flow characteristic speed, ft/s (forward)
    pub c_free_phys: f32,
    /// congested characteristic speed, ft/s (backward)
    pub c_cong_phys: f32,
    pub alpha_smooth: f32,
    pub alpha_char: f32,
    /// kernel std across the characteristic direction, cells
    pub sigma_par: f32,
    /// kernel std along time, slices
    pub sigma_t: f32,
    pub kernel_halfwidth: usize,
    pub transport_correction: bool,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            v_thr: 0.55,
            gate_beta: 0.08,
            c_free_phys: 80.0,
            c_cong_phys: -15.0,
            alpha_smooth: 0.5,
            alpha_char: 0.05,
            sigma_par: 0.5,
            sigma_t: 1.5,
            kernel_halfwidth: 4,
            transport_correction: true,
        }
    }
}

impl PhysicsParams {
    /// Both step sizes zero: the projector is the identity map.
    pub fn zero_strength() -> Self {
        PhysicsParams {
            alpha_smooth: 0.0,
            alpha_char: 0.0,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.gate_beta > 0.0) {
            return Err(Error::arg("gate_beta must be positive"));
        }
        if !(self.c_free_phys > 0.0 && self.c_cong_phys < 0.0) {
            return Err(Error::arg("need c_free_phys > 0 > c_cong_phys"));
        }
        if !((0.0..=1.0).contains(&self.alpha_smooth) && self.alpha_char >= 0.0) {
            return Err(Error::arg(
                "need alpha_smooth in [0, 1] and alpha_char >= 0",
            ));
        }
        if self.alpha_smooth < 5.0 * self.alpha_char {
            return Err(Error::arg("alpha_smooth must be at least 5 * alpha_char"));
        }
        if !(self.sigma_par > 0.0 && self.sigma_t > 0.0) || self.kernel_halfwidth < 1 {
            return Err(Error::arg(
                "kernel widths must be positive and halfwidth >= 1",
            ));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.alpha_smooth == 0.0 && (self.alpha_char == 0.0 || !self.transport_correction)
    }
}

/// Normalized `(2H+1) x (2H+1)` stencil indexed `[[ds + H, dtau + H]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnisoKernel {
    pub weights: Array2<f32>,
    /// characteristic slope, cells per slice
    pub slope: f32,
}

impl AnisoKernel {
    pub fn halfwidth(&self) -> usize {
        self.weights.nrows() / 2
    }
}

/// `0.5 (1 + tanh((v - v_thr) / beta))`, elementwise.
pub fn soft_gate(v: &Array2<f32>, v_thr: f32, gate_beta: f32) -> Array2<f32> {
    v.mapv(|x| 0.5 * (1.0 + ((x - v_thr) / gate_beta).tanh()))
}

/// Physical speed (ft/s) to cells per time slice.
pub fn char_to_grid(c_phys: f32, grid: &GridSpec) -> f32 {
    c_phys * grid.dt / grid.dx
}

/// Gaussian sheared along `ds = c dtau`:
/// `w ∝ exp(-(ds - c dtau)² / 2σ_par² - dtau² / 2σ_t²)`.
pub fn build_kernel(c: f32, sigma_par: f32, sigma_t: f32, halfwidth: usize) -> AnisoKernel {
    let h = halfwidth as isize;
    let n = 2 * halfwidth + 1;
    let (sp, st) = (sigma_par as f64, sigma_t as f64);
    let raw = Array2::from_shape_fn((n, n), |(i, j)| {
        let ds = (i as isize - h) as f64;
        let dtau = (j as isize - h) as f64;
        let along = ds - c as f64 * dtau;
        (-(along * along) / (2.0 * sp * sp) - dtau * dtau / (2.0 * st * st)).exp()
    });
    let total: f64 = raw.sum();
    AnisoKernel {
        weights: raw.mapv(|w| (w / total) as f32),
        slope: c,
    }
}

/// 2-D correlation with replicate-edge padding:
/// `out[s, t] = Σ w[ds, dtau] v[s + ds, t + dtau]`.
pub fn convolve(v: &Array2<f32>, k: &AnisoKernel) -> Array2<f32> {
    let (ns, nt) = v.dim();
    let h = k.halfwidth();
    let (ps, pt) = (ns + 2 * h, nt + 2 * h);
    let padded = Array2::from_shape_fn((ps, pt), |(i, j)| {
        let s = (i as isize - h as isize).clamp(0, ns as isize - 1) as usize;
        let t = (j as isize - h as isize).clamp(0, nt as isize - 1) as usize;
        v[[s, t]]
    });
    let src = padded.as_slice().expect("standard layout");
    let w = k.weights.as_standard_layout();
    let w = w.as_slice().expect("standard layout");
    let n = 2 * h + 1;
    let mut out = Array2::<f32>::zeros((ns, nt));
    for s in 0..ns {
        let row = out.row_mut(s).into_slice().expect("contiguous row");
        for i in 0..n {
            let src_row = &src[(s + i) * pt..(s + i + 1) * pt];
            for j in 0..n {
                let wij = w[i * n + j];
                if wij == 0.0 {
                    continue;
                }
                for (o, &x) in row.iter_mut().zip(&src_row[j..j + nt]) {
                    *o += wij * x;
                }
            }
        }
    }
    out
}

/// `p ⊙ vf + (1 - p) ⊙ vc` with both smoothings computed from `v`.
pub fn blended_surrogate(
    v: &Array2<f32>,
    p_free: &Array2<f32>,
    kf: &AnisoKernel,
    kc: &AnisoKernel,
) -> Array2<f32> {
    let vf = convolve(v, kf);
    let vc = convolve(v, kc);
    Zip::from(p_free)
        .and(&vf)
        .and(&vc)
        .map_collect(|&p, &f, &c| p * f + (1.0 - p) * c)
}

/// `R[s,t] = (v[s,t] - v[s,t-1]) + c[s,t] (v[s,t] - v[s-1,t])`; zero on the
/// `s = 0` and `t = 0` edges.
pub fn transport_residual(v: &Array2<f32>, c_loc: &Array2<f32>) -> Array2<f32> {
    let (ns, nt) = v.dim();
    let mut r = Array2::<f32>::zeros((ns, nt));
    for s in 1..ns {
        for t in 1..nt {
            let x = v[[s, t]];
            r[[s, t]] = (x - v[[s, t - 1]]) + c_loc[[s, t]] * (x - v[[s - 1, t]]);
        }
    }
    r
}

/// A mask-invariant map on the unobserved subspace. Implementations must
/// return the input unchanged wherever the mask is 1.
pub trait Projector {
    fn project(&self, v: &Array2<f32>, m: &ObservationMask) -> Array2<f32>;
}

/// AAS with kernels prebuilt for one grid.
#[derive(Clone, Debug)]
pub struct AasProjector {
    params: PhysicsParams,
    c_free: f32,
    c_cong: f32,
    k_free: AnisoKernel,
    k_cong: AnisoKernel,
}

impl AasProjector {
    pub fn new(params: PhysicsParams, grid: &GridSpec) -> Result<Self> {
        params.check()?;
        let c_free = char_to_grid(params.c_free_phys, grid);
        let c_cong = char_to_grid(params.c_cong_phys, grid);
        let k_free = build_kernel(
            c_free,
            params.sigma_par,
            params.sigma_t,
            params.kernel_halfwidth,
        );
        let k_cong = build_kernel(
            c_cong,
            params.sigma_par,
            params.sigma_t,
            params.kernel_halfwidth,
        );
        Ok(AasProjector {
            params,
            c_free,
            c_cong,
            k_free,
            k_cong,
        })
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn kernels(&self) -> (&AnisoKernel, &AnisoKernel) {
        (&self.k_free, &self.k_cong)
    }
}

impl Projector for AasProjector {
    fn project(&self, v: &Array2<f32>, m: &ObservationMask) -> Array2<f32> {
        let p = &self.params;
        if p.is_identity() {
            return v.clone();
        }
        let bits = m.bits();
        let p_free = soft_gate(v, p.v_thr, p.gate_beta);
        let vs = blended_surrogate(v, &p_free, &self.k_free, &self.k_cong);

        // step 1: relax unobserved cells toward the surrogate
        let a = p.alpha_smooth;
        let mut out =
            Zip::from(v)
                .and(&vs)
                .and(bits)
                .map_collect(|&x, &s, &b| if b == 0 { x - a * (x - s) } else { x });

        // step 2: first-order transport correction, gate reused from V
        if p.transport_correction && p.alpha_char > 0.0 {
            let (cf, cc) = (self.c_free, self.c_cong);
            let c_loc = p_free.mapv(|q| q * cf + (1.0 - q) * cc);
            let r = transport_residual(&out, &c_loc);
            let ac = p.alpha_char;
            Zip::from(&mut out).and(&r).and(bits).for_each(|o, &r, &b| {
                if b == 0 {
                    *o -= ac * r;
                }
            });
        }

        Zip::from(&mut out).and(bits).for_each(|o, &b| {
            if b == 0 {
                *o = o.clamp(0.0, 1.0);
            }
        });
        out
    }
}

/// One AAS pass over a speed field. Observed cells are returned bit-for-bit.
pub fn aas_project(v: &SpeedField, m: &ObservationMask, p: &PhysicsParams) -> Result<SpeedField> {
    v.grid().expect_shape(m.grid().shape())?;
    let proj = AasProjector::new(p.clone(), v.grid())?;
    SpeedField::from_values(*v.grid(), proj.project(v.values(), m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn grid(s: usize, t: usize) -> GridSpec {
        GridSpec::new(s, t, 200.0, 5.0, 110.0).unwrap()
    }

    fn random_field(g: &GridSpec, seed: u64) -> Array2<f32> {
        let mut rng = seeded(seed);
        Array2::from_shape_fn(g.shape(), |_| rng.random::<f32>())
    }

    #[test]
    fn gate_values() {
        let v = Array2::from_elem((4, 4), 0.55f32);
        assert!(soft_gate(&v, 0.55, 0.08).iter().all(|&p| p == 0.5));
        let hi = Array2::from_elem((1, 1), 0.55 + 4.0 * 0.08);
        let p = soft_gate(&hi, 0.55, 0.08)[[0, 0]];
        assert!((p - 0.999_664_7).abs() < 1e-5, "{p}");
        let ramp = Array2::from_shape_fn((1, 50), |(_, j)| j as f32 / 49.0);
        let g = soft_gate(&ramp, 0.55, 0.08);
        assert!(g
            .windows((1, 2))
            .into_iter()
            .all(|w| w[[0, 1]] >= w[[0, 0]]));
    }

    #[test]
    fn characteristic_conversion() {
        let g = grid(64, 64);
        assert_eq!(char_to_grid(0.0, &g), 0.0);
        assert!((char_to_grid(-15.0, &g) + 0.375).abs() < 1e-7);
        assert!(char_to_grid(80.0, &g) > 0.0);
    }

    #[test]
    fn kernel_shape_properties() {
        let k = build_kernel(0.0, 0.8, 1.5, 3);
        let w = &k.weights;
        for i in 0..7 {
            for j in 0..7 {
                assert!((w[[i, j]] - w[[6 - i, j]]).abs() < 1e-7);
                assert!((w[[i, j]] - w[[i, 6 - j]]).abs() < 1e-7);
            }
        }
        for c in [-2.0, -0.375, 0.0, 0.7, 2.0] {
            let k = build_kernel(c, 0.5, 1.5, 4);
            assert!((k.weights.sum() - 1.0).abs() < 1e-6);
            assert!(k.weights.iter().all(|&x| x >= 0.0));
        }
        // sharp kernel along the diagonal
        let k = build_kernel(1.0, 0.3, 2.0, 4);
        for ((i, j), &x) in k.weights.indexed_iter() {
            if i != j {
                assert!(x < 1e-3, "({i},{j}) = {x}");
            }
        }
    }

    #[test]
    fn convolution_basics() {
        let k = build_kernel(-0.375, 0.5, 1.5, 4);
        let c = Array2::from_elem((10, 12), 0.3f32);
        assert!(convolve(&c, &k).iter().all(|&x| (x - 0.3).abs() < 1e-6));

        let mut delta = Array2::zeros((21, 21));
        delta[[10, 10]] = 1.0f32;
        let out = convolve(&delta, &k);
        // correlation reproduces the flipped kernel around the impulse
        for i in 0..9 {
            for j in 0..9 {
                assert!((out[[10 + 4 - i, 10 + 4 - j]] - k.weights[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn blend_bounds() {
        let g = grid(12, 12);
        let v = random_field(&g, 1);
        let kf = build_kernel(2.0, 0.5, 1.5, 4);
        let kc = build_kernel(-0.375, 0.5, 1.5, 4);
        let (vf, vc) = (convolve(&v, &kf), convolve(&v, &kc));
        assert_eq!(
            blended_surrogate(&v, &Array2::ones(g.shape()), &kf, &kc),
            vf
        );
        let half = blended_surrogate(&v, &Array2::from_elem(g.shape(), 0.5), &kf, &kc);
        let p = soft_gate(&v, 0.55, 0.08);
        let vs = blended_surrogate(&v, &p, &kf, &kc);
        for ((idx, &x), &h) in vs.indexed_iter().zip(half.iter()) {
            let (a, b) = (vf[idx], vc[idx]);
            assert!((h - 0.5 * (a + b)).abs() < 1e-6);
            assert!(x >= a.min(b) - 1e-6 && x <= a.max(b) + 1e-6);
        }
    }

    #[test]
    fn residual_cases() {
        let c = Array2::from_elem((6, 6), 0.7f32);
        assert!(transport_residual(&Array2::from_elem((6, 6), 0.4), &c)
            .iter()
            .all(|&r| r == 0.0));
        let a = 0.01f32;
        let ramp = Array2::from_shape_fn((6, 6), |(_, t)| a * t as f32);
        let r = transport_residual(&ramp, &Array2::zeros((6, 6)));
        for ((s, t), &x) in r.indexed_iter() {
            if s == 0 || t == 0 {
                assert_eq!(x, 0.0);
            } else {
                assert!((x - a).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn residual_of_traveling_wave_shrinks_with_refinement() {
        // v = f(s - c t) with a smooth bump; c in grid units is unchanged when
        // both dx and dt are halved, while the bump spans twice as many cells.
        let c = -0.375f32;
        let max_residual = |scale: f32| {
            let n = (48.0 * scale) as usize;
            let width = 4.0 * scale;
            let center = 30.0 * scale;
            let v = Array2::from_shape_fn((n, n), |(s, t)| {
                let x = s as f32 - c * t as f32 - center;
                0.9 - 0.6 * (-(x * x) / (2.0 * width * width)).exp()
            });
            let r = transport_residual(&v, &Array2::from_elem((n, n), c));
            r.iter().fold(0.0f32, |m, &x| m.max(x.abs()))
        };
        let coarse = max_residual(1.0);
        let fine = max_residual(2.0);
        assert!(coarse > 0.0);
        assert!(fine <= 0.5 * coarse, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn projector_fixed_points() {
        let g = grid(16, 16);
        let v = SpeedField::from_values(g, random_field(&g, 2)).unwrap();
        let p = PhysicsParams::default();
        assert_eq!(aas_project(&v, &ObservationMask::ones(g), &p).unwrap(), v);

        let m = ObservationMask::from_fn(g, |s, t| (s + 2 * t) % 5 == 0);
        let c = SpeedField::constant(g, 0.37);
        let mut cur = c.clone();
        for _ in 0..5 {
            cur = aas_project(&cur, &m, &p).unwrap();
            for (&x, &y) in cur.values().iter().zip(c.values()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_hidden_pixel_matches_brute_force() {
        let g = grid(8, 8);
        let v = random_field(&g, 3);
        let p = PhysicsParams {
            alpha_smooth: 0.5,
            alpha_char: 0.0,
            ..Default::default()
        };
        let (hs, ht) = (3usize, 5usize);
        let m = ObservationMask::from_fn(g, |s, t| !(s == hs && t == ht));
        let out = aas_project(&SpeedField::from_values(g, v.clone()).unwrap(), &m, &p).unwrap();

        // independent evaluation in f64, straight from the formulas
        let h = p.kernel_halfwidth as isize;
        let kernel = |c: f64| {
            let mut w = vec![vec![0.0f64; 9]; 9];
            let mut z = 0.0;
            for ds in -h..=h {
                for dt in -h..=h {
                    let a = ds as f64 - c * dt as f64;
                    let x = (-(a * a) / (2.0 * 0.25) - (dt * dt) as f64 / (2.0 * 2.25)).exp();
                    w[(ds + h) as usize][(dt + h) as usize] = x;
                    z += x;
                }
            }
            (w, z)
        };
        let smooth = |c: f64| {
            let (w, z) = kernel(c);
            let mut acc = 0.0;
            for ds in -h..=h {
                for dt in -h..=h {
                    let s = (hs as isize + ds).clamp(0, 7) as usize;
                    let t = (ht as isize + dt).clamp(0, 7) as usize;
                    acc += w[(ds + h) as usize][(dt + h) as usize] * v[[s, t]] as f64;
                }
            }
            acc / z
        };
        let x = v[[hs, ht]] as f64;
        let gate = 0.5 * (1.0 + ((x - 0.55) / 0.08).tanh());
        let surrogate =
            gate * smooth(80.0 * 5.0 / 200.0) + (1.0 - gate) * smooth(-15.0 * 5.0 / 200.0);
        let expected = (0.5 * x + 0.5 * surrogate).clamp(0.0, 1.0);
        assert!((out.values()[[hs, ht]] as f64 - expected).abs() < 1e-6);
        for s in 0..8 {
            for t in 0..8 {
                if (s, t) != (hs, ht) {
                    assert_eq!(out.values()[[s, t]].to_bits(), v[[s, t]].to_bits());
                }
            }
        }
    }

    #[test]
    fn zero_strength_is_identity_and_params_validate() {
        let g = grid(8, 8);
        let v = random_field(&g, 4).mapv(|x| 3.0 * x - 1.0);
        let proj = AasProjector::new(PhysicsParams::zero_strength(), &g).unwrap();
        assert_eq!(proj.project(&v, &ObservationMask::zeros(g)), v);
        let bad = PhysicsParams {
            alpha_smooth: 0.1,
            alpha_char: 0.05,
            ..Default::default()
        };
        assert!(bad.check().is_err());
        let bad = PhysicsParams {
            c_cong_phys: 5.0,
            ..Default::default()
        };
        assert!(bad.check().is_err());
    }
}
