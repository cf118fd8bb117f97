//! Variance-preserving noise schedule and the closed-form forward process.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_T_STEPS: usize = 500;
pub const DEFAULT_BETA0: f64 = 1e-4;
pub const DEFAULT_BETA_T: f64 = 2e-2;

/// Per-step noise levels `β` and their survival products `ᾱ`, kept in f64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// `β_i` linear from `beta0` to `beta_t` over `t_steps` entries.
pub fn linear_beta_schedule(t_steps: usize, beta0: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if t_steps < 2 {
        return Err(Error::arg(format!(
            "schedule needs at least 2 steps, got {t_steps}"
        )));
    }
    if !(0.0 < beta0 && beta0 < beta_t && beta_t < 1.0) {
        return Err(Error::arg(format!(
            "need 0 < beta0 < betaT < 1, got {beta0} and {beta_t}"
        )));
    }
    let last = (t_steps - 1) as f64;
    // the two-sided blend makes both endpoints exact in floating point
    let beta: Vec<f64> = (0..t_steps)
        .map(|i| {
            let f = i as f64 / last;
            beta0 * (1.0 - f) + beta_t * f
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(t_steps);
    let mut acc = 1.0f64;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { beta, alpha_bar })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        linear_beta_schedule(DEFAULT_T_STEPS, DEFAULT_BETA0, DEFAULT_BETA_T)
            .expect("valid defaults")
    }
}

impl NoiseSchedule {
    pub fn t_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Variance of the ancestral reverse step,
    /// `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`; zero at `t = 0`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.beta[t] * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])
        }
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.t_steps() {
            return Err(Error::arg(format!(
                "step {t} outside schedule of {} steps",
                self.t_steps()
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 over the β table, used to tie checkpoints to a schedule.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.beta.len() as u64).to_le_bytes());
        for b in &self.beta {
            h.update(b.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f32> {
    Array2::from_shape_simple_fn(shape, || rng.sample::<f32, _>(StandardNormal))
}

/// Draws `η ~ N(0, I)` and returns `(√ᾱ_t y0 + √(1−ᾱ_t) η, η)`.
pub fn forward_corrupt<R: Rng + ?Sized>(
    y0: &Array2<f32>,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Array2<f32>, Array2<f32>)> {
    sched.check_step(t)?;
    let eta = standard_normal(y0.dim(), rng);
    let yt = corrupt_with(y0, &eta, t, sched);
    Ok((yt, eta))
}

/// Deterministic part of [`forward_corrupt`] for a given `η`.
pub fn corrupt_with(
    y0: &Array2<f32>,
    eta: &Array2<f32>,
    t: usize,
    sched: &NoiseSchedule,
) -> Array2<f32> {
    let a = sched.alpha_bar(t);
    let (sa, sn) = (a.sqrt() as f32, (1.0 - a).sqrt() as f32);
    Zip::from(y0).and(eta).map_collect(|&y, &e| sa * y + sn * e)
}

/// `−η̂ / √(1 − ᾱ_t)`.
pub fn score_from_noise(
    eta_hat: &Array2<f32>,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Array2<f32>> {
    sched.check_step(t)?;
    let inv = (1.0 / (1.0 - sched.alpha_bar(t)).sqrt()) as f32;
    Ok(eta_hat.mapv(|e| -e * inv))
}
