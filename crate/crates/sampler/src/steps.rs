//! The three elementary moves of the constrained reverse process.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use wavefill_core::field::ObservationMask;
use wavefill_core::observation::Observation;
use wavefill_diffusion::{DenoiserModel, NoiseSchedule};

use crate::error::{Error, Result};

pub(crate) fn gaussian<R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<f32> {
    Array2::from_shape_simple_fn(shape, || rng.sample::<f32, _>(StandardNormal))
}

fn check_step(t: usize, sched: &NoiseSchedule) -> Result<()> {
    if t >= sched.t_steps() {
        return Err(Error::arg(format!(
            "step {t} outside schedule of {} steps",
            sched.t_steps()
        )));
    }
    Ok(())
}

/// One ancestral step from noise level `t` to `t − 1` (to the clean
/// estimate when `t = 0`, which adds no noise). `cond` is the mask the
/// denoiser is conditioned on.
pub fn reverse_step<R: Rng + ?Sized>(
    model: &DenoiserModel,
    z: &Array2<f32>,
    t: usize,
    cond: &ObservationMask,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array2<f32>> {
    check_step(t, sched)?;
    let eta = model.predict(z, t, cond)?;
    let beta = sched.beta(t);
    let inv_sqrt_alpha = (1.0 / (1.0 - beta).sqrt()) as f32;
    let coef = (beta / (1.0 - sched.alpha_bar(t)).sqrt()) as f32;
    let mut out = Zip::from(z)
        .and(&eta)
        .map_collect(|&x, &e| inv_sqrt_alpha * (x - coef * e));
    if t > 0 {
        let sd = sched.posterior_variance(t).sqrt() as f32;
        let xi = gaussian(z.dim(), rng);
        Zip::from(&mut out).and(&xi).for_each(|o, &x| *o += sd * x);
    }
    if let Some(bad) = out.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            step: t,
            msg: format!("reverse step produced {bad}"),
        });
    }
    Ok(out)
}

/// Overwrites observed cells with their measurements.
pub fn project_obs(z: &Array2<f32>, y: &Observation) -> Result<Array2<f32>> {
    y.grid().expect_shape(z.dim())?;
    let mut out = z.clone();
    Zip::from(&mut out)
        .and(&y.y)
        .and(y.mask.bits())
        .for_each(|o, &v, &b| {
            if b == 1 {
                *o = v;
            }
        });
    Ok(out)
}

/// Re-noises a state at level `t` to level `t + j`:
/// `z' = √r z + √(1−r) ξ` with `r = ᾱ_{t+j} / ᾱ_t`.
pub fn forward_jump<R: Rng + ?Sized>(
    z: &Array2<f32>,
    t: usize,
    j: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Array2<f32>> {
    if t + j >= sched.t_steps() {
        return Err(Error::arg(format!(
            "jump from {t} by {j} leaves the {}-step schedule",
            sched.t_steps()
        )));
    }
    if j == 0 {
        return Ok(z.clone());
    }
    let r = jump_ratio(t, j, sched);
    let (a, b) = (r.sqrt() as f32, (1.0 - r).sqrt() as f32);
    let xi = gaussian(z.dim(), rng);
    Ok(Zip::from(z).and(&xi).map_collect(|&x, &e| a * x + b * e))
}

/// `ᾱ_{t+j} / ᾱ_t`, the signal retained by a jump of `j` steps.
pub fn jump_ratio(t: usize, j: usize, sched: &NoiseSchedule) -> f64 {
    sched.alpha_bar(t + j) / sched.alpha_bar(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wavefill_core::field::GridSpec;
    use wavefill_core::rng::seeded;
    use wavefill_diffusion::ArchDescriptor;

    fn grid() -> GridSpec {
        GridSpec::new(8, 8, 200.0, 5.0, 110.0).unwrap()
    }

    /// A freshly built model has a zero-initialized output head, so it
    /// predicts η̂ = 0 everywhere.
    fn zero_model() -> DenoiserModel {
        DenoiserModel::new(ArchDescriptor::tiny(), grid(), 3).unwrap()
    }

    #[test]
    fn zero_predictor_at_step_zero_is_a_rescale() {
        let sched = NoiseSchedule::default();
        let mut rng = seeded(1);
        let z = gaussian((8, 8), &mut rng);
        let out = reverse_step(
            &zero_model(),
            &z,
            0,
            &ObservationMask::ones(grid()),
            &sched,
            &mut rng,
        )
        .unwrap();
        let s = (1.0 / (1.0 - 1e-4f64).sqrt()) as f32;
        for (a, b) in out.iter().zip(&z) {
            assert_eq!(*a, s * b);
        }
    }

    #[test]
    fn reverse_step_is_seed_deterministic() {
        let sched = NoiseSchedule::default();
        let model = zero_model();
        let z = gaussian((8, 8), &mut seeded(2));
        let m = ObservationMask::zeros(grid());
        let a = reverse_step(&model, &z, 250, &m, &sched, &mut seeded(9)).unwrap();
        let b = reverse_step(&model, &z, 250, &m, &sched, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(reverse_step(&model, &z, 500, &m, &sched, &mut seeded(9)).is_err());
    }

    #[test]
    fn zero_jump_is_identity_and_ratios_are_fractions() {
        let sched = NoiseSchedule::default();
        let z = gaussian((8, 8), &mut seeded(4));
        assert_eq!(forward_jump(&z, 100, 0, &sched, &mut seeded(5)).unwrap(), z);
        assert!(forward_jump(&z, 495, 5, &sched, &mut seeded(5)).is_err());
        for t in [0, 10, 250, 480] {
            let r = jump_ratio(t, 10, &sched);
            assert!(r > 0.0 && r < 1.0, "t={t}: {r}");
        }
    }
}
