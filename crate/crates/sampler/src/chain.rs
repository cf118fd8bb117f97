//! Full sampling runs: the smoothing-only baseline, RePaint-style
//! inpainting, and the physics-guided chain.

use ndarray::{Array2, Zip};
use rand::Rng;

use wavefill_core::field::{ObservationMask, SpeedField};
use wavefill_core::observation::Observation;
use wavefill_core::physics::{AasProjector, PhysicsParams, Projector};
use wavefill_core::rng::seeded;
use wavefill_diffusion::{DenoiserModel, MaskConditioning, NoiseSchedule};

use crate::config::{jump_levels, SamplerConfig, Scheme};
use crate::error::{Error, Result};
use crate::steps::{forward_jump, gaussian, project_obs, reverse_step};

/// The mask the denoiser sees: the observation mask for mask-aware priors,
/// all ones for priors that only ever saw complete fields.
pub fn conditioning_mask(model: &DenoiserModel, y: &Observation) -> ObservationMask {
    match model.conditioning {
        MaskConditioning::Observed => y.mask.clone(),
        MaskConditioning::Full => ObservationMask::ones(*y.grid()),
    }
}

/// Iterated smoothing projector. Unobserved cells start at the mean of the
/// observed values (0.5 when nothing is observed).
pub fn sample_aas_only(y: &Observation, p: &PhysicsParams, iters: usize) -> Result<SpeedField> {
    if iters == 0 {
        return Err(Error::arg(
            "the smoothing baseline needs at least one iteration",
        ));
    }
    let proj = AasProjector::new(p.clone(), y.grid())?;
    let n_obs = y.mask.count();
    let fill = if n_obs == 0 {
        0.5
    } else {
        let sum: f64 = Zip::from(&y.y)
            .and(y.mask.bits())
            .fold(0.0, |s, &v, &b| s + if b == 1 { v as f64 } else { 0.0 });
        (sum / n_obs as f64) as f32
    };
    let mut v = project_obs(&Array2::from_elem(y.y.dim(), fill), y)?;
    for _ in 0..iters {
        v = proj.project(&v, &y.mask);
    }
    Ok(SpeedField::from_values(*y.grid(), v)?)
}

pub fn sample_repaint<R: Rng + ?Sized>(
    model: &DenoiserModel,
    y: &Observation,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SpeedField> {
    run_chain(model, y, sched, cfg, None, rng)
}

/// RePaint plus `cfg.phys_repeats` projector passes after every
/// observation projection.
pub fn sample_pma<R: Rng + ?Sized>(
    model: &DenoiserModel,
    y: &Observation,
    sched: &NoiseSchedule,
    p: &PhysicsParams,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SpeedField> {
    let proj = AasProjector::new(p.clone(), y.grid())?;
    run_chain(model, y, sched, cfg, Some(&proj), rng)
}

/// Runs `cfg.scheme` with a generator seeded from `cfg.seed`. The model is
/// required for the diffusion schemes only.
pub fn sample(
    model: Option<&DenoiserModel>,
    y: &Observation,
    sched: &NoiseSchedule,
    p: &PhysicsParams,
    cfg: &SamplerConfig,
) -> Result<SpeedField> {
    let mut rng = seeded(cfg.seed);
    match (cfg.scheme, model) {
        (Scheme::AasOnly, _) => sample_aas_only(y, p, cfg.aas_iters_baseline),
        (Scheme::Repaint, Some(m)) => sample_repaint(m, y, sched, cfg, &mut rng),
        (Scheme::Pma, Some(m)) => sample_pma(m, y, sched, p, cfg, &mut rng),
        (s, None) => Err(Error::arg(format!("scheme {s} needs a trained model"))),
    }
}

fn run_chain<R: Rng + ?Sized>(
    model: &DenoiserModel,
    y: &Observation,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    proj: Option<&AasProjector>,
    rng: &mut R,
) -> Result<SpeedField> {
    let t_steps = sched.t_steps();
    cfg.check(t_steps)?;
    let grid = *y.grid();
    if model.grid().shape() != grid.shape() {
        return Err(Error::arg(format!(
            "model grid {:?} does not match observation grid {:?}",
            model.grid().shape(),
            grid.shape()
        )));
    }
    let cond = conditioning_mask(model, y);

    let step = |z: &Array2<f32>, t: usize, rng: &mut R| -> Result<Array2<f32>> {
        let mut z = project_obs(&reverse_step(model, z, t, &cond, sched, rng)?, y)?;
        if let Some(p) = proj {
            for _ in 0..cfg.phys_repeats {
                z = p.project(&z, &y.mask);
            }
        }
        Ok(z)
    };

    let windows: Vec<usize> = if cfg.jumps_enabled() {
        jump_levels(t_steps, cfg).collect()
    } else {
        Vec::new()
    };
    let mut z = gaussian(grid.shape(), rng);
    for t in (0..t_steps).rev() {
        z = step(&z, t, rng)?;
        // z now sits at level t − 1; resample the window above it
        if t > 0 && windows.binary_search(&(t - 1)).is_ok() {
            let level = t - 1;
            for _ in 1..cfg.resample_rounds {
                z = forward_jump(&z, level, cfg.jump_len, sched, rng)?;
                for s in (level + 1..=level + cfg.jump_len).rev() {
                    z = step(&z, s, rng)?;
                }
            }
        }
    }
    z.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(SpeedField::from_values(grid, project_obs(&z, y)?)?)
}
