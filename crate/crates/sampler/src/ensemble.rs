use ndarray::Array2;

use wavefill_core::field::SpeedField;
use wavefill_core::observation::Observation;
use wavefill_core::physics::PhysicsParams;
use wavefill_core::rng::substream;
use wavefill_diffusion::{DenoiserModel, NoiseSchedule};

use crate::chain::sample_pma;
use crate::config::SamplerConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub members: Vec<SpeedField>,
    pub mean: SpeedField,
    /// population standard deviation per cell
    pub pixel_std: Array2<f32>,
}

impl EnsembleResult {
    /// Mean and standard deviation of `members`, accumulated in f64. Cells
    /// on which all members agree get exactly that value and zero spread.
    pub fn from_members(members: Vec<SpeedField>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::arg("an ensemble needs at least one member"))?;
        let grid = *first.grid();
        let n = members.len() as f64;
        let mut sum = Array2::<f64>::zeros(grid.shape());
        for m in &members {
            grid.expect_shape(m.values().dim())?;
            sum.zip_mut_with(m.values(), |s, &v| *s += v as f64);
        }
        let mean = sum.mapv(|s| s / n);
        let mut var = Array2::<f64>::zeros(grid.shape());
        for m in &members {
            ndarray::Zip::from(&mut var)
                .and(&mean)
                .and(m.values())
                .for_each(|q, &mu, &v| *q += (v as f64 - mu).powi(2));
        }
        let pixel_std = var.mapv(|q| (q / n).sqrt() as f32);
        let mean = SpeedField::from_values(grid, mean.mapv(|v| v as f32))?;
        Ok(EnsembleResult {
            members,
            mean,
            pixel_std,
        })
    }
}

/// `n` physics-guided samples on independent substreams of `cfg.seed`.
pub fn sample_ensemble(
    model: &DenoiserModel,
    y: &Observation,
    sched: &NoiseSchedule,
    p: &PhysicsParams,
    cfg: &SamplerConfig,
    n: usize,
) -> Result<EnsembleResult> {
    if n == 0 {
        return Err(Error::arg("ensemble size must be at least 1"));
    }
    let members = (0..n as u64)
        .map(|i| sample_pma(model, y, sched, p, cfg, &mut substream(cfg.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    EnsembleResult::from_members(members)
}
