//! The mask-conditioned denoiser and its parameter container.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use wavefill_core::field::{GridSpec, ObservationMask};
use wavefill_core::rng::seeded;

use crate::error::{Error, Result};
use crate::nn::{ParamAlloc, UNet};

/// Shape of the U-Net. Level `l` runs at resolution `2^-l` with
/// `base_channels * level_multipliers[l]` channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub base_channels: usize,
    pub level_multipliers: Vec<usize>,
    /// 0 disables the bottleneck attention
    pub attention_heads: usize,
    pub time_embed_dim: usize,
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        ArchDescriptor {
            base_channels: 64,
            level_multipliers: vec![1, 2, 4],
            attention_heads: 4,
            time_embed_dim: 128,
        }
    }
}

impl ArchDescriptor {
    /// A compact network for single-core runs.
    pub fn desk() -> Self {
        ArchDescriptor {
            base_channels: 16,
            level_multipliers: vec![1, 2, 4],
            attention_heads: 4,
            time_embed_dim: 64,
        }
    }

    /// Two levels and fewer than 500 parameters; for gradient checks.
    pub fn tiny() -> Self {
        ArchDescriptor {
            base_channels: 1,
            level_multipliers: vec![1, 2],
            attention_heads: 1,
            time_embed_dim: 2,
        }
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        if self.base_channels == 0
            || self.level_multipliers.is_empty()
            || self.level_multipliers.contains(&0)
        {
            return Err(Error::arg("channel counts must be positive"));
        }
        if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "time embedding dim must be even and >= 2, got {}",
                self.time_embed_dim
            )));
        }
        let deepest = self.base_channels * self.level_multipliers.last().unwrap();
        if self.attention_heads > 0 && !deepest.is_multiple_of(self.attention_heads) {
            return Err(Error::arg(format!(
                "{deepest} bottleneck channels do not split into {} heads",
                self.attention_heads
            )));
        }
        let div = 1usize << (self.level_multipliers.len() - 1);
        if !grid.s_cells.is_multiple_of(div) || !grid.t_cells.is_multiple_of(div) {
            return Err(Error::arg(format!(
                "grid {}x{} must be divisible by {div} for {} levels",
                grid.s_cells,
                grid.t_cells,
                self.level_multipliers.len()
            )));
        }
        Ok(())
    }

    /// Number of scalars in the parameter vector.
    pub fn param_count(&self) -> usize {
        let mut alloc = ParamAlloc::new(None);
        UNet::new(&mut alloc, self);
        alloc.len()
    }
}

/// Which mask the network sees at sampling time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskConditioning {
    /// the observation mask, as during mask-aware training
    Observed,
    /// an all-ones mask; for priors trained on fully observed fields
    Full,
}

#[derive(Clone, Debug)]
pub struct DenoiserModel {
    arch: ArchDescriptor,
    grid: GridSpec,
    params: Vec<f32>,
    net: UNet,
    pub conditioning: MaskConditioning,
}

impl DenoiserModel {
    /// Fresh weights from `seed`; the final 1×1 convolution starts at zero.
    pub fn new(arch: ArchDescriptor, grid: GridSpec, seed: u64) -> Result<Self> {
        arch.check(&grid)?;
        let mut rng = seeded(seed);
        let mut alloc = ParamAlloc::new(Some(&mut rng));
        let net = UNet::new(&mut alloc, &arch);
        Ok(DenoiserModel {
            arch,
            grid,
            params: alloc.data,
            net,
            conditioning: MaskConditioning::Observed,
        })
    }

    pub fn from_parameters(arch: ArchDescriptor, grid: GridSpec, params: Vec<f32>) -> Result<Self> {
        arch.check(&grid)?;
        let mut alloc = ParamAlloc::new(None);
        let net = UNet::new(&mut alloc, &arch);
        if params.len() != alloc.len() {
            return Err(Error::arg(format!(
                "architecture needs {} parameters, got {}",
                alloc.len(),
                params.len()
            )));
        }
        Ok(DenoiserModel {
            arch,
            grid,
            params,
            net,
            conditioning: MaskConditioning::Observed,
        })
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn parameters(&self) -> &[f32] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn input(&self, yt: &Array2<f32>, mask: &[f32]) -> Result<Vec<f32>> {
        let shape = self.grid.shape();
        if yt.dim() != shape {
            return Err(Error::Dimension {
                expected: shape,
                found: yt.dim(),
            });
        }
        let mut x = Vec::with_capacity(2 * self.grid.len());
        x.extend(yt.iter());
        x.extend_from_slice(mask);
        Ok(x)
    }

    fn check_mask(&self, m: &ObservationMask) -> Result<()> {
        let shape = self.grid.shape();
        if m.grid().shape() != shape {
            return Err(Error::Dimension {
                expected: shape,
                found: m.grid().shape(),
            });
        }
        Ok(())
    }

    /// Predicted noise for `yt` at step `t`, conditioned on `m`.
    pub fn predict(&self, yt: &Array2<f32>, t: usize, m: &ObservationMask) -> Result<Array2<f32>> {
        self.check_mask(m)?;
        let mask: Vec<f32> = m.as_slice().iter().map(|&b| f32::from(b)).collect();
        let x = self.input(yt, &mask)?;
        let (s, tt) = self.grid.shape();
        let (out, _) = self.net.forward(&self.params, &x, s, tt, t as f32);
        Ok(Array2::from_shape_vec((s, tt), out).expect("network preserves shape"))
    }

    /// Prediction plus the gradient of a scalar loss: `dloss` maps the
    /// prediction to `∂L/∂η̂`, which is backpropagated into `grad`.
    pub(crate) fn predict_and_backprop(
        &self,
        yt: &Array2<f32>,
        t: usize,
        m: &ObservationMask,
        grad: &mut [f32],
        dloss: impl FnOnce(&Array2<f32>) -> Option<Array2<f32>>,
    ) -> Result<Array2<f32>> {
        self.check_mask(m)?;
        let mask: Vec<f32> = m.as_slice().iter().map(|&b| f32::from(b)).collect();
        let x = self.input(yt, &mask)?;
        let (s, tt) = self.grid.shape();
        let (out, cache) = self.net.forward(&self.params, &x, s, tt, t as f32);
        let pred = Array2::from_shape_vec((s, tt), out).expect("network preserves shape");
        if let Some(d) = dloss(&pred) {
            let d = d.as_standard_layout();
            self.net.backward(
                &self.params,
                grad,
                &cache,
                d.as_slice().expect("standard layout"),
            );
        }
        Ok(pred)
    }
}

/// `η̂ = h_θ(y_t, t, m)`.
pub fn denoise_predict(
    model: &DenoiserModel,
    yt: &Array2<f32>,
    t: usize,
    m: &ObservationMask,
) -> Result<Array2<f32>> {
    model.predict(yt, t, m)
}
