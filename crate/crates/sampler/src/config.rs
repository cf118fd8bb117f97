use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// iterated smoothing projector from a constant start, no diffusion
    #[serde(alias = "aas")]
    AasOnly,
    /// reverse diffusion with observation projection and resampling jumps
    Repaint,
    /// repaint plus the physics projector after every observation projection
    Pma,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::AasOnly, Scheme::Repaint, Scheme::Pma];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::AasOnly => "aas",
            Scheme::Repaint => "repaint",
            Scheme::Pma => "pma",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aas" | "aas_only" => Ok(Scheme::AasOnly),
            "repaint" => Ok(Scheme::Repaint),
            "pma" => Ok(Scheme::Pma),
            other => Err(Error::arg(format!(
                "unknown scheme {other:?} (expected aas, repaint or pma)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub scheme: Scheme,
    /// forward-jump length in schedule steps; 0 disables jumping
    pub jump_len: usize,
    /// a resampling window starts every `jump_every` reverse steps
    pub jump_every: usize,
    /// passes through each window, the first included; 1 disables jumping
    pub resample_rounds: usize,
    pub aas_iters_baseline: usize,
    /// projector applications after each observation projection (pma)
    pub phys_repeats: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            scheme: Scheme::Pma,
            jump_len: 10,
            jump_every: 10,
            resample_rounds: 5,
            aas_iters_baseline: 50,
            phys_repeats: 1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn check(&self, t_steps: usize) -> Result<()> {
        if self.jump_len >= t_steps {
            return Err(Error::arg(format!(
                "jump length {} must be below {t_steps}",
                self.jump_len
            )));
        }
        for (name, v) in [
            ("jump_every", self.jump_every),
            ("resample_rounds", self.resample_rounds),
            ("aas_iters_baseline", self.aas_iters_baseline),
            ("phys_repeats", self.phys_repeats),
        ] {
            if v == 0 {
                return Err(Error::arg(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn jumps_enabled(&self) -> bool {
        self.jump_len > 0 && self.resample_rounds > 1
    }

    /// Denoiser evaluations per sample over a `t_steps` schedule.
    pub fn network_evaluations(&self, t_steps: usize) -> usize {
        if self.scheme == Scheme::AasOnly {
            return 0;
        }
        let windows = if self.jumps_enabled() {
            jump_levels(t_steps, self).count()
        } else {
            0
        };
        t_steps + windows * (self.resample_rounds - 1) * self.jump_len
    }
}

/// Noise levels (after the reverse step at `level + 1`) where a resampling
/// window is opened.
pub(crate) fn jump_levels(t_steps: usize, cfg: &SamplerConfig) -> impl Iterator<Item = usize> + '_ {
    (1..t_steps)
        .filter(move |&t| t % cfg.jump_every == 0 && t - 1 + cfg.jump_len < t_steps)
        .map(|t| t - 1)
}
