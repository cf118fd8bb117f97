//! Benchmark configuration, read from a TOML file. Every field has a
//! default, so a config only needs to list what it changes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wavefill_core::field::GridSpec;
use wavefill_core::observation::SensorLayout;
use wavefill_core::physics::PhysicsParams;
use wavefill_core::synth::{WaveSceneParams, DEFAULT_POOL_SIZE};
use wavefill_diffusion::{ArchDescriptor, MaskStrategy, TrainConfig};
use wavefill_sampler::{SamplerConfig, Scheme};

use crate::error::{Error, Result};

/// How a denoiser saw its training data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// complete fields (M1)
    Full,
    /// sensor-masked fields, loss on the sensor mask (M2)
    Single,
    /// sensor-masked fields with extra hidden cells (M3)
    Double,
}

impl TrainingMode {
    pub const ALL: [TrainingMode; 3] = [
        TrainingMode::Full,
        TrainingMode::Single,
        TrainingMode::Double,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainingMode::Full => "full",
            TrainingMode::Single => "single",
            TrainingMode::Double => "double",
        }
    }

    pub fn strategy(self) -> MaskStrategy {
        match self {
            TrainingMode::Double => MaskStrategy::DoubleMask,
            _ => MaskStrategy::SingleMask,
        }
    }
}

impl std::fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "m1" => Ok(TrainingMode::Full),
            "single" | "m2" => Ok(TrainingMode::Single),
            "double" | "m3" => Ok(TrainingMode::Double),
            other => Err(Error::config(format!(
                "unknown training mode {other:?} (expected full, single or double)"
            ))),
        }
    }
}

/// One evaluation condition: detector row coverage and probe count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub row_coverage: f64,
    pub lambda: usize,
}

/// One benchmark cell; used to restrict a sweep to a subset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub mode: TrainingMode,
    pub row_coverage: f64,
    pub lambda: usize,
    pub scheme: Scheme,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// master seed for observations and sampling
    pub seed: u64,
    /// placement of detector rows, shared by all samples
    pub layout_seed: u64,
    pub grid: GridSpec,
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub scene: WaveSceneParams,
    /// load the corpus from here instead of generating it
    pub corpus_dir: Option<PathBuf>,
    pub modes: Vec<TrainingMode>,
    pub row_coverages: Vec<f64>,
    pub lambdas: Vec<usize>,
    pub schemes: Vec<Scheme>,
    /// evaluate on the first `n_test_samples` of the test split
    pub n_test_samples: usize,
    /// when set, only these cells are run
    pub cells: Option<Vec<CellSpec>>,
    /// checkpoint path per mode name
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub obs_sigma: f32,
    pub probe_pool_size: usize,
    /// worker threads; 0 uses the available parallelism
    pub threads: usize,
    /// store per-cell wall time; off gives byte-identical reports
    pub record_wall_time: bool,
    pub arch: ArchDescriptor,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub physics: PhysicsParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 0,
            layout_seed: 7,
            grid: GridSpec::desk64(),
            corpus_size: 512,
            corpus_seed: 0,
            scene: WaveSceneParams::default(),
            corpus_dir: None,
            modes: TrainingMode::ALL.to_vec(),
            row_coverages: vec![0.05, 0.15, 0.25],
            lambdas: vec![0, 5, 15, 25],
            schemes: Scheme::ALL.to_vec(),
            n_test_samples: 16,
            cells: None,
            checkpoints: BTreeMap::new(),
            obs_sigma: wavefill_core::observation::DEFAULT_SIGMA,
            probe_pool_size: DEFAULT_POOL_SIZE,
            threads: 0,
            record_wall_time: true,
            arch: ArchDescriptor::desk(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            physics: PhysicsParams::default(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Toml(e) => Error::config(format!("{}: {e}", path.display())),
            other => other,
        })
    }

    pub fn check(&self) -> Result<()> {
        self.grid.check()?;
        if self.n_test_samples == 0 {
            return Err(Error::config("n_test_samples must be at least 1"));
        }
        if let Some(bad) = self
            .row_coverages
            .iter()
            .find(|r| !(0.0..=1.0).contains(*r))
        {
            return Err(Error::config(format!("row coverage {bad} outside [0, 1]")));
        }
        if let Some(bad) = self.lambdas.iter().find(|&&l| l > self.probe_pool_size) {
            return Err(Error::config(format!(
                "probe intensity {bad} exceeds the pool of {}",
                self.probe_pool_size
            )));
        }
        self.arch.check(&self.grid)?;
        self.train.check()?;
        self.physics.check()?;
        for name in self.checkpoints.keys() {
            name.parse::<TrainingMode>()?;
        }
        Ok(())
    }

    /// The cells of the sweep in canonical order.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut cells = match &self.cells {
            Some(c) => c.clone(),
            None => {
                let mut all = Vec::new();
                for &mode in &self.modes {
                    for &row_coverage in &self.row_coverages {
                        for &lambda in &self.lambdas {
                            for &scheme in &self.schemes {
                                all.push(CellSpec {
                                    mode,
                                    row_coverage,
                                    lambda,
                                    scheme,
                                });
                            }
                        }
                    }
                }
                all
            }
        };
        cells.sort_by(|a, b| {
            cell_order(a)
                .partial_cmp(&cell_order(b))
                .expect("coverages are finite")
        });
        cells.dedup();
        cells
    }

    /// Sensor layouts of the evaluation grid; partially observed training
    /// modes train on these.
    pub fn layouts(&self) -> Result<Vec<SensorLayout>> {
        let mut out = Vec::new();
        for &r in &self.row_coverages {
            for &l in &self.lambdas {
                out.push(SensorLayout::new(&self.grid, r, l, self.layout_seed)?);
            }
        }
        if out.is_empty() {
            return Err(Error::config(
                "no row coverages or probe intensities configured",
            ));
        }
        Ok(out)
    }

    /// Layouts a mode trains on: every row for `full`, the evaluation
    /// layouts otherwise.
    pub fn training_layouts(&self, mode: TrainingMode) -> Result<Vec<SensorLayout>> {
        match mode {
            TrainingMode::Full => Ok(vec![SensorLayout::new(
                &self.grid,
                1.0,
                0,
                self.layout_seed,
            )?]),
            _ => self.layouts(),
        }
    }

    pub fn train_config(&self, mode: TrainingMode) -> TrainConfig {
        TrainConfig {
            strategy: mode.strategy(),
            obs_sigma: self.obs_sigma,
            probe_pool_size: self.probe_pool_size,
            ..self.train.clone()
        }
    }

    pub fn checkpoint(&self, mode: TrainingMode) -> Result<&Path> {
        self.checkpoints
            .get(mode.name())
            .map(PathBuf::as_path)
            .ok_or_else(|| {
                Error::config(format!("no checkpoint configured for training mode {mode}"))
            })
    }

    /// SHA-256 over everything that affects the numbers in a report.
    pub fn fingerprint(&self) -> String {
        let mut canon = self.clone();
        canon.checkpoints.clear();
        canon.threads = 0;
        canon.corpus_dir = None;
        let json = serde_json::to_vec(&canon).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn cell_order(c: &CellSpec) -> (TrainingMode, f64, usize, Scheme) {
    (c.mode, c.row_coverage, c.lambda, c.scheme)
}
