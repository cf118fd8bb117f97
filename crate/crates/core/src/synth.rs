//! Synthetic ground truth with backward-propagating congestion bands, corpus
//! management and probe pools integrated through generated fields.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridSpec, SpeedField};
use crate::io;
use crate::observation::{ProbeTrajectory, TrajectorySample};
use crate::rng::substream;

/// Number of candidate probe vehicles generated per scene.
pub const DEFAULT_POOL_SIZE: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveSceneParams {
    /// maximum number of congestion bands per scene
    pub n_waves: usize,
    /// ft/s, negative (waves travel upstream)
    pub wave_speed: f32,
    /// band width in feet
    pub wave_width: f32,
    pub v_free: f32,
    pub v_cong: f32,
    /// tanh edge scale, cells
    pub edge_softness: f32,
    /// std of the additive texture, truncated at three standard deviations
    pub background_noise: f32,
}

impl Default for WaveSceneParams {
    fn default() -> Self {
        WaveSceneParams {
            n_waves: 3,
            wave_speed: -15.0,
            wave_width: 600.0,
            v_free: 0.9,
            v_cong: 0.25,
            edge_softness: 0.75,
            background_noise: 0.02,
        }
    }
}

impl WaveSceneParams {
    pub fn check(&self) -> Result<()> {
        if !(0.0 <= self.v_cong && self.v_cong < self.v_free && self.v_free <= 1.0) {
            return Err(Error::arg("need 0 <= v_cong < v_free <= 1"));
        }
        if !(self.wave_speed < 0.0 && self.wave_width > 0.0) {
            return Err(Error::arg(
                "wave_speed must be negative and wave_width positive",
            ));
        }
        if !(self.edge_softness >= 0.0 && self.background_noise >= 0.0) {
            return Err(Error::arg(
                "edge_softness and background_noise must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Free-flow background with `p.n_waves` congestion bands.
///
/// Band `k` is centered on `s = s0_k + c t` with `c = wave_speed dt / dx`
/// cells per slice; its intercept is drawn so that the band crosses the
/// window. Overlapping bands take the deepest deficit.
pub fn gen_ground_truth<R: Rng + ?Sized>(
    grid: &GridSpec,
    p: &WaveSceneParams,
    rng: &mut R,
) -> Result<SpeedField> {
    p.check()?;
    let c = p.wave_speed * grid.dt / grid.dx;
    let span = grid.s_cells as f32 + c.abs() * (grid.t_cells - 1) as f32;
    let intercepts: Vec<f32> = (0..p.n_waves).map(|_| rng.random::<f32>() * span).collect();
    let half = 0.5 * p.wave_width / grid.dx;
    let soft = p.edge_softness.max(1e-6);
    let depth = p.v_free - p.v_cong;

    let mut values = Array2::from_shape_fn(grid.shape(), |(s, t)| {
        let bump = intercepts
            .iter()
            .map(|&s0| {
                let d = (s as f32 - (s0 + c * t as f32)).abs();
                0.5 * (1.0 + ((half - d) / soft).tanh())
            })
            .fold(0.0f32, f32::max);
        p.v_free - depth * bump
    });
    if p.background_noise > 0.0 {
        for v in values.iter_mut() {
            let z: f32 = rng.sample::<f32, _>(StandardNormal).clamp(-3.0, 3.0);
            *v += p.background_noise * z;
        }
    }
    values.mapv_inplace(|v| v.clamp(0.0, 1.0));
    SpeedField::from_values(*grid, values)
}

/// Vehicles driven through `field` at its local speed with step `dt`.
///
/// Half the vehicles enter at the upstream edge at a uniform time, the rest
/// are already on the road at `t = 0` at a uniform position.
pub fn gen_probe_pool<R: Rng + ?Sized>(
    field: &SpeedField,
    n: usize,
    rng: &mut R,
) -> Vec<ProbeTrajectory> {
    let grid = field.grid();
    let (length, duration) = (grid.length_ft(), grid.duration_s());
    (0..n)
        .map(|i| {
            let (mut time, mut pos) = if rng.random::<bool>() {
                (rng.random::<f32>() * duration, 0.0)
            } else {
                (0.0, rng.random::<f32>() * length)
            };
            let speed_at = |time: f32, pos: f32| {
                let s = ((pos / grid.dx) as usize).min(grid.s_cells - 1);
                let t = ((time / grid.dt) as usize).min(grid.t_cells - 1);
                field.values()[[s, t]] * grid.v_max
            };
            let mut samples = Vec::new();
            loop {
                let v = speed_at(time, pos);
                samples.push(TrajectorySample {
                    time,
                    position: pos,
                    speed: v,
                });
                if time >= duration {
                    break;
                }
                let step = grid.dt.min(duration - time);
                let next = pos + v * step;
                if next >= length {
                    // exit point, reached part-way through the step
                    let frac = if v > 0.0 { (length - pos) / v } else { step };
                    if frac > 0.0 {
                        samples.push(TrajectorySample {
                            time: time + frac,
                            position: length,
                            speed: v,
                        });
                    }
                    break;
                }
                pos = next;
                time += step;
            }
            ProbeTrajectory::new(format!("veh{i:04}"), samples)
                .expect("strictly increasing by construction")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Shuffled 70/10/20 partition of `0..n`.
    pub fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = (0.7 * n as f64).round() as usize;
        let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Split {
            train: idx,
            val,
            test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub grid: GridSpec,
    pub params: WaveSceneParams,
    pub seed: u64,
    pub samples: Vec<SpeedField>,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    grid: GridSpec,
    seed: u64,
    params: WaveSceneParams,
    n_samples: usize,
    split: Split,
}

/// `n` scenes with `0..=p.n_waves` bands each. Sample `i` uses its own
/// substream of `seed`, so scenes do not depend on generation order.
pub fn gen_corpus(n: usize, grid: &GridSpec, p: &WaveSceneParams, seed: u64) -> Result<Corpus> {
    if n < 10 {
        return Err(Error::arg(format!(
            "corpus needs at least 10 samples, got {n}"
        )));
    }
    p.check()?;
    let samples = (0..n)
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let scene = WaveSceneParams {
                n_waves: rng.random_range(0..=p.n_waves),
                ..p.clone()
            };
            gen_ground_truth(grid, &scene, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let split = Split::shuffled(n, &mut substream(seed, u64::MAX - 1));
    Ok(Corpus {
        grid: *grid,
        params: p.clone(),
        seed,
        samples,
        split,
    })
}

impl Corpus {
    pub fn train(&self) -> impl Iterator<Item = &SpeedField> {
        self.split.train.iter().map(|&i| &self.samples[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &SpeedField> {
        self.split.test.iter().map(|&i| &self.samples[i])
    }

    /// Writes `{train,val,test}/NNNN.wfld` and `manifest.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, idx) in [
            ("train", &self.split.train),
            ("val", &self.split.val),
            ("test", &self.split.test),
        ] {
            let sub = dir.join(name);
            fs::create_dir_all(&sub)?;
            for &i in idx {
                io::write_field(&sub.join(format!("{i:04}.wfld")), &self.samples[i])?;
            }
        }
        let manifest = Manifest {
            grid: self.grid,
            seed: self.seed,
            params: self.params.clone(),
            n_samples: self.samples.len(),
            split: self.split.clone(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut samples: Vec<Option<SpeedField>> = vec![None; manifest.n_samples];
        for (name, idx) in [
            ("train", &manifest.split.train),
            ("val", &manifest.split.val),
            ("test", &manifest.split.test),
        ] {
            for &i in idx {
                let path = dir.join(name).join(format!("{i:04}.wfld"));
                let slot = samples
                    .get_mut(i)
                    .ok_or_else(|| Error::Data(format!("split index {i} out of range")))?;
                *slot = Some(io::read_field(&path, &manifest.grid)?);
            }
        }
        let samples = samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| Error::Data(format!("sample {i} missing from every split")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            grid: manifest.grid,
            params: manifest.params,
            seed: manifest.seed,
            samples,
            split: manifest.split,
        })
    }
}
